#include "repq/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "repq/errors.hpp"
#include "repq/fusion.hpp"

namespace repq {

namespace {

struct Basic {
    double mean, stddev, min, max;
};

Basic basic_stats(const float* data, std::size_t len) {
    if (len == 0) return {0, 0, 0, 0};
    double sum = 0.0, sumsq = 0.0;
    double lo = data[0], hi = data[0];
    for (std::size_t i = 0; i < len; ++i) {
        const double v = data[i];
        sum += v;
        sumsq += v * v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double mean = sum / static_cast<double>(len);
    const double var = std::max(0.0, sumsq / static_cast<double>(len) - mean * mean);
    return {mean, std::sqrt(var), lo, hi};
}

std::vector<std::uint64_t> histogram64(const std::vector<float>& values, double lo, double hi) {
    std::vector<std::uint64_t> hist(kReportHistBins, 0);
    const double span = hi > lo ? hi - lo : 1.0;
    for (float v : values) {
        int b = static_cast<int>((static_cast<double>(v) - lo) / span * kReportHistBins);
        b = std::clamp(b, 0, kReportHistBins - 1);
        ++hist[static_cast<std::size_t>(b)];
    }
    return hist;
}

LayerReport report_for(int index, const std::string& name, const std::vector<float>& weights) {
    LayerReport r;
    r.index = index;
    r.name = name;
    const Basic s = basic_stats(weights.data(), weights.size());
    r.weight_std = s.stddev;
    r.weight_min = s.min;
    r.weight_max = s.max;
    r.histogram = histogram64(weights, s.min, s.max);
    return r;
}

} // namespace

std::vector<LayerReport> weight_report(const Network& net) {
    std::vector<LayerReport> out;
    for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
        const RepBlock& b = net.blocks[bi];
        std::vector<float> weights(b.w3.weight.vec());
        weights.insert(weights.end(), b.w1.weight.vec().begin(), b.w1.weight.vec().end());
        LayerReport r = report_for(static_cast<int>(bi), "block" + std::to_string(bi), weights);
        if (b.bn3) r.coeff3 = fold_coefficients(*b.bn3);
        if (b.bn1) r.coeff1 = fold_coefficients(*b.bn1);
        if (b.bn0) r.coeff0 = fold_coefficients(*b.bn0);
        if (b.bn_post) r.coeff_post = fold_coefficients(*b.bn_post);
        out.push_back(std::move(r));
    }
    out.push_back(report_for(static_cast<int>(net.blocks.size()), "head", net.head.weight.vec()));
    return out;
}

std::vector<LayerReport> weight_report(const DeployNetwork& net) {
    std::vector<LayerReport> out;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        out.push_back(report_for(static_cast<int>(li), "fused" + std::to_string(li),
                                 net.layers[li].conv.weight.vec()));
    }
    out.push_back(report_for(static_cast<int>(net.layers.size()), "head", net.head.weight.vec()));
    return out;
}

std::vector<ActivationReport> activation_report(Network& net, const Tensor4& batch) {
    ensure_finite(batch, "activation_report batch");
    std::vector<ActivationReport> out;
    Tensor4 cur = batch;
    for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
        RepBlock::ForwardDetail d = net.blocks[bi].forward_detail(cur, RepBlock::Mode::eval);
        ActivationReport r;
        r.block = static_cast<int>(bi);
        const Basic pre = basic_stats(d.pre_activation.data(), d.pre_activation.numel());
        r.pre_min = pre.min;
        r.pre_max = pre.max;
        r.pre_std = pre.stddev;
        for (const auto& [name, t] : d.branches) {
            const Basic s = basic_stats(t.data(), t.numel());
            r.branches.push_back({name, s.mean, s.stddev, s.min, s.max});
        }
        out.push_back(std::move(r));
        cur = std::move(d.output);
    }
    return out;
}

double mse(const Tensor4& a, const Tensor4& b) {
    if (!(a.shape() == b.shape())) throw ConfigError("mse: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        acc += d * d;
    }
    return a.numel() ? acc / static_cast<double>(a.numel()) : 0.0;
}

std::vector<std::pair<int, double>> cumulative_mse(const DeployNetwork& net, const NetQuantParams& qp,
                                                   const std::vector<Tensor4>& batches, bool weights_too) {
    if (batches.empty()) throw ConfigError("cumulative_mse: no batches");
    const int n_layers = net.layer_count();
    std::vector<std::pair<int, double>> out;
    for (int k = 0; k <= n_layers; ++k) {
        double acc = 0.0;
        std::size_t total = 0;
        for (const Tensor4& b : batches) {
            const Tensor4 ref = net.logits(b);
            const Tensor4 got = partially_quantized_forward(net, qp, b, k, weights_too);
            acc += mse(ref, got) * static_cast<double>(ref.numel());
            total += ref.numel();
        }
        out.emplace_back(k, acc / static_cast<double>(total));
    }
    return out;
}

std::vector<double> layer_mse(const DeployNetwork& net, const NetQuantParams& qp,
                              const std::vector<Tensor4>& batches) {
    if (batches.empty()) throw ConfigError("layer_mse: no batches");
    const int n_layers = net.layer_count();
    std::vector<double> acc(static_cast<std::size_t>(n_layers), 0.0);
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_layers), 0);

    for (const Tensor4& b : batches) {
        // FP32 inputs to every layer
        std::vector<Tensor4> inputs;
        Tensor4 t = b;
        for (const FusedConv& f : net.layers) {
            inputs.push_back(t);
            t = f.forward(t);
        }
        inputs.push_back(global_avg_pool(t));

        for (int li = 0; li < n_layers; ++li) {
            const bool is_head = li == n_layers - 1;
            const ConvKernel& base = is_head ? net.head : net.layers[static_cast<std::size_t>(li)].conv;
            const Tensor4& input = inputs[static_cast<std::size_t>(li)];

            Tensor4 ref = conv2d(input, base);
            if (!is_head) ref = relu(ref);

            ConvKernel k = base;
            k.weight = fake_quant(base.weight, qp.layers[static_cast<std::size_t>(li)].weight);
            Tensor4 got = conv2d(fake_quant(input, qp.layers[static_cast<std::size_t>(li)].act_in), k);
            if (!is_head) got = relu(got);

            acc[static_cast<std::size_t>(li)] += mse(ref, got) * static_cast<double>(ref.numel());
            counts[static_cast<std::size_t>(li)] += ref.numel();
        }
    }
    for (int li = 0; li < n_layers; ++li) {
        acc[static_cast<std::size_t>(li)] /= static_cast<double>(counts[static_cast<std::size_t>(li)]);
    }
    return acc;
}

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

nlohmann::json coeff_json(const std::vector<double>& v) { return nlohmann::json(v); }

} // namespace

void export_weight_report(const std::vector<LayerReport>& reports, const std::string& path, ReportFormat fmt) {
    if (fmt == ReportFormat::json) {
        nlohmann::json j = nlohmann::json::array();
        for (const LayerReport& r : reports) {
            j.push_back({{"index", r.index},
                         {"name", r.name},
                         {"weight_std", r.weight_std},
                         {"weight_min", r.weight_min},
                         {"weight_max", r.weight_max},
                         {"histogram", r.histogram},
                         {"coeff3", coeff_json(r.coeff3)},
                         {"coeff1", coeff_json(r.coeff1)},
                         {"coeff0", coeff_json(r.coeff0)},
                         {"coeff_post", coeff_json(r.coeff_post)}});
        }
        write_text(path, j.dump(2) + "\n");
        return;
    }
    std::string csv = "index,name,weight_std,weight_min,weight_max,coeff3_max,coeff1_max,coeff0_max,coeff_post_max\n";
    auto vmax = [](const std::vector<double>& v) {
        return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
    };
    for (const LayerReport& r : reports) {
        char line[512];
        std::snprintf(line, sizeof(line), "%d,%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.index, r.name.c_str(),
                      r.weight_std, r.weight_min, r.weight_max, vmax(r.coeff3), vmax(r.coeff1), vmax(r.coeff0),
                      vmax(r.coeff_post));
        csv += line;
    }
    write_text(path, csv);
}

void export_activation_report(const std::vector<ActivationReport>& reports, const std::string& path,
                              ReportFormat fmt) {
    if (fmt == ReportFormat::json) {
        nlohmann::json j = nlohmann::json::array();
        for (const ActivationReport& r : reports) {
            nlohmann::json branches = nlohmann::json::array();
            for (const BranchStats& b : r.branches) {
                branches.push_back(
                    {{"name", b.name}, {"mean", b.mean}, {"std", b.stddev}, {"min", b.min}, {"max", b.max}});
            }
            j.push_back({{"block", r.block},
                         {"pre_min", r.pre_min},
                         {"pre_max", r.pre_max},
                         {"pre_std", r.pre_std},
                         {"branches", branches}});
        }
        write_text(path, j.dump(2) + "\n");
        return;
    }
    std::string csv = "block,pre_min,pre_max,pre_std,branch,branch_mean,branch_std,branch_min,branch_max\n";
    for (const ActivationReport& r : reports) {
        for (const BranchStats& b : r.branches) {
            char line[512];
            std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%s,%.9g,%.9g,%.9g,%.9g\n", r.block, r.pre_min,
                          r.pre_max, r.pre_std, b.name.c_str(), b.mean, b.stddev, b.min, b.max);
            csv += line;
        }
    }
    write_text(path, csv);
}

void export_mse_report(const std::vector<std::pair<int, double>>& cumulative, const std::vector<double>& local,
                       const std::string& path, ReportFormat fmt) {
    if (fmt == ReportFormat::json) {
        nlohmann::json cum = nlohmann::json::array();
        for (const auto& [k, v] : cumulative) cum.push_back({{"k", k}, {"mse", v}});
        nlohmann::json j = {{"cumulative", cum}, {"per_layer", local}};
        write_text(path, j.dump(2) + "\n");
        return;
    }
    std::string csv = "k,cumulative_mse,layer_mse\n";
    for (std::size_t i = 0; i < cumulative.size(); ++i) {
        char line[256];
        if (i >= 1 && i - 1 < local.size()) {
            std::snprintf(line, sizeof(line), "%d,%.12g,%.12g\n", cumulative[i].first, cumulative[i].second,
                          local[i - 1]);
        } else {
            std::snprintf(line, sizeof(line), "%d,%.12g,\n", cumulative[i].first, cumulative[i].second);
        }
        csv += line;
    }
    write_text(path, csv);
}

} // namespace repq
