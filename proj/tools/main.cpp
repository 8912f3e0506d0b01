// repquant command-line interface: train/fuse/calibrate/quantize/eval/
// analyze/lemma-check over the run-config format documented in the README.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "repq/checkpoint.hpp"
#include "repq/config.hpp"
#include "repq/dataset.hpp"
#include "repq/diagnostics.hpp"
#include "repq/errors.hpp"
#include "repq/fusion.hpp"
#include "repq/ptq.hpp"
#include "repq/qat.hpp"
#include "repq/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

repq::Dataset dataset_from_config(const repq::RunConfig& cfg) {
    repq::Dataset d;
    if (cfg.source == "cifar10") {
        d = repq::load_cifar10(cfg.dir);
    } else {
        d = repq::synth_dataset(cfg.seed, cfg.synth_n, cfg.synth_classes, cfg.synth_size);
    }
    if (cfg.limit > 0 && static_cast<std::size_t>(cfg.limit) < d.size()) {
        d = d.subset(0, static_cast<std::size_t>(cfg.limit));
    }
    return d;
}

repq::OptimConfig optim_from_config(const repq::RunConfig& cfg) {
    repq::OptimConfig o;
    o.lr0 = cfg.lr0;
    o.momentum = cfg.momentum;
    o.weight_decay = cfg.weight_decay;
    o.epochs = cfg.epochs;
    o.batch_size = cfg.batch_size;
    o.seed = cfg.seed;
    o.loss_mode = cfg.loss;
    o.bn_warmup_batches = cfg.bn_warmup;
    return o;
}

std::vector<repq::Tensor4> calibration_batches(const repq::Dataset& data, const repq::RunConfig& cfg) {
    std::vector<repq::Tensor4> out;
    const int bs = cfg.batch_size;
    for (int b = 0; b < cfg.calib_batches; ++b) {
        const std::size_t start = static_cast<std::size_t>(b) * bs;
        if (start >= data.size()) break;
        const std::size_t count = std::min<std::size_t>(bs, data.size() - start);
        std::vector<int> idx(count);
        for (std::size_t i = 0; i < count; ++i) idx[i] = static_cast<int>(start + i);
        out.push_back(data.batch(idx));
    }
    if (out.empty()) throw repq::ConfigError("calibration needs at least one batch of data");
    return out;
}

json qparams_to_json(const repq::NetQuantParams& qp) {
    json layers = json::array();
    for (const repq::LayerQuant& lq : qp.layers) {
        layers.push_back({{"weight_scale", lq.weight.scale}, {"act_scale", lq.act_in.scale[0]}});
    }
    return {{"bits", qp.bits},
            {"method", qp.method == repq::CalibMethod::mse ? "mse" : "max"},
            {"layers", layers}};
}

repq::NetQuantParams qparams_from_json(const json& j) {
    repq::NetQuantParams qp;
    qp.bits = j.at("bits").get<int>();
    qp.method = j.at("method").get<std::string>() == "mse" ? repq::CalibMethod::mse : repq::CalibMethod::max;
    for (const json& lj : j.at("layers")) {
        repq::LayerQuant lq;
        lq.weight = repq::QuantParams::symmetric_for(1.0, qp.bits);
        lq.weight.scale = lj.at("weight_scale").get<std::vector<double>>();
        lq.act_in = repq::QuantParams::symmetric_for(1.0, qp.bits);
        lq.act_in.scale = {lj.at("act_scale").get<double>()};
        qp.layers.push_back(std::move(lq));
    }
    return qp;
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw repq::IoError("cannot write " + path);
    out << j.dump(2) << "\n";
}

repq::NetQuantParams resolve_qparams(const repq::Checkpoint& ck, const repq::DeployNetwork& dep,
                                     const repq::RunConfig& cfg, const std::string& qparams_path) {
    if (!qparams_path.empty()) {
        std::ifstream in(qparams_path);
        if (!in) throw repq::IoError("cannot open " + qparams_path);
        return qparams_from_json(json::parse(in));
    }
    if (const std::optional<repq::NetQuantParams> embedded = repq::quant_from_checkpoint(ck)) {
        return *embedded;
    }
    const repq::Dataset data = dataset_from_config(cfg);
    return repq::calibrate(dep, calibration_batches(data, cfg), cfg.method, cfg.bits);
}

int run(int argc, char** argv) {
    CLI::App app{"reparameterizable conv blocks with INT8 quantization tooling"};
    app.require_subcommand(1);

    std::string config_path, in_path, out_path, ckpt_path, qparams_path;
    int steps = 200;
    bool use_int8 = false, run_qat = false;

    CLI::App* train_cmd = app.add_subcommand("train", "train a network per the run config");
    train_cmd->add_option("--config", config_path, "run config file")->required();
    train_cmd->add_option("--out", out_path, "output directory (default from config)");

    CLI::App* fuse_cmd = app.add_subcommand("fuse", "collapse a train checkpoint into deploy form");
    fuse_cmd->add_option("--in", in_path, "train-mode checkpoint")->required();
    fuse_cmd->add_option("--out", out_path, "deploy checkpoint path")->required();

    CLI::App* calib_cmd = app.add_subcommand("calibrate", "compute quantizer scales for a deploy checkpoint");
    calib_cmd->add_option("--ckpt", ckpt_path, "deploy checkpoint")->required();
    calib_cmd->add_option("--out", out_path, "qparams JSON path")->required();
    calib_cmd->add_option("--embed", in_path, "also write a checkpoint with embedded scales");

    CLI::App* quant_cmd = app.add_subcommand("quantize", "report FP32 vs INT8 accuracy for a deploy checkpoint");
    quant_cmd->add_option("--ckpt", ckpt_path, "deploy checkpoint")->required();
    quant_cmd->add_option("--qparams", qparams_path, "qparams JSON (else embedded or fresh calibration)");
    quant_cmd->add_flag("--qat", run_qat, "fine-tune with fake quantization before the INT8 report");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint's accuracy");
    eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint (train or deploy)")->required();
    eval_cmd->add_flag("--int8", use_int8, "evaluate the fake-quantized deploy network");
    eval_cmd->add_option("--qparams", qparams_path, "qparams JSON for --int8");

    CLI::App* analyze_cmd = app.add_subcommand("analyze", "emit weight/activation/MSE diagnostics");
    analyze_cmd->add_option("--ckpt", ckpt_path, "checkpoint (train or deploy)")->required();
    analyze_cmd->add_option("--out", out_path, "output directory")->required();

    CLI::App* lemma_cmd = app.add_subcommand("lemma-check", "run the beta-equality monitor on an s2-style model");
    lemma_cmd->add_option("--config", config_path, "run config file")->required();
    lemma_cmd->add_option("--steps", steps, "SGD steps to monitor (default 200)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (train_cmd->parsed()) {
        const repq::RunConfig cfg = repq::load_config(config_path);
        const std::string out_dir = out_path.empty() ? cfg.out_dir : out_path;
        fs::create_directories(out_dir);
        repq::Network net = repq::build_network(cfg.network_spec(), cfg.seed);
        const repq::Dataset data = dataset_from_config(cfg);
        const repq::TrainHistory hist = repq::train(net, data, optim_from_config(cfg));
        hist.to_csv((fs::path(out_dir) / "history.csv").string());
        const std::string ckpt = (fs::path(out_dir) / "model.ckpt").string();
        repq::checkpoint_from_network(net, repq::serialize_config(cfg)).save(ckpt);
        json summary = {{"checkpoint", ckpt},
                        {"final_loss", hist.loss.back()},
                        {"final_accuracy", hist.accuracy.back()},
                        {"denominator_initial", hist.denom_stat_initial},
                        {"denominator_final", hist.denom_stat.back()}};
        std::cout << summary.dump(2) << "\n";
        return 0;
    }

    if (fuse_cmd->parsed()) {
        const repq::Checkpoint ck = repq::Checkpoint::load(in_path);
        repq::Network net = repq::network_from_checkpoint(ck);
        repq::DeployNetwork dep = repq::fuse_network(net); // each block self-checks
        repq::checkpoint_from_deploy(dep, ck.config_echo).save(out_path);
        std::cout << json{{"deploy_checkpoint", out_path}, {"layers", dep.layers.size()}}.dump(2) << "\n";
        return 0;
    }

    if (calib_cmd->parsed()) {
        const repq::Checkpoint ck = repq::Checkpoint::load(ckpt_path);
        const repq::RunConfig cfg = repq::parse_config(ck.config_echo);
        const repq::DeployNetwork dep = repq::deploy_from_checkpoint(ck);
        const repq::Dataset data = dataset_from_config(cfg);
        const repq::NetQuantParams qp =
            repq::calibrate(dep, calibration_batches(data, cfg), cfg.method, cfg.bits);
        write_json(out_path, qparams_to_json(qp));
        if (!in_path.empty()) {
            repq::checkpoint_from_deploy(dep, ck.config_echo, &qp).save(in_path);
        }
        std::cout << json{{"qparams", out_path}, {"layers", qp.layers.size()}}.dump(2) << "\n";
        return 0;
    }

    if (quant_cmd->parsed()) {
        const repq::Checkpoint ck = repq::Checkpoint::load(ckpt_path);
        const repq::RunConfig cfg = repq::parse_config(ck.config_echo);
        repq::DeployNetwork dep = repq::deploy_from_checkpoint(ck);
        const repq::Dataset data = dataset_from_config(cfg);
        const repq::NetQuantParams qp = resolve_qparams(ck, dep, cfg, qparams_path);

        const double fp32 = repq::deploy_accuracy(dep, data);
        const double ptq = repq::quantized_accuracy(dep, qp, data);
        json out = {{"fp32_accuracy", fp32}, {"int8_accuracy", ptq}, {"drop", fp32 - ptq}};
        if (run_qat) {
            repq::OptimConfig ocfg = optim_from_config(cfg);
            ocfg.epochs = std::max(1, cfg.epochs / 4);
            ocfg.lr0 = cfg.lr0 * 0.01; // fused model trains BN-free
            repq::qat_finetune(dep, data, ocfg, qp);
            out["qat_accuracy"] = repq::quantized_accuracy(dep, qp, data);
        }
        std::cout << out.dump(2) << "\n";
        return 0;
    }

    if (eval_cmd->parsed()) {
        const repq::Checkpoint ck = repq::Checkpoint::load(ckpt_path);
        const repq::RunConfig cfg = repq::parse_config(ck.config_echo);
        const repq::Dataset data = dataset_from_config(cfg);
        double acc = 0.0;
        if (ck.mode == repq::Checkpoint::Mode::deploy) {
            repq::DeployNetwork dep = repq::deploy_from_checkpoint(ck);
            if (use_int8) {
                const repq::NetQuantParams qp = resolve_qparams(ck, dep, cfg, qparams_path);
                acc = repq::quantized_accuracy(dep, qp, data);
            } else {
                acc = repq::deploy_accuracy(dep, data);
            }
        } else {
            if (use_int8) throw repq::ConfigError("--int8 requires a deploy checkpoint");
            repq::Network net = repq::network_from_checkpoint(ck);
            acc = repq::evaluate_accuracy(net, data);
        }
        std::cout << json{{"accuracy", acc}, {"int8", use_int8}}.dump(2) << "\n";
        return 0;
    }

    if (analyze_cmd->parsed()) {
        const repq::Checkpoint ck = repq::Checkpoint::load(ckpt_path);
        const repq::RunConfig cfg = repq::parse_config(ck.config_echo);
        const repq::Dataset data = dataset_from_config(cfg);
        fs::create_directories(out_path);
        const fs::path dir(out_path);

        if (ck.mode == repq::Checkpoint::Mode::deploy) {
            const repq::DeployNetwork dep = repq::deploy_from_checkpoint(ck);
            const std::vector<repq::LayerReport> wr = repq::weight_report(dep);
            repq::export_weight_report(wr, (dir / "weights.csv").string(), repq::ReportFormat::csv);
            repq::export_weight_report(wr, (dir / "weights.json").string(), repq::ReportFormat::json);
            const std::vector<repq::Tensor4> batches = calibration_batches(data, cfg);
            const repq::NetQuantParams qp = resolve_qparams(ck, dep, cfg, qparams_path);
            const auto cum = repq::cumulative_mse(dep, qp, batches);
            const std::vector<double> local = repq::layer_mse(dep, qp, batches);
            repq::export_mse_report(cum, local, (dir / "mse.csv").string(), repq::ReportFormat::csv);
            repq::export_mse_report(cum, local, (dir / "mse.json").string(), repq::ReportFormat::json);
        } else {
            repq::Network net = repq::network_from_checkpoint(ck);
            const std::vector<repq::LayerReport> wr = repq::weight_report(net);
            repq::export_weight_report(wr, (dir / "weights.csv").string(), repq::ReportFormat::csv);
            repq::export_weight_report(wr, (dir / "weights.json").string(), repq::ReportFormat::json);
            const std::vector<repq::Tensor4> batches = calibration_batches(data, cfg);
            const std::vector<repq::ActivationReport> ar = repq::activation_report(net, batches[0]);
            repq::export_activation_report(ar, (dir / "activations.csv").string(), repq::ReportFormat::csv);
            repq::export_activation_report(ar, (dir / "activations.json").string(), repq::ReportFormat::json);
        }
        std::cout << json{{"out_dir", out_path}}.dump(2) << "\n";
        return 0;
    }

    if (lemma_cmd->parsed()) {
        repq::RunConfig cfg = repq::load_config(config_path);
        repq::Network net = repq::build_network(cfg.network_spec(), cfg.seed);
        double gap0 = 0.0;
        bool applicable = false;
        for (const repq::RepBlock& b : net.blocks) {
            if (b.bn3 && b.bn1) {
                applicable = true;
                gap0 = std::max(gap0, repq::branch_beta_gap(b));
            }
        }
        if (!applicable) {
            throw repq::ConfigError("lemma-check needs a variant with BN on both the 3x3 and 1x1 branches");
        }
        const repq::Dataset data = dataset_from_config(cfg);
        repq::OptimConfig ocfg = optim_from_config(cfg);
        // steps -> epochs given the dataset size
        const int steps_per_epoch =
            static_cast<int>((data.size() + ocfg.batch_size - 1) / ocfg.batch_size);
        ocfg.epochs = std::max(1, (steps + steps_per_epoch - 1) / steps_per_epoch);
        const repq::TrainHistory hist = repq::train(net, data, ocfg);
        double max_gap = 0.0;
        for (std::size_t i = 0; i < hist.step_beta_gap.size() && i < static_cast<std::size_t>(steps); ++i) {
            max_gap = std::max(max_gap, hist.step_beta_gap[i]);
        }
        std::cout << json{{"initial_gap", gap0},
                          {"max_gap", max_gap},
                          {"steps", std::min<std::size_t>(hist.step_beta_gap.size(), steps)}}
                         .dump(2)
                  << "\n";
        return 0;
    }

    return 2;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const repq::ConfigError& e) {
        std::cerr << json{{"error", "config"}, {"message", e.what()}}.dump() << "\n";
        return 2;
    } catch (const repq::FormatError& e) {
        std::cerr << json{{"error", "format"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    } catch (const repq::FusionError& e) {
        std::cerr << json{{"error", "fusion"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    } catch (const repq::NumericError& e) {
        std::cerr << json{{"error", "numeric"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    } catch (const repq::IoError& e) {
        std::cerr << json{{"error", "io"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    }
}
