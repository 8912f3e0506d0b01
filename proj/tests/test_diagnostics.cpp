#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "oracles.hpp"
#include "repq/diagnostics.hpp"
#include "repq/errors.hpp"
#include "repq/fusion.hpp"
#include "repq/rng.hpp"

using namespace repq;

namespace {

Network small_net(Variant v, std::uint64_t seed) {
    NetworkSpec spec;
    spec.stage_widths = {4, 8};
    spec.blocks_per_stage = {1, 1};
    spec.num_classes = 3;
    spec.variant = v;
    return build_network(spec, seed);
}

Tensor4 random_input(int n, int c, int h, int w, Rng& rng) {
    Tensor4 t(n, c, h, w);
    for (float& v : t.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("weight_report: constant weights give zero std; stats match oracle") {
    NetworkSpec spec;
    spec.stage_widths = {4, 8};
    spec.blocks_per_stage = {2, 1}; // second block is stride 1: identity BN present
    spec.num_classes = 3;
    spec.variant = Variant::s0;
    Network net = build_network(spec, 31);
    for (float& v : net.blocks[0].w3.weight.vec()) v = 0.25f;
    for (float& v : net.blocks[0].w1.weight.vec()) v = 0.25f;
    const std::vector<LayerReport> reports = weight_report(net);
    CHECK(reports.size() == net.blocks.size() + 1);
    CHECK(reports[0].weight_std == doctest::Approx(0.0));
    CHECK(reports[0].weight_min == doctest::Approx(0.25));
    CHECK(reports[0].weight_max == doctest::Approx(0.25));

    // oracle recomputation for a random layer
    const RepBlock& b = net.blocks[1];
    std::vector<float> all(b.w3.weight.vec());
    all.insert(all.end(), b.w1.weight.vec().begin(), b.w1.weight.vec().end());
    double sum = 0.0, sumsq = 0.0, lo = all[0], hi = all[0];
    for (float v : all) {
        sum += v;
        sumsq += static_cast<double>(v) * v;
        lo = std::min(lo, static_cast<double>(v));
        hi = std::max(hi, static_cast<double>(v));
    }
    const double mean = sum / static_cast<double>(all.size());
    const double std_want = std::sqrt(std::max(0.0, sumsq / static_cast<double>(all.size()) - mean * mean));
    CHECK(reports[1].weight_std == doctest::Approx(std_want).epsilon(1e-9));
    CHECK(reports[1].weight_min == doctest::Approx(lo));
    CHECK(reports[1].weight_max == doctest::Approx(hi));
    CHECK(!reports[1].coeff3.empty());
    CHECK(!reports[1].coeff0.empty()); // s0 keeps the identity BN
}

TEST_CASE("weight_report on the deploy form covers fused layers plus head") {
    Network net = small_net(Variant::s0, 30);
    DeployNetwork dep = fuse_network(net);
    const std::vector<LayerReport> reports = weight_report(dep);
    REQUIRE(reports.size() == dep.layers.size() + 1);
    for (const LayerReport& r : reports) {
        CHECK(r.coeff3.empty()); // coefficients are folded away in deploy form
        CHECK(r.weight_max >= r.weight_min);
    }
    CHECK(reports.back().name == "head");
}

TEST_CASE("dead identity channel drives the fused coefficient past 100 / 316") {
    // s1 structure (BN on all branches, plain L2 regime): feed data whose
    // channel 2 is identically zero so the identity-branch BN collapses
    Rng rng(32);
    RepBlock b = RepBlock::build(BlockConfig::preset(Variant::s1, 4, 4, 1, 1), rng);

    const int dead = 2;
    for (int step = 0; step < 220; ++step) {
        Tensor4 x = random_input(2, 4, 8, 8, rng);
        for (int in = 0; in < 2; ++in) {
            for (int iy = 0; iy < 8; ++iy) {
                for (int ix = 0; ix < 8; ++ix) x.at(in, dead, iy, ix) = 0.0f;
            }
        }
        (void)b.forward(x, RepBlock::Mode::train);
    }
    // running variance of the dead channel decays geometrically toward 0
    CHECK(b.bn0->running_var[dead] <= 1e-8f);
    const std::vector<double> coeff = fold_coefficients(*b.bn0);
    CHECK(coeff[dead] >= 300.0);
    CHECK(coeff[dead] >= 100.0);
    CHECK(coeff[dead] <= 1.0 / std::sqrt(1e-5) + 1.0);

    RepBlock copy = b;
    FusedConv fused = fuse_block(copy);
    double channel_max = 0.0;
    for (int ic = 0; ic < 4; ++ic) {
        for (int kh = 0; kh < 3; ++kh) {
            for (int kw = 0; kw < 3; ++kw) {
                channel_max = std::max(channel_max, std::abs(static_cast<double>(fused.conv.weight.at(dead, ic, kh, kw))));
            }
        }
    }
    CHECK(channel_max >= 100.0);
}

TEST_CASE("fold coefficient bound for small running variance") {
    BNParams bn(1);
    bn.running_var = {5e-5f}; // < 1e-4
    const std::vector<double> c = fold_coefficients(bn);
    CHECK(c[0] > 1.0 / std::sqrt(1e-4 + 1e-5));
}

TEST_CASE("activation_report: zero input and biases give zero stats") {
    Network net = small_net(Variant::s3, 33);
    for (RepBlock& b : net.blocks) {
        for (float& v : b.w3.weight.vec()) v = 0.0f;
        for (float& v : b.w1.weight.vec()) v = 0.0f;
    }
    const std::vector<ActivationReport> reports = activation_report(net, Tensor4(2, 3, 8, 8));
    for (const ActivationReport& r : reports) {
        CHECK(r.pre_min == 0.0);
        CHECK(r.pre_max == 0.0);
        CHECK(r.pre_std == 0.0);
    }
}

TEST_CASE("activation_report matches oracle and exposes branch stats") {
    Rng rng(34);
    Network net = small_net(Variant::s0, 35);
    Tensor4 x = random_input(2, 3, 8, 8, rng);
    const std::vector<ActivationReport> reports = activation_report(net, x);
    REQUIRE(reports.size() == net.blocks.size());

    // recompute the first block by hand
    RepBlock& b = net.blocks[0];
    Tensor4 y3 = oracle::conv2d(x, b.w3);
    y3 = oracle::batch_norm_infer(y3, *b.bn3);
    Tensor4 y1 = oracle::conv2d(x, b.w1);
    y1 = oracle::batch_norm_infer(y1, *b.bn1);
    const Tensor4 pre = oracle::add({&y3, &y1});
    double lo = pre.data()[0], hi = pre.data()[0];
    for (std::size_t i = 0; i < pre.numel(); ++i) {
        lo = std::min(lo, static_cast<double>(pre.data()[i]));
        hi = std::max(hi, static_cast<double>(pre.data()[i]));
    }
    CHECK(reports[0].pre_min == doctest::Approx(lo).epsilon(1e-6));
    CHECK(reports[0].pre_max == doctest::Approx(hi).epsilon(1e-6));
    CHECK(reports[0].branches.size() == 2); // stride-2 block: no identity
}

TEST_CASE("branch sum variance exceeds each branch's when means align") {
    // s2 with beta3 = beta1 > 0: the branches correlate through the same
    // input, so the summed pre-activation spreads wider
    Rng rng(36);
    RepBlock b = RepBlock::build(BlockConfig::preset(Variant::s2, 4, 4), rng);
    for (float& v : b.w3.weight.vec()) v = static_cast<float>(rng.uniform(-0.6, 0.6));
    for (float& v : b.w1.weight.vec()) v = static_cast<float>(rng.uniform(-0.6, 0.6));
    for (int c = 0; c < 4; ++c) {
        b.bn3->beta[c] = 0.5f;
        b.bn1->beta[c] = 0.5f;
    }
    Tensor4 x = random_input(4, 4, 8, 8, rng);
    RepBlock::ForwardDetail d = b.forward_detail(x, RepBlock::Mode::train);
    const oracle::ChannelStats pre = oracle::channel_stats(d.pre_activation);
    const oracle::ChannelStats b3 = oracle::channel_stats(d.branches[0].second);
    const oracle::ChannelStats b1 = oracle::channel_stats(d.branches[1].second);
    double mean_pre = 0.0, mean_b3 = 0.0, mean_b1 = 0.0;
    for (int c = 0; c < 4; ++c) {
        mean_pre += pre.var[static_cast<std::size_t>(c)];
        mean_b3 += b3.var[static_cast<std::size_t>(c)];
        mean_b1 += b1.var[static_cast<std::size_t>(c)];
    }
    CHECK(mean_pre > mean_b3);
    CHECK(mean_pre > mean_b1);
}

TEST_CASE("cumulative_mse: zero at k=0, full quantization MSE at k=L") {
    Rng rng(37);
    Network net = small_net(Variant::s0, 38);
    DeployNetwork dep = fuse_network(net);
    std::vector<Tensor4> batches = {random_input(2, 3, 8, 8, rng), random_input(2, 3, 8, 8, rng)};
    const NetQuantParams qp = calibrate(dep, batches);

    const auto series = cumulative_mse(dep, qp, batches);
    REQUIRE(static_cast<int>(series.size()) == dep.layer_count() + 1);
    CHECK(series[0].first == 0);
    CHECK(series[0].second == 0.0);

    // k = L equals the full quantized-forward MSE, recomputed directly
    double acc = 0.0;
    std::size_t total = 0;
    for (const Tensor4& b : batches) {
        const Tensor4 ref = dep.logits(b);
        const Tensor4 got = quantized_forward(dep, qp, b);
        acc += mse(ref, got) * static_cast<double>(ref.numel());
        total += ref.numel();
    }
    CHECK(series.back().second == doctest::Approx(acc / static_cast<double>(total)).epsilon(1e-12));
}

TEST_CASE("cumulative_mse: k=1 equals the single-prefix oracle") {
    Rng rng(39);
    Network net = small_net(Variant::s4, 40);
    DeployNetwork dep = fuse_network(net);
    std::vector<Tensor4> batches = {random_input(2, 3, 8, 8, rng)};
    const NetQuantParams qp = calibrate(dep, batches);
    const auto series = cumulative_mse(dep, qp, batches);

    // oracle: quantize only layer 0 by hand, leave the rest FP32
    const Tensor4& x = batches[0];
    ConvKernel k0 = dep.layers[0].conv;
    k0.weight = fake_quant(k0.weight, qp.layers[0].weight);
    Tensor4 t = relu(conv2d(fake_quant(x, qp.layers[0].act_in), k0));
    for (std::size_t li = 1; li < dep.layers.size(); ++li) t = dep.layers[li].forward(t);
    const Tensor4 got = conv2d(global_avg_pool(t), dep.head);
    const Tensor4 ref = dep.logits(x);
    CHECK(series[1].second == doctest::Approx(mse(ref, got)).epsilon(1e-12));
}

TEST_CASE("layer_mse: tiny deltas give near-zero, matches per-layer toggle oracle") {
    Rng rng(41);
    Network net = small_net(Variant::s0, 42);
    DeployNetwork dep = fuse_network(net);
    std::vector<Tensor4> batches = {random_input(2, 3, 8, 8, rng)};
    const NetQuantParams qp16 = calibrate(dep, batches, CalibMethod::max, 16);
    for (double v : layer_mse(dep, qp16, batches)) CHECK(v < 1e-6);

    const NetQuantParams qp = calibrate(dep, batches);
    const std::vector<double> local = layer_mse(dep, qp, batches);
    REQUIRE(static_cast<int>(local.size()) == dep.layer_count());

    // oracle for layer 1: FP32 input captured, layer 1 quantized
    Tensor4 in1 = dep.layers[0].forward(batches[0]);
    ConvKernel k1 = dep.layers[1].conv;
    k1.weight = fake_quant(k1.weight, qp.layers[1].weight);
    const Tensor4 ref = relu(conv2d(in1, dep.layers[1].conv));
    const Tensor4 got = relu(conv2d(fake_quant(in1, qp.layers[1].act_in), k1));
    CHECK(local[1] == doctest::Approx(mse(ref, got)).epsilon(1e-12));

    // determinism: identical layers, qparams and inputs give equal MSE
    const std::vector<double> again = layer_mse(dep, qp, batches);
    CHECK(again == local);
}

TEST_CASE("export: empty reports give header-only CSV; JSON round-trips") {
    const std::string csv_path = temp_path("repq_empty.csv");
    export_weight_report({}, csv_path, ReportFormat::csv);
    std::ifstream in(csv_path);
    std::string line, rest;
    std::getline(in, line);
    CHECK(line.find("index,name") == 0);
    const bool has_more = static_cast<bool>(std::getline(in, rest)) && !rest.empty();
    CHECK_FALSE(has_more);

    Network net = small_net(Variant::s0, 43);
    const std::vector<LayerReport> reports = weight_report(net);
    const std::string json_path = temp_path("repq_weights.json");
    export_weight_report(reports, json_path, ReportFormat::json);

    std::ifstream jf(json_path);
    nlohmann::json j = nlohmann::json::parse(jf);
    REQUIRE(j.is_array());
    REQUIRE(j.size() == reports.size());
    for (std::size_t i = 0; i < reports.size(); ++i) {
        CHECK(j[i]["name"] == reports[i].name);
        CHECK(j[i]["weight_std"].get<double>() == reports[i].weight_std);
        CHECK(j[i]["weight_min"].get<double>() == reports[i].weight_min);
        CHECK(j[i]["histogram"].size() == reports[i].histogram.size());
    }

    // mse report round trip
    Rng rng(44);
    DeployNetwork dep = fuse_network(net);
    std::vector<Tensor4> batches = {random_input(2, 3, 8, 8, rng)};
    const NetQuantParams qp = calibrate(dep, batches);
    const auto series = cumulative_mse(dep, qp, batches);
    const std::vector<double> local = layer_mse(dep, qp, batches);
    const std::string mse_path = temp_path("repq_mse.json");
    export_mse_report(series, local, mse_path, ReportFormat::json);
    std::ifstream mf(mse_path);
    nlohmann::json mj = nlohmann::json::parse(mf);
    REQUIRE(mj["cumulative"].size() == series.size());
    for (std::size_t i = 0; i < series.size(); ++i) {
        CHECK(mj["cumulative"][i]["mse"].get<double>() == series[i].second);
    }
    CHECK(mj["per_layer"].size() == local.size());

    std::filesystem::remove(csv_path);
    std::filesystem::remove(json_path);
    std::filesystem::remove(mse_path);
}

TEST_CASE("export surfaces I/O errors") {
    CHECK_THROWS_AS(export_weight_report({}, "/nonexistent-dir/x.csv", ReportFormat::csv), IoError);
}
