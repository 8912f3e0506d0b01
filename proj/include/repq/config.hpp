#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "repq/block.hpp"
#include "repq/quant.hpp"

namespace repq {

// Flat sectioned key=value run configuration. parse() validates every key
// and reports all problems at once; serialize() emits the canonical form,
// so parse(serialize(parse(text))) == parse(text).
struct RunConfig {
    // [network]
    std::vector<int> widths = {8, 16, 32, 64};
    std::vector<int> blocks = {1, 2, 2, 1};
    std::vector<int> groups = {};
    int in_channels = 3;
    int classes = 10;

    // [block]
    Variant variant = Variant::s0;
    bool m1 = false, m2 = false, m3 = false, m4 = false; // variant == flags
    bool bias_unnormalized = false;

    // [train]
    LossMode loss = LossMode::custom_l2;
    double lr0 = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int epochs = 10;
    int batch_size = 64;
    std::uint64_t seed = 0;
    int bn_warmup = 0; // forward-only BN stat batches before step 0

    // [quant]
    int bits = 8;
    CalibMethod method = CalibMethod::max;
    int calib_batches = 2;

    // [data]
    std::string source = "synth"; // synth | cifar10
    std::string dir;
    int synth_n = 5000;
    int synth_classes = 10;
    int synth_size = 32;
    int limit = 0; // take the first N records, 0 = all

    // [io]
    std::string out_dir = "out";

    bool operator==(const RunConfig&) const = default;

    NetworkSpec network_spec() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

std::string variant_name(Variant v);
std::string loss_name(LossMode m);

} // namespace repq
