#include "repq/block.hpp"

#include <cmath>

#include "repq/errors.hpp"

namespace repq {

void BlockConfig::validate() const {
    if (in_channels <= 0 || out_channels <= 0) throw ConfigError("block: channel counts must be positive");
    if (stride != 1 && stride != 2) throw ConfigError("block: stride must be 1 or 2");
    if (groups < 1) throw ConfigError("block: groups must be >= 1");
    if (in_channels % groups != 0 || out_channels % groups != 0) {
        throw ConfigError("block: groups must divide both channel counts");
    }
    if (identity_enabled && (in_channels != out_channels || stride != 1)) {
        throw ConfigError("block: identity branch requires equal channels and stride 1");
    }
    const bool any_bn = bn_on_3x3 || bn_on_1x1 || (identity_enabled && bn_on_identity) || post_bn;
    if (!any_bn) {
        throw ConfigError("block: at least one branch must carry BN or post_bn must be set");
    }
}

BlockConfig BlockConfig::preset(Variant v, int c1, int c2, int stride, int groups) {
    BlockConfig cfg;
    cfg.in_channels = c1;
    cfg.out_channels = c2;
    cfg.stride = stride;
    cfg.groups = groups;
    cfg.identity_enabled = (c1 == c2 && stride == 1);
    switch (v) {
        case Variant::s0:
        case Variant::s1:
            break;
        case Variant::s2:
            cfg.bn_on_identity = false;
            break;
        case Variant::s3:
            cfg.bn_on_identity = false;
            cfg.bn_on_1x1 = false;
            break;
        case Variant::s4:
            cfg.bn_on_identity = false;
            cfg.bn_on_1x1 = false;
            cfg.post_bn = true;
            break;
        case Variant::custom:
            throw ConfigError("preset: custom variant needs explicit flags");
    }
    cfg.validate();
    return cfg;
}

BlockConfig BlockConfig::from_flags(bool m2, bool m3, bool m4, int c1, int c2, int stride, int groups) {
    BlockConfig cfg;
    cfg.in_channels = c1;
    cfg.out_channels = c2;
    cfg.stride = stride;
    cfg.groups = groups;
    cfg.identity_enabled = (c1 == c2 && stride == 1);
    if (m2) cfg.bn_on_identity = false;
    if (m3) cfg.bn_on_1x1 = false;
    if (m4) cfg.post_bn = true;
    cfg.validate();
    return cfg;
}

LossMode default_loss_mode(Variant v) {
    return v == Variant::s0 ? LossMode::custom_l2 : LossMode::plain_l2;
}

namespace {

ConvKernel make_conv(int c1, int c2, int k, int stride, int groups, bool with_bias, Rng& rng) {
    ConvKernel kernel;
    kernel.weight = Tensor4(c2, c1 / groups, k, k);
    kernel.stride = stride;
    kernel.padding = k == 3 ? 1 : 0;
    kernel.groups = groups;
    const int fan_in = (c1 / groups) * k * k;
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (float& v : kernel.weight.vec()) v = static_cast<float>(std_dev * rng.normal());
    if (with_bias) kernel.bias = std::vector<float>(static_cast<std::size_t>(c2), 0.0f);
    return kernel;
}

} // namespace

RepBlock RepBlock::build(const BlockConfig& cfg, Rng& rng) {
    cfg.validate();
    RepBlock b;
    b.config = cfg;
    const bool bias3 = !cfg.bn_on_3x3 && cfg.bias_on_unnormalized_branches;
    const bool bias1 = !cfg.bn_on_1x1 && cfg.bias_on_unnormalized_branches;
    b.w3 = make_conv(cfg.in_channels, cfg.out_channels, 3, cfg.stride, cfg.groups, bias3, rng);
    b.w1 = make_conv(cfg.in_channels, cfg.out_channels, 1, cfg.stride, cfg.groups, bias1, rng);
    if (cfg.bn_on_3x3) b.bn3 = BNParams(cfg.out_channels);
    if (cfg.bn_on_1x1) b.bn1 = BNParams(cfg.out_channels);
    if (cfg.identity_enabled && cfg.bn_on_identity) b.bn0 = BNParams(cfg.in_channels);
    if (cfg.post_bn) b.bn_post = BNParams(cfg.out_channels);
    return b;
}

RepBlock::ForwardDetail RepBlock::forward_detail(const Tensor4& x, Mode mode) {
    if (fused) throw FusionError("block already fused; train-form forward unavailable");
    if (x.c() != config.in_channels) {
        throw ConfigError("block forward: input has " + std::to_string(x.c()) + " channels, expected " +
                          std::to_string(config.in_channels));
    }
    const bool train = mode == Mode::train;
    auto apply_bn = [&](const Tensor4& t, std::optional<BNParams>& bn) {
        return train ? batch_norm_train(t, *bn) : batch_norm_infer(t, *bn);
    };

    ForwardDetail d;
    Tensor4 y3 = conv2d(x, w3);
    if (bn3) y3 = apply_bn(y3, bn3);
    d.branches.emplace_back("3x3", std::move(y3));

    Tensor4 y1 = conv2d(x, w1);
    if (bn1) y1 = apply_bn(y1, bn1);
    d.branches.emplace_back("1x1", std::move(y1));

    if (config.identity_enabled) {
        Tensor4 y0 = bn0 ? apply_bn(x, bn0) : x;
        d.branches.emplace_back("identity", std::move(y0));
    }

    std::vector<const Tensor4*> parts;
    parts.reserve(d.branches.size());
    for (auto& [name, t] : d.branches) parts.push_back(&t);
    Tensor4 s = add(parts);
    if (bn_post) s = apply_bn(s, bn_post);
    d.pre_activation = std::move(s);
    d.output = relu(d.pre_activation);
    return d;
}

Tensor4 RepBlock::forward(const Tensor4& x, Mode mode) { return forward_detail(x, mode).output; }

void NetworkSpec::validate() const {
    if (stage_widths.empty()) throw ConfigError("network: at least one stage required");
    if (stage_widths.size() != blocks_per_stage.size()) {
        throw ConfigError("network: stage_widths and blocks_per_stage lengths differ");
    }
    if (!stage_groups.empty() && stage_groups.size() != stage_widths.size()) {
        throw ConfigError("network: stage_groups length mismatch");
    }
    for (int w : stage_widths) {
        if (w <= 0) throw ConfigError("network: stage widths must be positive");
    }
    for (int b : blocks_per_stage) {
        if (b <= 0) throw ConfigError("network: blocks per stage must be positive");
    }
    if (num_classes < 2) throw ConfigError("network: need at least 2 classes");
    if (in_channels <= 0) throw ConfigError("network: input channels must be positive");
}

BlockConfig NetworkSpec::block_config(int c1, int c2, int stride, int groups) const {
    BlockConfig cfg = variant == Variant::custom
                          ? BlockConfig::from_flags(m2, m3, m4, c1, c2, stride, groups)
                          : BlockConfig::preset(variant, c1, c2, stride, groups);
    cfg.bias_on_unnormalized_branches = bias_on_unnormalized_branches;
    return cfg;
}

NetworkSpec NetworkSpec::a0_mini(Variant v, int num_classes) {
    NetworkSpec spec;
    spec.stage_widths = {8, 16, 32, 64};
    spec.blocks_per_stage = {1, 2, 2, 1};
    spec.num_classes = num_classes;
    spec.variant = v;
    return spec;
}

Network build_network(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng = Rng::stream(seed, "init");
    Network net;
    net.spec = spec;
    int c_in = spec.in_channels;
    for (std::size_t si = 0; si < spec.stage_widths.size(); ++si) {
        const int width = spec.stage_widths[si];
        const int groups = spec.stage_groups.empty() ? 1 : spec.stage_groups[si];
        for (int bi = 0; bi < spec.blocks_per_stage[si]; ++bi) {
            const int stride = bi == 0 ? 2 : 1;
            net.blocks.push_back(RepBlock::build(spec.block_config(c_in, width, stride, groups), rng));
            c_in = width;
        }
    }
    net.head = ConvKernel{};
    net.head.weight = Tensor4(spec.num_classes, c_in, 1, 1);
    net.head.stride = 1;
    net.head.padding = 0;
    net.head.groups = 1;
    const double std_dev = std::sqrt(2.0 / static_cast<double>(c_in));
    for (float& v : net.head.weight.vec()) v = static_cast<float>(std_dev * rng.normal());
    net.head.bias = std::vector<float>(static_cast<std::size_t>(spec.num_classes), 0.0f);
    return net;
}

Tensor4 Network::logits(const Tensor4& x, RepBlock::Mode mode) {
    Tensor4 t = x;
    for (RepBlock& b : blocks) t = b.forward(t, mode);
    t = global_avg_pool(t);
    return conv2d(t, head);
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    auto bn_count = [](const std::optional<BNParams>& bn) {
        return bn ? 2 * bn->gamma.size() : 0u; // trainable gamma + beta
    };
    for (const RepBlock& b : blocks) {
        n += b.w3.weight.numel() + (b.w3.bias ? b.w3.bias->size() : 0);
        n += b.w1.weight.numel() + (b.w1.bias ? b.w1.bias->size() : 0);
        n += bn_count(b.bn3) + bn_count(b.bn1) + bn_count(b.bn0) + bn_count(b.bn_post);
    }
    n += head.weight.numel() + head.bias->size();
    return n;
}

std::vector<int> predict(const Tensor4& logits) {
    std::vector<int> out(static_cast<std::size_t>(logits.n()));
    for (int in = 0; in < logits.n(); ++in) {
        int best = 0;
        float best_v = logits.at(in, 0, 0, 0);
        for (int ic = 1; ic < logits.c(); ++ic) {
            if (logits.at(in, ic, 0, 0) > best_v) {
                best_v = logits.at(in, ic, 0, 0);
                best = ic;
            }
        }
        out[static_cast<std::size_t>(in)] = best;
    }
    return out;
}

double accuracy(const Tensor4& logits, const std::vector<int>& labels) {
    const std::vector<int> pred = predict(logits);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == labels[i]) ++hits;
    }
    return pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
}

} // namespace repq
