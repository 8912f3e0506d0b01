#pragma once

#include <optional>
#include <string>
#include <vector>

#include "repq/rng.hpp"
#include "repq/tensor.hpp"

namespace repq {

// Ablation grid: s0 is the original three-BN block, s1 shares its
// structure (it differs only in loss mode), s2 drops the identity BN,
// s3 additionally drops the 1x1 BN, s4 adds a BN after the branch sum.
enum class Variant { s0, s1, s2, s3, s4, custom };

enum class LossMode { custom_l2, custom_l2_no_denom, plain_l2 };

struct BlockConfig {
    int in_channels = 0;
    int out_channels = 0;
    int stride = 1;
    int groups = 1;
    bool bn_on_3x3 = true;
    bool bn_on_1x1 = true;
    bool bn_on_identity = true;
    bool post_bn = false;
    bool identity_enabled = true;
    bool bias_on_unnormalized_branches = false;

    void validate() const;
    bool has_identity() const { return identity_enabled; }

    // structural toggles for a named setting; identity enabled iff legal
    static BlockConfig preset(Variant v, int c1, int c2, int stride = 1, int groups = 1);
    // modification flags applied to the s0 structure (m1 is loss-only)
    static BlockConfig from_flags(bool m2, bool m3, bool m4, int c1, int c2, int stride = 1, int groups = 1);
};

LossMode default_loss_mode(Variant v);

// Train-form reparameterizable block: 3x3 + 1x1 + identity branches with
// optional per-branch BN and optional post-sum BN.
struct RepBlock {
    BlockConfig config;
    ConvKernel w3; // 3x3, padding 1
    ConvKernel w1; // 1x1, padding 0
    std::optional<BNParams> bn3, bn1, bn0, bn_post;
    bool fused = false; // flipped by fuse_block; fusing twice is rejected

    enum class Mode { train, eval };

    struct ForwardDetail {
        std::vector<std::pair<std::string, Tensor4>> branches; // "3x3", "1x1", "identity"
        Tensor4 pre_activation; // branch sum after optional post-BN
        Tensor4 output;         // relu(pre_activation)
    };

    static RepBlock build(const BlockConfig& cfg, Rng& rng);

    // train mode uses batch statistics and updates running stats
    Tensor4 forward(const Tensor4& x, Mode mode);
    ForwardDetail forward_detail(const Tensor4& x, Mode mode);
};

struct NetworkSpec {
    std::vector<int> stage_widths;
    std::vector<int> blocks_per_stage;
    std::vector<int> stage_groups; // empty means all 1
    int in_channels = 3;
    int num_classes = 10;
    Variant variant = Variant::s0;
    // used when variant == custom
    bool m2 = false, m3 = false, m4 = false;
    bool bias_on_unnormalized_branches = false;

    void validate() const;
    BlockConfig block_config(int c1, int c2, int stride, int groups) const;
    static NetworkSpec a0_mini(Variant v, int num_classes = 10);
};

// Sequence of blocks (first block of each stage strides 2), global average
// pool, and a 1x1-conv classifier head.
struct Network {
    NetworkSpec spec;
    std::vector<RepBlock> blocks;
    ConvKernel head; // (classes, last_width, 1, 1) with bias

    Tensor4 logits(const Tensor4& x, RepBlock::Mode mode); // (n, classes, 1, 1)
    std::size_t parameter_count() const;
};

// Deterministic Kaiming-style init from the given seed.
Network build_network(const NetworkSpec& spec, std::uint64_t seed);

std::vector<int> predict(const Tensor4& logits);
double accuracy(const Tensor4& logits, const std::vector<int>& labels);

} // namespace repq
