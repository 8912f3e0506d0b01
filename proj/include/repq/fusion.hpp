#pragma once

#include <vector>

#include "repq/block.hpp"
#include "repq/tensor.hpp"

namespace repq {

// Deploy-form block: one 3x3 conv with bias, followed by ReLU.
struct FusedConv {
    ConvKernel conv;

    Tensor4 forward(const Tensor4& x) const { return relu(conv2d(x, conv)); }
    Tensor4 forward_linear(const Tensor4& x) const { return conv2d(x, conv); }
};

// Fold BN into the preceding conv:
//   W' = (gamma / sqrt(eps + var)) * W
//   b' = beta + (prior_bias - mean) * gamma / sqrt(eps + var)
// Arithmetic in double, cast to storage precision once.
ConvKernel fold_bn(const ConvKernel& k, const BNParams& bn);

// Place the 1x1 tap at the spatial center of a 3x3 kernel.
ConvKernel pad_1x1_to_3x3(const ConvKernel& k1);

// 3x3 kernel that reproduces its input under padding 1 (grouped layout:
// each output channel taps its matching input channel within the group).
ConvKernel identity_kernel(int channels, int groups);

// Per-branch BN fold, lift to 3x3, sum, fold post-BN, then self-check the
// result against the eval-mode train path on a fixed probe batch.
FusedConv fuse_block(RepBlock& b);

// Per-channel fold coefficients gamma / sqrt(eps + running_var).
std::vector<double> fold_coefficients(const BNParams& bn);

// Differentiable view of the fused 3x3-center weights used by the custom
// losses: t3 * K3_center + t1 * K1 with t detached (constants).
struct EquivalentKernel {
    Tensor4 values;          // (c2, c1/g, 1, 1)
    std::vector<double> t3;  // per output channel, detached
    std::vector<double> t1;
};
EquivalentKernel equivalent_kernel(const RepBlock& b);

// Fused network: blocks collapsed, head unchanged.
struct DeployNetwork {
    NetworkSpec spec;
    std::vector<FusedConv> layers;
    ConvKernel head;

    Tensor4 logits(const Tensor4& x) const;
    int layer_count() const { return static_cast<int>(layers.size()) + 1; } // + head
};

DeployNetwork fuse_network(Network& net);

double max_abs_diff(const Tensor4& a, const Tensor4& b);

} // namespace repq
