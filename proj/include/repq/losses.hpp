#pragma once

#include "repq/block.hpp"
#include "repq/tensor.hpp"

namespace repq {

// Regularizer on the equivalently fused kernel. With K3/K1 the branch
// weights and t_i = gamma_i / sqrt(running_var_i + eps) held constant:
//   circle = sum(K3^2) - sum(K3_center^2)
//   eq     = K3_center * t3 + K1 * t1
//   loss   = sum(eq^2 / (t3^2 + t1^2)) + circle
double custom_l2(const RepBlock& b);

// Same with the (t3^2 + t1^2) divisor removed; the circle term stays.
double custom_l2_no_denom(const RepBlock& b);

// Accumulate coeff * d(loss)/dK into the given gradient tensors. The t
// coefficients are detached, so BN parameters and running stats receive
// no gradient from these losses.
void custom_l2_grad(const RepBlock& b, double coeff, Tensor4& g_w3, Tensor4& g_w1);
void custom_l2_no_denom_grad(const RepBlock& b, double coeff, Tensor4& g_w3, Tensor4& g_w1);

// sum of squares over the given weight tensors
double plain_l2(const std::vector<const Tensor4*>& weights);

} // namespace repq
