#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "repq/block.hpp"
#include "repq/dataset.hpp"
#include "repq/tensor.hpp"

namespace repq {

enum class ParamKind { conv_weight, conv_bias, bn_gamma, bn_beta };

// Flat view into one trainable parameter of a network.
struct ParamRef {
    std::string name;
    ParamKind kind;
    int block;   // -1 for the head
    char branch; // '3', '1', '0', 'p' (post), 'h' (head)
    float* data;
    std::size_t size;
    Shape4 shape;
};

std::vector<ParamRef> collect_params(Network& net);

struct OptimConfig {
    double lr0 = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int epochs = 10;
    int batch_size = 64;
    std::uint64_t seed = 0;
    LossMode loss_mode = LossMode::plain_l2;
    // forward-only passes over the first N batches before step 0 so BN
    // running stats reflect the data rather than their 0/1 init
    int bn_warmup_batches = 0;
    // overrides; defaults follow "no decay for BN parameters"
    bool decay_bn_gamma = false;
    bool decay_beta = false;
    bool decay_beta_branch3_only = false; // equality-violation control for the beta monitor
};

// true where SGD applies weight decay: conv weights under plain L2, nothing
// under the custom-style losses (they replace decay for the block kernels),
// never biases or BN parameters unless explicitly overridden.
std::vector<std::uint8_t> build_decay_mask(const std::vector<ParamRef>& params, const OptimConfig& cfg);

struct SgdState {
    std::vector<std::vector<float>> velocity; // one buffer per parameter
    static SgdState zeros_like(const std::vector<ParamRef>& params);
};

// v <- momentum*v + (grad + wd*theta*mask); theta <- theta - lr*v
void sgd_step(const std::vector<ParamRef>& params, const std::vector<std::vector<float>>& grads,
              SgdState& state, double lr, const OptimConfig& cfg,
              const std::vector<std::uint8_t>& decay_mask);

// lr0 * (1 + cos(pi * step / total)) / 2
double cosine_lr(int step, int total_steps, double lr0);

struct TrainHistory {
    std::vector<double> loss;       // per epoch, mean over steps
    std::vector<double> accuracy;   // per epoch, training accuracy
    std::vector<double> lr;         // per epoch, value at last step
    std::vector<double> beta_gap;  // per epoch, max over steps (nan if n/a)
    std::vector<double> denom_stat; // per epoch, sum |t3|^2 + |t1|^2 at epoch end
    std::vector<double> step_beta_gap; // per step, for the beta-equality monitor
    double denom_stat_initial = 0.0;

    void to_csv(const std::string& path) const;
};

// Cross-entropy plus the configured regularizer, SGD with cosine schedule.
// Deterministic given cfg.seed. Aborts with a diagnostic naming the
// offending block/branch if the loss goes non-finite.
TrainHistory train(Network& net, const Dataset& data, const OptimConfig& cfg);

// max over channels of |beta3 - beta1|; defined when both BNs exist
double branch_beta_gap(const RepBlock& b);

// sum over blocks (with both branch BNs) of sum_c t3^2 + t1^2
double denominator_stat(const Network& net);

double evaluate_accuracy(Network& net, const Dataset& data, int batch_size = 256);

} // namespace repq
