#pragma once

#include <string>
#include <vector>

#include "repq/block.hpp"
#include "repq/ptq.hpp"

namespace repq {

// Per-layer weight summary together with the per-branch fold
// coefficients gamma / sqrt(eps + running_var).
struct LayerReport {
    int index = 0;
    std::string name;
    double weight_std = 0.0, weight_min = 0.0, weight_max = 0.0;
    std::vector<std::uint64_t> histogram; // fixed 64 bins over [weight_min, weight_max]
    // empty when the branch has no BN (or does not exist in deploy form)
    std::vector<double> coeff3, coeff1, coeff0, coeff_post;
};

static constexpr int kReportHistBins = 64;

std::vector<LayerReport> weight_report(const Network& net);
std::vector<LayerReport> weight_report(const DeployNetwork& net);

// Pre-activation statistics per block, with per-branch breakdown for the
// multi-branch train form.
struct BranchStats {
    std::string name;
    double mean = 0.0, stddev = 0.0, min = 0.0, max = 0.0;
};
struct ActivationReport {
    int block = 0;
    double pre_min = 0.0, pre_max = 0.0, pre_std = 0.0;
    std::vector<BranchStats> branches;
};

std::vector<ActivationReport> activation_report(Network& net, const Tensor4& batch);

// Entry k: MSE between FP32 logits and logits with layers [0, k) running
// fake-quantized; entry 0 is exactly 0, entry L the fully quantized MSE.
std::vector<std::pair<int, double>> cumulative_mse(const DeployNetwork& net, const NetQuantParams& qp,
                                                   const std::vector<Tensor4>& batches,
                                                   bool weights_too = true);

// MSE of each layer's own output with only that layer quantized.
std::vector<double> layer_mse(const DeployNetwork& net, const NetQuantParams& qp,
                              const std::vector<Tensor4>& batches);

enum class ReportFormat { csv, json };

void export_weight_report(const std::vector<LayerReport>& reports, const std::string& path, ReportFormat fmt);
void export_activation_report(const std::vector<ActivationReport>& reports, const std::string& path,
                              ReportFormat fmt);
void export_mse_report(const std::vector<std::pair<int, double>>& cumulative, const std::vector<double>& local,
                       const std::string& path, ReportFormat fmt);

double mse(const Tensor4& a, const Tensor4& b);

} // namespace repq
