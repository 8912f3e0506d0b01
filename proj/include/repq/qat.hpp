#pragma once

#include "repq/ptq.hpp"
#include "repq/training.hpp"

namespace repq {

// Fine-tunes a fused (deploy-mode) network with fake quantization in the
// forward pass and straight-through gradients. Activation scales stay
// fixed from calibration; weight scales track the current weights.
TrainHistory qat_finetune(DeployNetwork& net, const Dataset& data, const OptimConfig& cfg,
                          const NetQuantParams& qp);

} // namespace repq
