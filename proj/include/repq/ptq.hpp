#pragma once

#include <vector>

#include "repq/dataset.hpp"
#include "repq/fusion.hpp"
#include "repq/quant.hpp"

namespace repq {

// Quantizers for one conv layer: per-output-channel weight scales and a
// per-tensor scale for the layer's input activation.
struct LayerQuant {
    QuantParams weight;
    QuantParams act_in;
};

// One entry per fused conv in forward order, then the classifier head.
struct NetQuantParams {
    std::vector<LayerQuant> layers;
    int bits = 8;
    CalibMethod method = CalibMethod::max;
};

// Runs the calibration batches through the deploy network collecting
// per-tensor activation stats (max or mse scale selection) and
// per-channel weight maxima; every layer including the head is covered.
NetQuantParams calibrate(const DeployNetwork& net, const std::vector<Tensor4>& batches,
                         CalibMethod method = CalibMethod::max, int bits = 8);

// Simulated INT8 inference: each conv computes on fake-quantized weights
// and fake-quantized input activations; biases stay float.
Tensor4 quantized_forward(const DeployNetwork& net, const NetQuantParams& qp, const Tensor4& x);

// quantize_upto: layers [0, k) run fake-quantized, the rest in FP32
// (k = layer_count() means the whole network). weights_too=false limits
// quantization to activations.
Tensor4 partially_quantized_forward(const DeployNetwork& net, const NetQuantParams& qp, const Tensor4& x,
                                    int quantize_upto, bool weights_too = true);

// single-layer toggle: only layer k computes quantized
Tensor4 single_layer_quantized_forward(const DeployNetwork& net, const NetQuantParams& qp, const Tensor4& x,
                                       int layer);

double quantized_accuracy(const DeployNetwork& net, const NetQuantParams& qp, const Dataset& data,
                          int batch_size = 256);
double deploy_accuracy(const DeployNetwork& net, const Dataset& data, int batch_size = 256);

} // namespace repq
