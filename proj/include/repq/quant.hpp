#pragma once

#include <cstdint>
#include <vector>

#include "repq/tensor.hpp"

namespace repq {

// Uniform quantizer parameters. Symmetric INT8 uses [-127, 127]; the
// scale is per-tensor (size 1) or per-output-channel.
struct QuantParams {
    int bits = 8;
    bool symmetric = true;
    std::vector<double> scale; // never empty once computed; floor 1e-12
    double zero_point = 0.0;   // asymmetric only
    int qmin = -127;
    int qmax = 127;

    bool per_channel() const { return scale.size() > 1; }
    static QuantParams symmetric_for(double abs_max, int bits = 8);
};

// Running min/max plus an optional fixed-range histogram used by the
// mse scale search. min/max accumulation merges associatively.
struct CalibStats {
    double min = 0.0;
    double max = 0.0;
    std::uint64_t count = 0;

    // histogram over [-hist_range, hist_range]; filled in a second pass
    // once the final range is known
    std::vector<std::uint64_t> hist;
    double hist_range = 0.0;
    static constexpr int kHistBins = 2048;

    void observe(const float* data, std::size_t len);
    void observe(const Tensor4& t) { observe(t.data(), t.numel()); }
    void prepare_histogram();
    void fill_histogram(const float* data, std::size_t len);
    void fill_histogram(const Tensor4& t) { fill_histogram(t.data(), t.numel()); }
    double abs_max() const;

    static CalibStats merged(const CalibStats& a, const CalibStats& b);
};

enum class CalibMethod { max, mse };

// symmetric: a = max(|min|, |max|), scale = 2a / (2^bits - 1).
// asymmetric: scale = (max - min) / (2^bits - 1), zero point from min.
QuantParams compute_scale(const CalibStats& stats, int bits, bool symmetric);

// mse variant for symmetric per-tensor activation scales: searches 100
// candidate amplitudes in [0.2a, a] minimizing histogram-weighted
// dequantization MSE.
QuantParams compute_scale_mse(const CalibStats& stats, int bits);

struct QuantizedTensor {
    Shape4 shape;
    std::vector<std::int32_t> q;
};

// Round half away from zero, then clip to [qmin, qmax]. The rounding
// rule for the whole project lives here.
QuantizedTensor quantize(const Tensor4& x, const QuantParams& qp);
Tensor4 dequantize(const QuantizedTensor& q, const QuantParams& qp);

// dequantize(quantize(x)); |x - out| <= scale/2 for in-range x.
// Per-channel params apply along the leading (output-channel) axis.
Tensor4 fake_quant(const Tensor4& x, const QuantParams& qp);

// Per-output-channel symmetric max scales for a conv weight tensor.
QuantParams weight_scales_per_channel(const Tensor4& weight, int bits = 8);

} // namespace repq
