#include "repq/quant.hpp"
#include <cstdio>

#include <algorithm>
#include <cmath>
#include <limits>

#include "repq/errors.hpp"

namespace repq {

namespace {
constexpr double kScaleFloor = 1e-12;

double levels(int bits) { return std::pow(2.0, bits) - 1.0; }
} // namespace

QuantParams QuantParams::symmetric_for(double abs_max, int bits) {
    QuantParams qp;
    qp.bits = bits;
    qp.symmetric = true;
    qp.qmax = static_cast<int>(std::pow(2.0, bits - 1)) - 1;
    qp.qmin = -qp.qmax;
    qp.scale = {std::max(kScaleFloor, 2.0 * abs_max / levels(bits))};
    return qp;
}

void CalibStats::observe(const float* data, std::size_t len) {
    if (len == 0) return;
    double lo = count ? min : data[0];
    double hi = count ? max : data[0];
    for (std::size_t i = 0; i < len; ++i) {
        const double v = data[i];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    min = lo;
    max = hi;
    count += len;
}

double CalibStats::abs_max() const { return std::max(std::abs(min), std::abs(max)); }

void CalibStats::prepare_histogram() {
    hist_range = abs_max();
    if (hist_range <= 0.0) hist_range = kScaleFloor;
    hist.assign(kHistBins, 0);
}

void CalibStats::fill_histogram(const float* data, std::size_t len) {
    if (hist.empty()) throw ConfigError("CalibStats: histogram not prepared");
    const double inv = kHistBins / (2.0 * hist_range);
    for (std::size_t i = 0; i < len; ++i) {
        int b = static_cast<int>((static_cast<double>(data[i]) + hist_range) * inv);
        b = std::clamp(b, 0, kHistBins - 1);
        ++hist[static_cast<std::size_t>(b)];
    }
}

CalibStats CalibStats::merged(const CalibStats& a, const CalibStats& b) {
    if (a.count == 0) return b;
    if (b.count == 0) return a;
    CalibStats m;
    m.min = std::min(a.min, b.min);
    m.max = std::max(a.max, b.max);
    m.count = a.count + b.count;
    if (!a.hist.empty() && !b.hist.empty() && a.hist_range == b.hist_range) {
        m.hist_range = a.hist_range;
        m.hist.resize(kHistBins);
        for (int i = 0; i < kHistBins; ++i) m.hist[i] = a.hist[i] + b.hist[i];
    }
    return m;
}

QuantParams compute_scale(const CalibStats& stats, int bits, bool symmetric) {
    if (stats.count == 0) throw ConfigError("compute_scale: no observed values");
    if (stats.abs_max() == 0.0) {
        std::fprintf(stderr, "warning: all-zero tensor observed, flooring quant scale at 1e-12\n");
    }
    if (symmetric) {
        return QuantParams::symmetric_for(stats.abs_max(), bits);
    }
    QuantParams qp;
    qp.bits = bits;
    qp.symmetric = false;
    qp.qmin = 0;
    qp.qmax = static_cast<int>(levels(bits));
    const double span = stats.max - stats.min;
    qp.scale = {std::max(kScaleFloor, span / levels(bits))};
    qp.zero_point = std::round(-stats.min / qp.scale[0]);
    return qp;
}

QuantParams compute_scale_mse(const CalibStats& stats, int bits) {
    if (stats.count == 0) throw ConfigError("compute_scale_mse: no observed values");
    if (stats.hist.empty()) throw ConfigError("compute_scale_mse: histogram required");
    const double a = stats.abs_max();
    const int qmax = static_cast<int>(std::pow(2.0, bits - 1)) - 1;
    const double bin_w = 2.0 * stats.hist_range / CalibStats::kHistBins;

    double best_amp = a, best_mse = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 100; ++i) {
        const double amp = a * (0.2 + 0.8 * i / 99.0);
        const double scale = std::max(kScaleFloor, 2.0 * amp / levels(bits));
        double mse = 0.0;
        for (int bcount = 0; bcount < CalibStats::kHistBins; ++bcount) {
            if (!stats.hist[bcount]) continue;
            const double v = -stats.hist_range + (bcount + 0.5) * bin_w;
            double q = std::round(v / scale);
            q = std::clamp(q, static_cast<double>(-qmax), static_cast<double>(qmax));
            const double err = v - q * scale;
            mse += static_cast<double>(stats.hist[bcount]) * err * err;
        }
        if (mse < best_mse) {
            best_mse = mse;
            best_amp = amp;
        }
    }
    return QuantParams::symmetric_for(best_amp, bits);
}

namespace {

// channel extent covered by one scale entry; per-channel params split the
// leading axis
std::size_t channel_block(const Shape4& s, const QuantParams& qp) {
    if (!qp.per_channel()) return s.numel();
    if (static_cast<std::size_t>(s.n) != qp.scale.size()) {
        throw ConfigError("per-channel quant params do not match leading axis");
    }
    return s.numel() / static_cast<std::size_t>(s.n);
}

} // namespace

QuantizedTensor quantize(const Tensor4& x, const QuantParams& qp) {
    if (qp.scale.empty()) throw ConfigError("quantize: empty scale");
    QuantizedTensor out;
    out.shape = x.shape();
    out.q.resize(x.numel());
    const std::size_t block = channel_block(x.shape(), qp);
    const float* src = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double s = qp.scale[i / block];
        double q = std::round(static_cast<double>(src[i]) / s + qp.zero_point);
        q = std::clamp(q, static_cast<double>(qp.qmin), static_cast<double>(qp.qmax));
        out.q[i] = static_cast<std::int32_t>(q);
    }
    return out;
}

Tensor4 dequantize(const QuantizedTensor& qt, const QuantParams& qp) {
    Tensor4 out(qt.shape.n, qt.shape.c, qt.shape.h, qt.shape.w);
    const std::size_t block = channel_block(qt.shape, qp);
    float* dst = out.data();
    for (std::size_t i = 0; i < qt.q.size(); ++i) {
        const double s = qp.scale[i / block];
        dst[i] = static_cast<float>((qt.q[i] - qp.zero_point) * s);
    }
    return out;
}

Tensor4 fake_quant(const Tensor4& x, const QuantParams& qp) {
    Tensor4 out(x.n(), x.c(), x.h(), x.w());
    const std::size_t block = channel_block(x.shape(), qp);
    const float* src = x.data();
    float* dst = out.data();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double s = qp.scale[i / block];
        double q = std::round(static_cast<double>(src[i]) / s + qp.zero_point);
        q = std::clamp(q, static_cast<double>(qp.qmin), static_cast<double>(qp.qmax));
        dst[i] = static_cast<float>((q - qp.zero_point) * s);
    }
    return out;
}

QuantParams weight_scales_per_channel(const Tensor4& weight, int bits) {
    QuantParams qp;
    qp.bits = bits;
    qp.symmetric = true;
    qp.qmax = static_cast<int>(std::pow(2.0, bits - 1)) - 1;
    qp.qmin = -qp.qmax;
    const double lv = levels(bits);
    const std::size_t block = weight.numel() / static_cast<std::size_t>(weight.n());
    qp.scale.resize(static_cast<std::size_t>(weight.n()));
    const float* src = weight.data();
    for (int oc = 0; oc < weight.n(); ++oc) {
        double a = 0.0;
        for (std::size_t i = 0; i < block; ++i) {
            a = std::max(a, std::abs(static_cast<double>(src[oc * block + i])));
        }
        qp.scale[static_cast<std::size_t>(oc)] = std::max(kScaleFloor, 2.0 * a / lv);
    }
    return qp;
}

} // namespace repq
