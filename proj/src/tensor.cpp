#include "repq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "repq/errors.hpp"

namespace repq {

std::string Shape4::str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
}

Tensor4 Tensor4::from_data(Shape4 s, std::vector<float> values) {
    if (values.size() != s.numel()) {
        throw ConfigError("tensor data length " + std::to_string(values.size()) +
                          " does not match shape " + s.str());
    }
    Tensor4 t;
    t.shape_ = s;
    t.data_ = std::move(values);
    return t;
}

bool Tensor4::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor4::abs_max() const {
    double m = 0.0;
    for (float v : data_) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
}

void ensure_finite(const Tensor4& t, const char* context) {
    if (!t.all_finite()) {
        throw NumericError(std::string("non-finite values in ") + context);
    }
}

void ConvKernel::validate() const {
    const int k = ksize();
    if (k != 1 && k != 3) {
        throw ConfigError("kernel size must be 1 or 3, got " + std::to_string(k));
    }
    if (weight.h() != weight.w()) {
        throw ConfigError("kernel must be square");
    }
    if (groups < 1) throw ConfigError("groups must be >= 1");
    if (stride < 1) throw ConfigError("stride must be positive");
    if (padding < 0) throw ConfigError("padding must be non-negative");
    if (out_channels() % groups != 0) {
        throw ConfigError("out channels not divisible by groups");
    }
    if (bias && static_cast<int>(bias->size()) != out_channels()) {
        throw ConfigError("bias length does not match out channels");
    }
}

void BNParams::validate() const {
    const std::size_t c = gamma.size();
    if (beta.size() != c || running_mean.size() != c || running_var.size() != c) {
        throw ConfigError("BN parameter vectors have unequal lengths");
    }
    if (!(eps > 0.0f)) throw ConfigError("BN eps must be positive");
    for (float v : running_var) {
        if (v < 0.0f) throw ConfigError("BN running variance must be non-negative");
    }
}

Tensor4 conv2d(const Tensor4& x, const ConvKernel& k) {
    k.validate();
    if (x.c() != k.in_channels()) {
        throw ConfigError("conv2d: input has " + std::to_string(x.c()) +
                          " channels, kernel expects " + std::to_string(k.in_channels()));
    }
    ensure_finite(x, "conv2d input");

    const int n = x.n(), c1 = x.c(), h = x.h(), w = x.w();
    const int c2 = k.out_channels(), ks = k.ksize();
    const int s = k.stride, p = k.padding;
    const int oh = (h + 2 * p - ks) / s + 1;
    const int ow = (w + 2 * p - ks) / s + 1;
    if (oh <= 0 || ow <= 0) {
        throw ConfigError("conv2d: non-positive output size for input " + x.shape().str());
    }
    const int cg1 = c1 / k.groups; // input channels per group
    const int cg2 = c2 / k.groups;

    Tensor4 y(n, c2, oh, ow);

#pragma omp parallel for collapse(2) schedule(static)
    for (int in = 0; in < n; ++in) {
        for (int oc = 0; oc < c2; ++oc) {
            std::vector<double> acc(static_cast<std::size_t>(oh) * ow, 0.0);
            const int g = oc / cg2;
            for (int icg = 0; icg < cg1; ++icg) {
                const int ic = g * cg1 + icg;
                const float* xplane = x.ptr(in, ic, 0, 0);
                for (int kh = 0; kh < ks; ++kh) {
                    for (int kw = 0; kw < ks; ++kw) {
                        const double wt = k.weight.at(oc, icg, kh, kw);
                        if (wt == 0.0) continue;
                        // output rows/cols whose input tap lands in bounds
                        const int oy0 = std::max(0, (p - kh + s - 1) / s);
                        const int oy1 = std::min(oh - 1, (h - 1 + p - kh) / s);
                        const int ox0 = std::max(0, (p - kw + s - 1) / s);
                        const int ox1 = std::min(ow - 1, (w - 1 + p - kw) / s);
                        for (int y2 = oy0; y2 <= oy1; ++y2) {
                            const int iy = y2 * s - p + kh;
                            const float* xrow = xplane + static_cast<std::size_t>(iy) * w;
                            double* arow = acc.data() + static_cast<std::size_t>(y2) * ow;
                            for (int x2 = ox0; x2 <= ox1; ++x2) {
                                arow[x2] += wt * xrow[x2 * s - p + kw];
                            }
                        }
                    }
                }
            }
            const double b = k.bias ? static_cast<double>((*k.bias)[oc]) : 0.0;
            float* yplane = y.ptr(in, oc, 0, 0);
            for (std::size_t i = 0; i < acc.size(); ++i) {
                yplane[i] = static_cast<float>(acc[i] + b);
            }
        }
    }
    return y;
}

Tensor4 batch_norm_train(const Tensor4& x, BNParams& bn, float momentum) {
    bn.validate();
    if (x.c() != bn.channels()) {
        throw ConfigError("batch_norm_train: channel mismatch");
    }
    const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
    const std::size_t count = static_cast<std::size_t>(n) * h * w;
    if (count < 2) {
        throw NumericError("batch_norm_train: fewer than 2 elements per channel (degenerate batch)");
    }

    Tensor4 y(n, c, h, w);
#pragma omp parallel for schedule(static)
    for (int ic = 0; ic < c; ++ic) {
        double sum = 0.0, sumsq = 0.0;
        for (int in = 0; in < n; ++in) {
            const float* plane = x.ptr(in, ic, 0, 0);
            for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) {
                const double v = plane[i];
                sum += v;
                sumsq += v * v;
            }
        }
        const double mean = sum / static_cast<double>(count);
        const double var = std::max(0.0, sumsq / static_cast<double>(count) - mean * mean);
        const double inv = 1.0 / std::sqrt(static_cast<double>(bn.eps) + var);
        const double g = bn.gamma[ic], b = bn.beta[ic];
        for (int in = 0; in < n; ++in) {
            const float* src = x.ptr(in, ic, 0, 0);
            float* dst = y.ptr(in, ic, 0, 0);
            for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) {
                dst[i] = static_cast<float>(g * (src[i] - mean) * inv + b);
            }
        }
        const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
        bn.running_mean[ic] = static_cast<float>((1.0 - momentum) * bn.running_mean[ic] + momentum * mean);
        bn.running_var[ic] = static_cast<float>((1.0 - momentum) * bn.running_var[ic] + momentum * unbiased);
    }
    ensure_finite(y, "batch_norm_train output");
    return y;
}

Tensor4 batch_norm_infer(const Tensor4& x, const BNParams& bn) {
    bn.validate();
    if (x.c() != bn.channels()) {
        throw ConfigError("batch_norm_infer: channel mismatch");
    }
    const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
    Tensor4 y(n, c, h, w);
    for (int ic = 0; ic < c; ++ic) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(bn.eps) + static_cast<double>(bn.running_var[ic]));
        const double g = bn.gamma[ic], b = bn.beta[ic], m = bn.running_mean[ic];
        for (int in = 0; in < n; ++in) {
            const float* src = x.ptr(in, ic, 0, 0);
            float* dst = y.ptr(in, ic, 0, 0);
            for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) {
                dst[i] = static_cast<float>(g * (src[i] - m) * inv + b);
            }
        }
    }
    return y;
}

Tensor4 relu(const Tensor4& x) {
    Tensor4 y = x;
    for (float& v : y.vec()) v = v > 0.0f ? v : 0.0f;
    return y;
}

Tensor4 add(const std::vector<const Tensor4*>& xs) {
    if (xs.empty()) throw ConfigError("add: no operands");
    Tensor4 y = *xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (!(xs[i]->shape() == y.shape())) {
            throw ConfigError("add: shape mismatch " + xs[i]->shape().str() + " vs " + y.shape().str());
        }
        const float* src = xs[i]->data();
        float* dst = y.data();
        for (std::size_t j = 0; j < y.numel(); ++j) dst[j] += src[j];
    }
    return y;
}

Tensor4 global_avg_pool(const Tensor4& x) {
    const int n = x.n(), c = x.c();
    const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
    Tensor4 y(n, c, 1, 1);
    for (int in = 0; in < n; ++in) {
        for (int ic = 0; ic < c; ++ic) {
            double sum = 0.0;
            const float* plane = x.ptr(in, ic, 0, 0);
            for (std::size_t i = 0; i < hw; ++i) sum += plane[i];
            y.at(in, ic, 0, 0) = static_cast<float>(sum / static_cast<double>(hw));
        }
    }
    return y;
}

} // namespace repq
