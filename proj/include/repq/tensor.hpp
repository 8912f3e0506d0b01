#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace repq {

struct Shape4 {
    int n = 0, c = 0, h = 0, w = 0;
    bool operator==(const Shape4&) const = default;
    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::string str() const;
};

// Rank-4 activation/parameter carrier, NCHW row-major, float32 storage.
class Tensor4 {
public:
    Tensor4() = default;
    Tensor4(int n, int c, int h, int w, float fill = 0.0f)
        : shape_{n, c, h, w}, data_(shape_.numel(), fill) {}
    static Tensor4 from_data(Shape4 s, std::vector<float> values);

    const Shape4& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t numel() const { return data_.size(); }

    float& at(int in, int ic, int iy, int ix) {
        return data_[((static_cast<std::size_t>(in) * shape_.c + ic) * shape_.h + iy) * shape_.w + ix];
    }
    float at(int in, int ic, int iy, int ix) const {
        return data_[((static_cast<std::size_t>(in) * shape_.c + ic) * shape_.h + iy) * shape_.w + ix];
    }
    float* ptr(int in, int ic, int iy = 0, int ix = 0) {
        return data_.data() + (((static_cast<std::size_t>(in) * shape_.c + ic) * shape_.h + iy) * shape_.w + ix);
    }
    const float* ptr(int in, int ic, int iy = 0, int ix = 0) const {
        return data_.data() + (((static_cast<std::size_t>(in) * shape_.c + ic) * shape_.h + iy) * shape_.w + ix);
    }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    bool all_finite() const;
    double abs_max() const;

private:
    Shape4 shape_{};
    std::vector<float> data_;
};

// Grouped convolution weight (c2, c1/g, k, k) with optional bias and
// cross-correlation hyperparameters.
struct ConvKernel {
    Tensor4 weight;
    std::optional<std::vector<float>> bias;
    int stride = 1;
    int padding = 0;
    int groups = 1;

    int out_channels() const { return weight.n(); }
    int in_channels() const { return weight.c() * groups; }
    int ksize() const { return weight.h(); }
    void validate() const; // k in {1,3}, grouping divides both channel counts
};

// Per-channel batch-norm state.
struct BNParams {
    std::vector<float> gamma, beta, running_mean, running_var;
    float eps = 1e-5f;

    BNParams() = default;
    explicit BNParams(int channels)
        : gamma(channels, 1.0f), beta(channels, 0.0f),
          running_mean(channels, 0.0f), running_var(channels, 1.0f) {}

    int channels() const { return static_cast<int>(gamma.size()); }
    void validate() const; // eps > 0, running_var >= 0, equal lengths
};

// Cross-correlation; output spatial size floor((h + 2p - k)/s) + 1.
// Accumulates each output element in double, rounds once to float.
Tensor4 conv2d(const Tensor4& x, const ConvKernel& k);

// Normalizes by current batch statistics (biased variance), applies
// gamma/beta, and updates running stats by EMA with the given momentum
// (unbiased variance feeds the running estimate).
Tensor4 batch_norm_train(const Tensor4& x, BNParams& bn, float momentum = 0.1f);

// y = gamma * (x - running_mean) / sqrt(eps + running_var) + beta.
Tensor4 batch_norm_infer(const Tensor4& x, const BNParams& bn);

Tensor4 relu(const Tensor4& x);
Tensor4 add(const std::vector<const Tensor4*>& xs);

// Classifier-head primitives: spatial mean per channel, producing (n,c,1,1).
Tensor4 global_avg_pool(const Tensor4& x);

void ensure_finite(const Tensor4& t, const char* context);

} // namespace repq
