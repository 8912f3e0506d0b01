#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "repq/errors.hpp"
#include "repq/quant.hpp"
#include "repq/rng.hpp"

using namespace repq;

TEST_CASE("compute_scale: range [-1,1] at 8 bits gives exactly 2/255") {
    CalibStats s;
    const float v[2] = {-1.0f, 1.0f};
    s.observe(v, 2);
    const QuantParams qp = compute_scale(s, 8, true);
    CHECK(qp.scale[0] == 2.0 / 255.0);
    CHECK(qp.qmin == -127);
    CHECK(qp.qmax == 127);
}

TEST_CASE("compute_scale: symmetric range uses max magnitude") {
    CalibStats s;
    const float v[2] = {0.0f, 1.0f};
    s.observe(v, 2);
    const QuantParams qp = compute_scale(s, 8, true);
    CHECK(qp.scale[0] == 2.0 / 255.0); // a = max(|0|, |1|) = 1
}

TEST_CASE("compute_scale matches recomputation from raw values") {
    Rng rng(61);
    Tensor4 x(2, 3, 8, 8);
    for (float& v : x.vec()) v = static_cast<float>(rng.uniform(-3.0, 5.0));
    CalibStats s;
    s.observe(x);
    double a = 0.0;
    for (float v : x.vec()) a = std::max(a, std::abs(static_cast<double>(v)));
    const QuantParams qp = compute_scale(s, 8, true);
    CHECK(qp.scale[0] == doctest::Approx(2.0 * a / 255.0).epsilon(1e-15));
}

TEST_CASE("compute_scale floors the all-zero tensor") {
    CalibStats s;
    const float v[3] = {0.0f, 0.0f, 0.0f};
    s.observe(v, 3);
    const QuantParams qp = compute_scale(s, 8, true);
    CHECK(qp.scale[0] == 1e-12);
}

TEST_CASE("quantize: zero maps to zero; 0.5 at scale 2/255 hits 64; clipping") {
    QuantParams qp = QuantParams::symmetric_for(1.0, 8);
    Tensor4 x(1, 1, 1, 3);
    x.vec() = {0.0f, 0.5f, 1.5f};
    const QuantizedTensor q = quantize(x, qp);
    CHECK(q.q[0] == 0);
    CHECK(q.q[1] == 64);  // round(63.75) away from zero
    CHECK(q.q[2] == 127); // round(191.25) clipped
}

TEST_CASE("quantize output always lies in [qmin, qmax]") {
    Rng rng(62);
    QuantParams qp = QuantParams::symmetric_for(0.5, 8);
    Tensor4 x(1, 1, 4, 64);
    for (float& v : x.vec()) v = static_cast<float>(rng.uniform(-10.0, 10.0));
    const QuantizedTensor q = quantize(x, qp);
    for (std::int32_t v : q.q) {
        CHECK(v >= qp.qmin);
        CHECK(v <= qp.qmax);
    }
}

TEST_CASE("fake_quant: on-grid values unchanged, idempotent") {
    QuantParams qp = QuantParams::symmetric_for(1.0, 8);
    Tensor4 x(1, 1, 1, 5);
    x.vec() = {0.0f, static_cast<float>(qp.scale[0] * 13), static_cast<float>(-qp.scale[0] * 127),
               static_cast<float>(qp.scale[0] * 64), static_cast<float>(-qp.scale[0] * 2)};
    const Tensor4 y = fake_quant(x, qp);
    for (std::size_t i = 0; i < 5; ++i) CHECK(y.vec()[i] == doctest::Approx(x.vec()[i]).epsilon(1e-7));

    Rng rng(63);
    Tensor4 r(1, 1, 8, 32);
    for (float& v : r.vec()) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    const Tensor4 once = fake_quant(r, qp);
    const Tensor4 twice = fake_quant(once, qp);
    CHECK(once.vec() == twice.vec());
}

TEST_CASE("quantization error bound |x - fq(x)| <= scale/2 in range") {
    Rng rng(64);
    QuantParams qp = QuantParams::symmetric_for(1.0, 8);
    Tensor4 x(1, 1, 100, 100);
    for (float& v : x.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const Tensor4 y = fake_quant(x, qp);
    const double half = qp.scale[0] / 2.0 + 1e-12;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(std::abs(static_cast<double>(x.vec()[i]) - y.vec()[i]) <= half);
    }
}

TEST_CASE("error variance approaches scale^2/12 for uniform data") {
    Rng rng(65);
    QuantParams qp = QuantParams::symmetric_for(1.0, 8);
    const std::size_t n = 1000000;
    double sum = 0.0, sumsq = 0.0;
    Tensor4 chunk(1, 1, 1, 1000);
    for (std::size_t block = 0; block < n / 1000; ++block) {
        for (float& v : chunk.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        const Tensor4 fq = fake_quant(chunk, qp);
        for (std::size_t i = 0; i < 1000; ++i) {
            const double e = static_cast<double>(chunk.vec()[i]) - fq.vec()[i];
            sum += e;
            sumsq += e * e;
        }
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    const double want = qp.scale[0] * qp.scale[0] / 12.0;
    CHECK(std::abs(var - want) / want < 0.05);
}

TEST_CASE("scale monotonicity: larger observed max never shrinks the scale") {
    CalibStats a;
    const float va[2] = {-0.5f, 0.7f};
    a.observe(va, 2);
    CalibStats b = a;
    const float vb[1] = {2.5f};
    b.observe(vb, 1);
    CHECK(compute_scale(b, 8, true).scale[0] >= compute_scale(a, 8, true).scale[0]);
}

TEST_CASE("calib stats merge is associative and commutative on min/max") {
    Rng rng(66);
    std::vector<CalibStats> parts(3);
    for (int p = 0; p < 3; ++p) {
        Tensor4 x(1, 1, 4, 16);
        for (float& v : x.vec()) v = static_cast<float>(rng.uniform(-4.0 + p, 3.0 + p));
        parts[static_cast<std::size_t>(p)].observe(x);
    }
    const CalibStats ab_c = CalibStats::merged(CalibStats::merged(parts[0], parts[1]), parts[2]);
    const CalibStats a_bc = CalibStats::merged(parts[0], CalibStats::merged(parts[1], parts[2]));
    const CalibStats ba_c = CalibStats::merged(CalibStats::merged(parts[1], parts[0]), parts[2]);
    CHECK(ab_c.min == a_bc.min);
    CHECK(ab_c.max == a_bc.max);
    CHECK(ab_c.count == a_bc.count);
    CHECK(ab_c.min == ba_c.min);
    CHECK(ab_c.max == ba_c.max);
}

TEST_CASE("mse scale search dodges a heavy-tailed outlier") {
    Rng rng(67);
    // bulk uniform in [-1,1] plus one outlier at 100
    const std::size_t n = 300000;
    Tensor4 bulk(1, 1, 1, 1000);
    CalibStats s;
    for (std::size_t block = 0; block < n / 1000; ++block) {
        for (float& v : bulk.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        s.observe(bulk);
    }
    const float outlier = 100.0f;
    s.observe(&outlier, 1);

    s.prepare_histogram();
    Rng rng2(67); // refill identically
    for (std::size_t block = 0; block < n / 1000; ++block) {
        for (float& v : bulk.vec()) v = static_cast<float>(rng2.uniform(-1.0, 1.0));
        s.fill_histogram(bulk);
    }
    s.fill_histogram(&outlier, 1);

    const QuantParams mse_qp = compute_scale_mse(s, 8);
    const QuantParams max_qp = compute_scale(s, 8, true);
    CHECK(mse_qp.scale[0] < max_qp.scale[0]);
}

TEST_CASE("per-channel weight scales use each channel's max") {
    Tensor4 w(2, 1, 1, 2);
    w.vec() = {0.5f, -0.25f, 2.0f, 1.0f};
    const QuantParams qp = weight_scales_per_channel(w, 8);
    REQUIRE(qp.scale.size() == 2);
    CHECK(qp.scale[0] == doctest::Approx(2.0 * 0.5 / 255.0).epsilon(1e-15));
    CHECK(qp.scale[1] == doctest::Approx(2.0 * 2.0 / 255.0).epsilon(1e-15));
}

TEST_CASE("dequantize inverts quantize on representable values") {
    QuantParams qp = QuantParams::symmetric_for(1.0, 8);
    Tensor4 x(1, 1, 1, 4);
    x.vec() = {0.25f, -0.75f, 0.998f, -1.0f};
    const Tensor4 r = dequantize(quantize(x, qp), qp);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(r.vec()[i] - x.vec()[i]) <= qp.scale[0] / 2.0 + 1e-9);
    }
}

TEST_CASE("asymmetric scale follows the general formula") {
    CalibStats s;
    const float v[2] = {-0.5f, 1.5f};
    s.observe(v, 2);
    const QuantParams qp = compute_scale(s, 8, false);
    CHECK(qp.scale[0] == doctest::Approx(2.0 / 255.0).epsilon(1e-15));
    CHECK(qp.qmin == 0);
    CHECK(qp.qmax == 255);
    CHECK(qp.zero_point == doctest::Approx(std::round(0.5 / (2.0 / 255.0))));
}

TEST_CASE("empty stats are rejected") {
    CalibStats s;
    CHECK_THROWS_AS(compute_scale(s, 8, true), ConfigError);
}
