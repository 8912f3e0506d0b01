#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "repq/autograd.hpp"
#include "repq/errors.hpp"
#include "repq/fusion.hpp"
#include "repq/rng.hpp"

using namespace repq;

namespace {

void randomize_bn(BNParams& bn, Rng& rng) {
    for (int c = 0; c < bn.channels(); ++c) {
        bn.gamma[c] = static_cast<float>(rng.uniform(0.3, 1.8));
        bn.beta[c] = static_cast<float>(rng.uniform(-0.8, 0.8));
        bn.running_mean[c] = static_cast<float>(rng.uniform(-0.5, 0.5));
        bn.running_var[c] = static_cast<float>(rng.uniform(0.05, 2.0));
    }
}

RepBlock random_block(const BlockConfig& cfg, Rng& rng) {
    RepBlock b = RepBlock::build(cfg, rng);
    for (float& v : b.w3.weight.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (float& v : b.w1.weight.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    if (b.w3.bias) for (float& v : *b.w3.bias) v = static_cast<float>(rng.uniform(-0.3, 0.3));
    if (b.w1.bias) for (float& v : *b.w1.bias) v = static_cast<float>(rng.uniform(-0.3, 0.3));
    if (b.bn3) randomize_bn(*b.bn3, rng);
    if (b.bn1) randomize_bn(*b.bn1, rng);
    if (b.bn0) randomize_bn(*b.bn0, rng);
    if (b.bn_post) randomize_bn(*b.bn_post, rng);
    return b;
}

Tensor4 random_input(int n, int c, int h, int w, Rng& rng) {
    Tensor4 t(n, c, h, w);
    for (float& v : t.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

} // namespace

TEST_CASE("fold_bn: inverse identity gives back the kernel with zero bias") {
    Rng rng(31);
    ConvKernel k;
    k.weight = random_input(4, 3, 3, 3, rng);
    k.padding = 1;
    BNParams bn(4);
    for (int c = 0; c < 4; ++c) {
        bn.running_mean[c] = static_cast<float>(rng.uniform(-1.0, 1.0));
        bn.running_var[c] = static_cast<float>(rng.uniform(0.2, 2.0));
        bn.gamma[c] = std::sqrt(bn.running_var[c] + bn.eps);
        bn.beta[c] = bn.running_mean[c];
    }
    ConvKernel folded = fold_bn(k, bn);
    CHECK(oracle::max_abs(folded.weight, k.weight) < 1e-6);
    for (float b : *folded.bias) CHECK(std::abs(b) < 1e-6);
}

TEST_CASE("fold_bn: sigma^2 = 0 produces scale 1/sqrt(eps) = 316.2278") {
    ConvKernel k;
    k.weight = Tensor4(1, 1, 3, 3, 1.0f);
    BNParams bn(1);
    bn.running_var = {0.0f};
    ConvKernel folded = fold_bn(k, bn);
    const double want = 1.0 / std::sqrt(1e-5);
    CHECK(want == doctest::Approx(316.2278).epsilon(1e-6));
    CHECK(folded.weight.at(0, 0, 1, 1) == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("fold_bn: numeric equivalence bn(conv(x)) == conv_folded(x)") {
    Rng rng(32);
    ConvKernel k;
    k.weight = random_input(4, 2, 3, 3, rng);
    k.padding = 1;
    std::vector<float> bias(4);
    for (float& v : bias) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    k.bias = bias;
    BNParams bn(4);
    randomize_bn(bn, rng);

    Tensor4 x = random_input(2, 2, 6, 6, rng);
    const Tensor4 want = batch_norm_infer(conv2d(x, k), bn);
    const Tensor4 got = conv2d(x, fold_bn(k, bn));
    CHECK(oracle::max_abs(want, got) < 1e-5);
}

TEST_CASE("pad_1x1_to_3x3 centers the tap") {
    ConvKernel k1;
    k1.weight = Tensor4(2, 2, 1, 1);
    k1.weight.at(0, 0, 0, 0) = 2.5f;
    k1.weight.at(1, 1, 0, 0) = -1.0f;
    ConvKernel k3 = pad_1x1_to_3x3(k1);
    CHECK(k3.ksize() == 3);
    CHECK(k3.weight.at(0, 0, 1, 1) == 2.5f);
    CHECK(k3.weight.at(1, 1, 1, 1) == -1.0f);
    double offsum = 0.0;
    for (int oc = 0; oc < 2; ++oc)
        for (int ic = 0; ic < 2; ++ic)
            for (int kh = 0; kh < 3; ++kh)
                for (int kw = 0; kw < 3; ++kw)
                    if (kh != 1 || kw != 1) offsum += std::abs(k3.weight.at(oc, ic, kh, kw));
    CHECK(offsum == 0.0);

    ConvKernel wrong;
    wrong.weight = Tensor4(1, 1, 3, 3);
    CHECK_THROWS_AS(pad_1x1_to_3x3(wrong), ConfigError);
}

TEST_CASE("pad_1x1_to_3x3: conv with lifted kernel equals conv with 1x1") {
    Rng rng(33);
    ConvKernel k1;
    k1.weight = random_input(3, 2, 1, 1, rng);
    k1.stride = 1;
    k1.padding = 0;
    Tensor4 x = random_input(1, 2, 5, 5, rng);
    const Tensor4 a = conv2d(x, k1);
    const Tensor4 b = conv2d(x, pad_1x1_to_3x3(k1)); // padding 1 keeps the size
    CHECK(oracle::max_abs(a, b) == 0.0);
}

TEST_CASE("identity_kernel reproduces the input, grouped included") {
    Rng rng(34);
    for (int groups : {1, 2}) {
        Tensor4 x = random_input(2, 4, 5, 5, rng);
        const Tensor4 y = conv2d(x, identity_kernel(4, groups));
        INFO("groups=", groups);
        CHECK(oracle::max_abs(x, y) == 0.0);
    }
    ConvKernel k = identity_kernel(2, 1);
    CHECK(k.weight.at(0, 0, 1, 1) == 1.0f);
    CHECK(k.weight.at(1, 1, 1, 1) == 1.0f);
    CHECK(k.weight.at(0, 1, 1, 1) == 0.0f);
    CHECK_THROWS_AS(identity_kernel(3, 2), ConfigError);
}

TEST_CASE("fuse_block: zeroed s3 block with unit BN becomes the identity kernel") {
    Rng rng(35);
    RepBlock b = RepBlock::build(BlockConfig::preset(Variant::s3, 3, 3), rng);
    for (float& v : b.w3.weight.vec()) v = 0.0f;
    for (float& v : b.w1.weight.vec()) v = 0.0f;
    // zero branch kernels fold to zero under the fresh unit BN, leaving
    // only the identity branch
    FusedConv f = fuse_block(b);
    const ConvKernel id = identity_kernel(3, 1);
    CHECK(oracle::max_abs(f.conv.weight, id.weight) < 1e-6);
    for (float v : *f.conv.bias) CHECK(std::abs(v) < 1e-6);
}

TEST_CASE("zero-weight s4 block with post-BN gamma 0, beta c fuses to a constant map") {
    Rng rng(46);
    RepBlock b = RepBlock::build(BlockConfig::preset(Variant::s4, 3, 3), rng);
    for (float& v : b.w3.weight.vec()) v = 0.0f;
    for (float& v : b.w1.weight.vec()) v = 0.0f;
    const float c = 0.75f;
    b.bn_post->gamma = {0.0f, 0.0f, 0.0f};
    b.bn_post->beta = {c, c, c};
    FusedConv f = fuse_block(b);
    CHECK(f.conv.weight.abs_max() == 0.0);
    Tensor4 x = random_input(2, 3, 5, 5, rng);
    const Tensor4 y = f.forward(x);
    for (float v : y.vec()) CHECK(v == doctest::Approx(c).epsilon(1e-6));
}

TEST_CASE("fuse_block equivalence across the settings grid") {
    Rng rng(36);
    for (Variant v : {Variant::s0, Variant::s1, Variant::s2, Variant::s3, Variant::s4}) {
        for (int groups : {1, 2}) {
            for (int stride : {1, 2}) {
                const int c1 = 4, c2 = stride == 2 ? 8 : 4;
                RepBlock b = random_block(BlockConfig::preset(v, c1, c2, stride, groups), rng);
                Tensor4 x = random_input(2, c1, 8, 8, rng);
                const Tensor4 want = b.forward(x, RepBlock::Mode::eval);
                FusedConv f = fuse_block(b); // includes the probe self-check
                const Tensor4 got = f.forward(x);
                INFO("variant=", static_cast<int>(v), " groups=", groups, " stride=", stride);
                CHECK(oracle::max_abs(want, got) <= 1e-4);
            }
        }
    }
}

TEST_CASE("fusing a block twice is rejected") {
    Rng rng(37);
    RepBlock b = random_block(BlockConfig::preset(Variant::s0, 4, 4), rng);
    (void)fuse_block(b);
    CHECK_THROWS_AS(fuse_block(b), FusionError);
    CHECK_THROWS_AS(b.forward(Tensor4(1, 4, 4, 4), RepBlock::Mode::eval), FusionError);
}

TEST_CASE("equivalent_kernel: zeros, consistency with fuse, and detached grad") {
    Rng rng(38);
    RepBlock zero = RepBlock::build(BlockConfig::preset(Variant::s0, 3, 3), rng);
    for (float& v : zero.w3.weight.vec()) v = 0.0f;
    for (float& v : zero.w1.weight.vec()) v = 0.0f;
    CHECK(equivalent_kernel(zero).values.abs_max() == 0.0);

    RepBlock b = random_block(BlockConfig::preset(Variant::s2, 4, 4), rng);
    const EquivalentKernel eq = equivalent_kernel(b);
    RepBlock copy = b;
    FusedConv f = fuse_block(copy);
    // the identity branch in s2 contributes exactly 1 at the center of the
    // matching input channel; remove it before comparing
    for (int oc = 0; oc < 4; ++oc) {
        for (int ic = 0; ic < 4; ++ic) {
            double want = f.conv.weight.at(oc, ic, 1, 1) - (oc == ic ? 1.0 : 0.0);
            CHECK(eq.values.at(oc, ic, 0, 0) == doctest::Approx(want).epsilon(1e-5));
        }
    }

    // grad of sum(W_eq^2) via the detached-t formula vs central differences
    std::vector<Tensor4> theta = {b.w3.weight, b.w1.weight};
    auto with_weights = [&](const std::vector<Tensor4>& th) {
        RepBlock tmp = b;
        tmp.w3.weight = th[0];
        tmp.w1.weight = th[1];
        return tmp;
    };
    auto eval = [&](const std::vector<Tensor4>& th) {
        const EquivalentKernel e = equivalent_kernel(with_weights(th));
        double acc = 0.0;
        for (std::size_t i = 0; i < e.values.numel(); ++i) {
            acc += static_cast<double>(e.values.data()[i]) * e.values.data()[i];
        }
        return acc;
    };
    auto analytic = [&](const std::vector<Tensor4>& th) {
        const RepBlock tmp = with_weights(th);
        const EquivalentKernel e = equivalent_kernel(tmp);
        Tensor4 g3(4, 4, 3, 3), g1(4, 4, 1, 1);
        for (int oc = 0; oc < 4; ++oc) {
            for (int ic = 0; ic < 4; ++ic) {
                const double eqv = e.values.at(oc, ic, 0, 0);
                g3.at(oc, ic, 1, 1) = static_cast<float>(2.0 * eqv * e.t3[static_cast<std::size_t>(oc)]);
                g1.at(oc, ic, 0, 0) = static_cast<float>(2.0 * eqv * e.t1[static_cast<std::size_t>(oc)]);
            }
        }
        return std::vector<Tensor4>{g3, g1};
    };
    CHECK(grad_check(eval, analytic, theta) <= 1e-3);
}

TEST_CASE("equivalent_kernel requires both branch BNs") {
    Rng rng(39);
    RepBlock b = random_block(BlockConfig::preset(Variant::s3, 4, 4), rng);
    CHECK_THROWS_AS(equivalent_kernel(b), ConfigError);
}

TEST_CASE("fuse_network fuses every block and keeps the head") {
    Rng rng(40);
    NetworkSpec spec = NetworkSpec::a0_mini(Variant::s4, 5);
    Network net = build_network(spec, 7);
    Tensor4 x = random_input(2, 3, 32, 32, rng);
    const Tensor4 want = net.logits(x, RepBlock::Mode::eval);
    DeployNetwork dep = fuse_network(net);
    CHECK(dep.layers.size() == net.blocks.size());
    CHECK(oracle::max_abs(want, dep.logits(x)) <= 1e-4);
}
