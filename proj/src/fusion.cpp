#include "repq/fusion.hpp"

#include <cmath>

#include "repq/errors.hpp"
#include "repq/rng.hpp"

namespace repq {

namespace {

// double-precision kernel used while folding; cast to float only once
// the whole block is assembled
struct DKernel {
    Shape4 shape;
    std::vector<double> w;
    std::vector<double> b; // length c2

    static DKernel zeros(int c2, int cg, int k) {
        DKernel d;
        d.shape = {c2, cg, k, k};
        d.w.assign(d.shape.numel(), 0.0);
        d.b.assign(static_cast<std::size_t>(c2), 0.0);
        return d;
    }
    static DKernel of(const ConvKernel& k) {
        DKernel d;
        d.shape = k.weight.shape();
        d.w.assign(k.weight.vec().begin(), k.weight.vec().end());
        d.b.assign(static_cast<std::size_t>(k.out_channels()), 0.0);
        if (k.bias) {
            for (std::size_t i = 0; i < k.bias->size(); ++i) d.b[i] = (*k.bias)[i];
        }
        return d;
    }
    double& at(int oc, int ic, int kh, int kw) {
        return w[((static_cast<std::size_t>(oc) * shape.c + ic) * shape.h + kh) * shape.w + kw];
    }
};

void fold_bn_inplace(DKernel& k, const BNParams& bn) {
    const std::size_t per_oc = k.w.size() / static_cast<std::size_t>(k.shape.n);
    for (int oc = 0; oc < k.shape.n; ++oc) {
        const double t = static_cast<double>(bn.gamma[oc]) /
                         std::sqrt(static_cast<double>(bn.eps) + static_cast<double>(bn.running_var[oc]));
        for (std::size_t i = 0; i < per_oc; ++i) k.w[oc * per_oc + i] *= t;
        k.b[static_cast<std::size_t>(oc)] =
            static_cast<double>(bn.beta[oc]) + (k.b[static_cast<std::size_t>(oc)] - static_cast<double>(bn.running_mean[oc])) * t;
    }
}

DKernel lift_1x1(const DKernel& k1) {
    DKernel out = DKernel::zeros(k1.shape.n, k1.shape.c, 3);
    out.b = k1.b;
    for (int oc = 0; oc < k1.shape.n; ++oc) {
        for (int ic = 0; ic < k1.shape.c; ++ic) {
            out.at(oc, ic, 1, 1) = k1.w[static_cast<std::size_t>(oc) * k1.shape.c + ic];
        }
    }
    return out;
}

void accumulate(DKernel& dst, const DKernel& src) {
    for (std::size_t i = 0; i < dst.w.size(); ++i) dst.w[i] += src.w[i];
    for (std::size_t i = 0; i < dst.b.size(); ++i) dst.b[i] += src.b[i];
}

ConvKernel to_float(const DKernel& d, int stride, int padding, int groups) {
    ConvKernel k;
    std::vector<float> wf(d.w.size());
    for (std::size_t i = 0; i < d.w.size(); ++i) wf[i] = static_cast<float>(d.w[i]);
    k.weight = Tensor4::from_data(d.shape, std::move(wf));
    std::vector<float> bf(d.b.size());
    for (std::size_t i = 0; i < d.b.size(); ++i) bf[i] = static_cast<float>(d.b[i]);
    k.bias = std::move(bf);
    k.stride = stride;
    k.padding = padding;
    k.groups = groups;
    return k;
}

} // namespace

std::vector<double> fold_coefficients(const BNParams& bn) {
    std::vector<double> t(bn.gamma.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<double>(bn.gamma[i]) /
               std::sqrt(static_cast<double>(bn.eps) + static_cast<double>(bn.running_var[i]));
    }
    return t;
}

ConvKernel fold_bn(const ConvKernel& k, const BNParams& bn) {
    if (bn.channels() != k.out_channels()) {
        throw ConfigError("fold_bn: BN channels do not match conv output channels");
    }
    DKernel d = DKernel::of(k);
    fold_bn_inplace(d, bn);
    return to_float(d, k.stride, k.padding, k.groups);
}

ConvKernel pad_1x1_to_3x3(const ConvKernel& k1) {
    if (k1.ksize() != 1) throw ConfigError("pad_1x1_to_3x3: kernel is not 1x1");
    DKernel d = lift_1x1(DKernel::of(k1));
    ConvKernel out = to_float(d, k1.stride, 1, k1.groups);
    if (!k1.bias) out.bias.reset();
    return out;
}

ConvKernel identity_kernel(int channels, int groups) {
    if (channels <= 0 || groups <= 0 || channels % groups != 0) {
        throw ConfigError("identity_kernel: channels must be divisible by groups");
    }
    const int cg = channels / groups;
    ConvKernel k;
    k.weight = Tensor4(channels, cg, 3, 3);
    k.stride = 1;
    k.padding = 1;
    k.groups = groups;
    for (int oc = 0; oc < channels; ++oc) {
        k.weight.at(oc, oc % cg, 1, 1) = 1.0f;
    }
    return k;
}

EquivalentKernel equivalent_kernel(const RepBlock& b) {
    if (!b.bn3 || !b.bn1) {
        throw ConfigError("equivalent_kernel: requires BN on both 3x3 and 1x1 branches");
    }
    EquivalentKernel eq;
    eq.t3 = fold_coefficients(*b.bn3);
    eq.t1 = fold_coefficients(*b.bn1);
    const int c2 = b.w3.out_channels();
    const int cg = b.w3.weight.c();
    eq.values = Tensor4(c2, cg, 1, 1);
    for (int oc = 0; oc < c2; ++oc) {
        for (int ic = 0; ic < cg; ++ic) {
            const double v = eq.t3[oc] * static_cast<double>(b.w3.weight.at(oc, ic, 1, 1)) +
                             eq.t1[oc] * static_cast<double>(b.w1.weight.at(oc, ic, 0, 0));
            eq.values.at(oc, ic, 0, 0) = static_cast<float>(v);
        }
    }
    return eq;
}

double max_abs_diff(const Tensor4& a, const Tensor4& b) {
    if (!(a.shape() == b.shape())) throw ConfigError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    }
    return m;
}

FusedConv fuse_block(RepBlock& b) {
    if (b.fused) throw FusionError("block already fused");
    b.config.validate();
    const int c2 = b.config.out_channels;
    const int cg = b.config.in_channels / b.config.groups;

    DKernel total = DKernel::zeros(c2, cg, 3);

    DKernel d3 = DKernel::of(b.w3);
    if (b.bn3) fold_bn_inplace(d3, *b.bn3);
    accumulate(total, d3);

    DKernel d1 = DKernel::of(b.w1);
    if (b.bn1) fold_bn_inplace(d1, *b.bn1);
    accumulate(total, lift_1x1(d1));

    if (b.config.identity_enabled) {
        DKernel d0 = DKernel::of(identity_kernel(b.config.in_channels, b.config.groups));
        if (b.bn0) fold_bn_inplace(d0, *b.bn0);
        accumulate(total, d0);
    }

    if (b.bn_post) fold_bn_inplace(total, *b.bn_post);

    FusedConv fused;
    fused.conv = to_float(total, b.config.stride, 1, b.config.groups);

    // self-check against the eval-mode train path on a fixed probe batch
    Rng rng = Rng::stream(0x9e1ful, "fusion-probe");
    Tensor4 probe(4, b.config.in_channels, 8, 8);
    for (float& v : probe.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const Tensor4 want = b.forward(probe, RepBlock::Mode::eval);
    const Tensor4 got = fused.forward(probe);
    const double diff = max_abs_diff(want, got);
    if (diff > 1e-4) {
        throw FusionError("fusion self-check failed: max-abs diff " + std::to_string(diff));
    }

    b.fused = true;
    return fused;
}

DeployNetwork fuse_network(Network& net) {
    DeployNetwork out;
    out.spec = net.spec;
    out.layers.reserve(net.blocks.size());
    for (RepBlock& b : net.blocks) out.layers.push_back(fuse_block(b));
    out.head = net.head;
    return out;
}

Tensor4 DeployNetwork::logits(const Tensor4& x) const {
    Tensor4 t = x;
    for (const FusedConv& f : layers) t = f.forward(t);
    t = global_avg_pool(t);
    return conv2d(t, head);
}

} // namespace repq
