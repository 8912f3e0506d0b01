// numpy-facing bindings for the core operations: conv/BN primitives,
// reparameterizable blocks with exact fusion, and the INT8 quantizer.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "repq/block.hpp"
#include "repq/errors.hpp"
#include "repq/fusion.hpp"
#include "repq/losses.hpp"
#include "repq/quant.hpp"
#include "repq/rng.hpp"
#include "repq/training.hpp"

namespace py = pybind11;
using namespace repq;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor4 tensor_from(const FloatArray& a) {
    if (a.ndim() != 4) throw ConfigError("expected a rank-4 float array (n, c, h, w)");
    Shape4 s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
             static_cast<int>(a.shape(3))};
    std::vector<float> data(a.data(), a.data() + a.size());
    return Tensor4::from_data(s, std::move(data));
}

FloatArray array_from(const Tensor4& t) {
    FloatArray a({t.n(), t.c(), t.h(), t.w()});
    std::copy(t.vec().begin(), t.vec().end(), a.mutable_data());
    return a;
}

std::vector<float> vec_from(const FloatArray& a) {
    return {a.data(), a.data() + a.size()};
}

BNParams bn_from(const FloatArray& gamma, const FloatArray& beta, const FloatArray& mean,
                 const FloatArray& var, float eps) {
    BNParams bn;
    bn.gamma = vec_from(gamma);
    bn.beta = vec_from(beta);
    bn.running_mean = vec_from(mean);
    bn.running_var = vec_from(var);
    bn.eps = eps;
    bn.validate();
    return bn;
}

Variant variant_of(const std::string& name) {
    if (name == "s0") return Variant::s0;
    if (name == "s1") return Variant::s1;
    if (name == "s2") return Variant::s2;
    if (name == "s3") return Variant::s3;
    if (name == "s4") return Variant::s4;
    throw ConfigError("unknown preset '" + name + "' (expected s0..s4)");
}

// python-facing block wrapper holding the train-form and, once fused,
// the deploy-form conv
struct PyBlock {
    RepBlock block;
    std::optional<FusedConv> fused;

    PyBlock(const std::string& preset, int c1, int c2, int stride, int groups, std::uint64_t seed) {
        Rng rng = Rng::stream(seed, "init");
        block = RepBlock::build(BlockConfig::preset(variant_of(preset), c1, c2, stride, groups), rng);
    }

    void randomize(std::uint64_t seed) {
        Rng rng = Rng::stream(seed, "randomize");
        for (float& v : block.w3.weight.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        for (float& v : block.w1.weight.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        auto rand_bn = [&](std::optional<BNParams>& bn) {
            if (!bn) return;
            for (int i = 0; i < bn->channels(); ++i) {
                bn->gamma[i] = static_cast<float>(rng.uniform(0.3, 1.8));
                bn->beta[i] = static_cast<float>(rng.uniform(-0.8, 0.8));
                bn->running_mean[i] = static_cast<float>(rng.uniform(-0.5, 0.5));
                bn->running_var[i] = static_cast<float>(rng.uniform(0.05, 2.0));
            }
        };
        rand_bn(block.bn3);
        rand_bn(block.bn1);
        rand_bn(block.bn0);
        rand_bn(block.bn_post);
    }

    FloatArray forward(const FloatArray& x, bool train) {
        return array_from(block.forward(tensor_from(x), train ? RepBlock::Mode::train : RepBlock::Mode::eval));
    }

    py::tuple fuse() {
        fused = fuse_block(block);
        py::array_t<float> b(static_cast<py::ssize_t>(fused->conv.bias->size()));
        std::copy(fused->conv.bias->begin(), fused->conv.bias->end(), b.mutable_data());
        return py::make_tuple(array_from(fused->conv.weight), b);
    }

    FloatArray deploy_forward(const FloatArray& x) {
        if (!fused) throw FusionError("call fuse() first");
        return array_from(fused->forward(tensor_from(x)));
    }

    double custom_l2() const { return repq::custom_l2(block); }
    double custom_l2_no_denom() const { return repq::custom_l2_no_denom(block); }
};

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "reparameterizable conv blocks, exact fusion, and INT8 quantization";

    m.def(
        "conv2d",
        [](const FloatArray& x, const FloatArray& w, py::object bias, int stride, int padding, int groups) {
            ConvKernel k;
            k.weight = tensor_from(w);
            if (!bias.is_none()) k.bias = vec_from(bias.cast<FloatArray>());
            k.stride = stride;
            k.padding = padding;
            k.groups = groups;
            return array_from(conv2d(tensor_from(x), k));
        },
        py::arg("x"), py::arg("weight"), py::arg("bias") = py::none(), py::arg("stride") = 1,
        py::arg("padding") = 0, py::arg("groups") = 1);

    m.def(
        "batch_norm_infer",
        [](const FloatArray& x, const FloatArray& gamma, const FloatArray& beta, const FloatArray& mean,
           const FloatArray& var, float eps) {
            const BNParams bn = bn_from(gamma, beta, mean, var, eps);
            return array_from(batch_norm_infer(tensor_from(x), bn));
        },
        py::arg("x"), py::arg("gamma"), py::arg("beta"), py::arg("running_mean"), py::arg("running_var"),
        py::arg("eps") = 1e-5f);

    m.def("relu", [](const FloatArray& x) { return array_from(relu(tensor_from(x))); }, py::arg("x"));

    m.def(
        "fold_bn",
        [](const FloatArray& w, py::object bias, const FloatArray& gamma, const FloatArray& beta,
           const FloatArray& mean, const FloatArray& var, float eps) {
            ConvKernel k;
            k.weight = tensor_from(w);
            k.padding = k.ksize() == 3 ? 1 : 0;
            if (!bias.is_none()) k.bias = vec_from(bias.cast<FloatArray>());
            const ConvKernel folded = fold_bn(k, bn_from(gamma, beta, mean, var, eps));
            py::array_t<float> b(static_cast<py::ssize_t>(folded.bias->size()));
            std::copy(folded.bias->begin(), folded.bias->end(), b.mutable_data());
            return py::make_tuple(array_from(folded.weight), b);
        },
        py::arg("weight"), py::arg("bias"), py::arg("gamma"), py::arg("beta"), py::arg("running_mean"),
        py::arg("running_var"), py::arg("eps") = 1e-5f);

    m.def(
        "fake_quant",
        [](const FloatArray& x, double scale, int bits) {
            QuantParams qp = QuantParams::symmetric_for(1.0, bits);
            qp.scale = {scale};
            return array_from(fake_quant(tensor_from(x), qp));
        },
        py::arg("x"), py::arg("scale"), py::arg("bits") = 8);

    m.def(
        "compute_scale",
        [](double lo, double hi, int bits, bool symmetric) {
            CalibStats s;
            const float v[2] = {static_cast<float>(lo), static_cast<float>(hi)};
            s.observe(v, 2);
            return compute_scale(s, bits, symmetric).scale[0];
        },
        py::arg("min"), py::arg("max"), py::arg("bits") = 8, py::arg("symmetric") = true);

    m.def("cosine_lr", &cosine_lr, py::arg("step"), py::arg("total_steps"), py::arg("lr0"));

    py::class_<PyBlock>(m, "Block")
        .def(py::init<const std::string&, int, int, int, int, std::uint64_t>(), py::arg("preset"),
             py::arg("in_channels"), py::arg("out_channels"), py::arg("stride") = 1, py::arg("groups") = 1,
             py::arg("seed") = 0)
        .def("randomize", &PyBlock::randomize, py::arg("seed"))
        .def("forward", &PyBlock::forward, py::arg("x"), py::arg("train") = false)
        .def("fuse", &PyBlock::fuse)
        .def("deploy_forward", &PyBlock::deploy_forward, py::arg("x"))
        .def("custom_l2", &PyBlock::custom_l2)
        .def("custom_l2_no_denom", &PyBlock::custom_l2_no_denom);

    py::register_exception<ConfigError>(m, "RepqConfigError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "RepqNumericError", PyExc_ArithmeticError);
    py::register_exception<FusionError>(m, "RepqFusionError", PyExc_RuntimeError);
}
