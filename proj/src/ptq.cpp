#include "repq/ptq.hpp"

#include <numeric>

#include "repq/errors.hpp"

namespace repq {

namespace {

// forward once, handing each layer's input activation to a visitor
template <typename Visit>
Tensor4 forward_with_inputs(const DeployNetwork& net, const Tensor4& x, Visit&& visit) {
    Tensor4 t = x;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        visit(static_cast<int>(li), t);
        t = net.layers[li].forward(t);
    }
    t = global_avg_pool(t);
    visit(static_cast<int>(net.layers.size()), t);
    return conv2d(t, net.head);
}

} // namespace

NetQuantParams calibrate(const DeployNetwork& net, const std::vector<Tensor4>& batches, CalibMethod method,
                         int bits) {
    if (batches.empty()) throw ConfigError("calibrate: no calibration batches");

    const int n_layers = net.layer_count();
    std::vector<CalibStats> act_stats(static_cast<std::size_t>(n_layers));

    for (const Tensor4& b : batches) {
        forward_with_inputs(net, b, [&](int li, const Tensor4& input) {
            act_stats[static_cast<std::size_t>(li)].observe(input);
        });
    }
    if (method == CalibMethod::mse) {
        for (CalibStats& s : act_stats) s.prepare_histogram();
        for (const Tensor4& b : batches) {
            forward_with_inputs(net, b, [&](int li, const Tensor4& input) {
                act_stats[static_cast<std::size_t>(li)].fill_histogram(input);
            });
        }
    }

    NetQuantParams qp;
    qp.bits = bits;
    qp.method = method;
    qp.layers.resize(static_cast<std::size_t>(n_layers));
    for (int li = 0; li < n_layers; ++li) {
        const Tensor4& w = li < static_cast<int>(net.layers.size())
                               ? net.layers[static_cast<std::size_t>(li)].conv.weight
                               : net.head.weight;
        qp.layers[static_cast<std::size_t>(li)].weight = weight_scales_per_channel(w, bits);
        qp.layers[static_cast<std::size_t>(li)].act_in =
            method == CalibMethod::mse ? compute_scale_mse(act_stats[static_cast<std::size_t>(li)], bits)
                                       : compute_scale(act_stats[static_cast<std::size_t>(li)], bits, true);
    }
    return qp;
}

Tensor4 partially_quantized_forward(const DeployNetwork& net, const NetQuantParams& qp, const Tensor4& x,
                                    int quantize_upto, bool weights_too) {
    const int n_layers = net.layer_count();
    if (static_cast<int>(qp.layers.size()) != n_layers) {
        throw ConfigError("quantized forward: missing quant params for some layer");
    }
    if (quantize_upto < 0 || quantize_upto > n_layers) {
        throw ConfigError("quantized forward: layer index out of range");
    }

    auto run_layer = [&](int li, const Tensor4& input, bool quantized) -> Tensor4 {
        const bool is_head = li == n_layers - 1;
        const ConvKernel& base = is_head ? net.head : net.layers[static_cast<std::size_t>(li)].conv;
        Tensor4 t = input;
        ConvKernel k = base;
        if (quantized) {
            t = fake_quant(t, qp.layers[static_cast<std::size_t>(li)].act_in);
            if (weights_too) {
                k.weight = fake_quant(base.weight, qp.layers[static_cast<std::size_t>(li)].weight);
            }
        }
        Tensor4 y = conv2d(t, k);
        return is_head ? y : relu(y);
    };

    Tensor4 t = x;
    for (int li = 0; li < static_cast<int>(net.layers.size()); ++li) {
        t = run_layer(li, t, li < quantize_upto);
    }
    t = global_avg_pool(t);
    return run_layer(n_layers - 1, t, n_layers - 1 < quantize_upto);
}

Tensor4 quantized_forward(const DeployNetwork& net, const NetQuantParams& qp, const Tensor4& x) {
    return partially_quantized_forward(net, qp, x, net.layer_count(), true);
}

Tensor4 single_layer_quantized_forward(const DeployNetwork& net, const NetQuantParams& qp, const Tensor4& x,
                                       int layer) {
    const int n_layers = net.layer_count();
    if (layer < 0 || layer >= n_layers) throw ConfigError("single_layer_quantized_forward: bad layer");
    if (static_cast<int>(qp.layers.size()) != n_layers) {
        throw ConfigError("quantized forward: missing quant params for some layer");
    }
    Tensor4 t = x;
    for (int li = 0; li < static_cast<int>(net.layers.size()); ++li) {
        const bool q = li == layer;
        Tensor4 in = q ? fake_quant(t, qp.layers[static_cast<std::size_t>(li)].act_in) : t;
        ConvKernel k = net.layers[static_cast<std::size_t>(li)].conv;
        if (q) k.weight = fake_quant(k.weight, qp.layers[static_cast<std::size_t>(li)].weight);
        t = relu(conv2d(in, k));
    }
    t = global_avg_pool(t);
    const bool q = layer == n_layers - 1;
    Tensor4 in = q ? fake_quant(t, qp.layers[static_cast<std::size_t>(layer)].act_in) : t;
    ConvKernel k = net.head;
    if (q) k.weight = fake_quant(k.weight, qp.layers[static_cast<std::size_t>(layer)].weight);
    return conv2d(in, k);
}

namespace {

template <typename Logits>
double dataset_accuracy(const Dataset& data, int batch_size, Logits&& logits_of) {
    std::size_t hits = 0;
    for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<int> idx(end - start);
        std::iota(idx.begin(), idx.end(), static_cast<int>(start));
        const std::vector<int> pred = predict(logits_of(data.batch(idx)));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (pred[i] == data.labels[start + i]) ++hits;
        }
    }
    return data.size() ? static_cast<double>(hits) / static_cast<double>(data.size()) : 0.0;
}

} // namespace

double quantized_accuracy(const DeployNetwork& net, const NetQuantParams& qp, const Dataset& data,
                          int batch_size) {
    return dataset_accuracy(data, batch_size, [&](const Tensor4& b) { return quantized_forward(net, qp, b); });
}

double deploy_accuracy(const DeployNetwork& net, const Dataset& data, int batch_size) {
    return dataset_accuracy(data, batch_size, [&](const Tensor4& b) { return net.logits(b); });
}

} // namespace repq
