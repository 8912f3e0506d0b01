#include "repq/qat.hpp"

#include <cmath>
#include <numeric>

#include "repq/autograd.hpp"
#include "repq/errors.hpp"
#include "repq/rng.hpp"

namespace repq {

TrainHistory qat_finetune(DeployNetwork& net, const Dataset& data, const OptimConfig& cfg,
                          const NetQuantParams& qp) {
    if (data.size() == 0) throw ConfigError("qat_finetune: empty dataset");
    if (static_cast<int>(qp.layers.size()) != net.layer_count()) {
        throw ConfigError("qat_finetune: quant params do not cover every layer");
    }

    // flat parameter views: weight + bias per fused conv, then the head
    struct P {
        Tensor4* weight;
        std::vector<float>* bias;
    };
    std::vector<P> layer_params;
    for (FusedConv& f : net.layers) layer_params.push_back({&f.conv.weight, &*f.conv.bias});
    layer_params.push_back({&net.head.weight, &*net.head.bias});

    std::vector<ParamRef> params;
    for (std::size_t li = 0; li < layer_params.size(); ++li) {
        const std::string p = "layer" + std::to_string(li);
        params.push_back({p + ".w", ParamKind::conv_weight, static_cast<int>(li), 'f',
                          layer_params[li].weight->data(), layer_params[li].weight->numel(),
                          layer_params[li].weight->shape()});
        params.push_back({p + ".bias", ParamKind::conv_bias, static_cast<int>(li), 'f',
                          layer_params[li].bias->data(), layer_params[li].bias->size(),
                          Shape4{static_cast<int>(layer_params[li].bias->size()), 1, 1, 1}});
    }
    const std::vector<std::uint8_t> decay_mask = build_decay_mask(params, cfg);
    SgdState state = SgdState::zeros_like(params);
    Rng shuffle_rng = Rng::stream(cfg.seed, "shuffle");

    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    const int steps_per_epoch = static_cast<int>((data.size() + cfg.batch_size - 1) / cfg.batch_size);
    const int total_steps = steps_per_epoch * cfg.epochs;

    TrainHistory hist;
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t hits = 0, seen = 0;
        double last_lr = cfg.lr0;

        for (int bstart = 0; bstart < static_cast<int>(data.size()); bstart += cfg.batch_size) {
            const int bend = std::min<int>(bstart + cfg.batch_size, static_cast<int>(data.size()));
            std::vector<int> idx(order.begin() + bstart, order.begin() + bend);
            Tensor4 x = data.batch(idx);
            std::vector<int> labels(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = data.labels[static_cast<std::size_t>(idx[i])];

            Tape tape;
            std::vector<NodeId> pnodes;
            for (const ParamRef& p : params) {
                std::vector<float> copy(p.data, p.data + p.size);
                pnodes.push_back(tape.leaf(Tensor4::from_data(p.shape, std::move(copy))));
            }

            NodeId cur = tape.leaf(x);
            const int n_layers = net.layer_count();
            for (int li = 0; li < n_layers; ++li) {
                const std::size_t wi = static_cast<std::size_t>(2 * li);
                const ConvKernel& base =
                    li + 1 < n_layers ? net.layers[static_cast<std::size_t>(li)].conv : net.head;
                if (li + 1 == n_layers) cur = tape.global_avg_pool(cur);
                // weight scales follow the current weights; act scales fixed
                const QuantParams wq = weight_scales_per_channel(tape.value(pnodes[wi]), qp.bits);
                const NodeId w_fq = tape.fake_quant_ste(pnodes[wi], wq);
                const NodeId x_fq = tape.fake_quant_ste(cur, qp.layers[static_cast<std::size_t>(li)].act_in);
                cur = tape.conv2d(x_fq, w_fq, pnodes[wi + 1], base.stride, base.padding, base.groups);
                if (li + 1 < n_layers) cur = tape.relu(cur);
            }

            const NodeId loss_node = tape.cross_entropy(cur, labels);
            const double loss_value = tape.value(loss_node).data()[0];
            if (!std::isfinite(loss_value)) {
                throw NumericError("qat_finetune diverged at step " + std::to_string(step));
            }

            tape.backward(loss_node);
            std::vector<std::vector<float>> grads(params.size());
            for (std::size_t pi = 0; pi < params.size(); ++pi) {
                const Tensor4& g = tape.grad(pnodes[pi]);
                grads[pi].assign(g.data(), g.data() + g.numel());
            }

            const double lr = cosine_lr(step, total_steps, cfg.lr0);
            last_lr = lr;
            sgd_step(params, grads, state, lr, cfg, decay_mask);

            const std::vector<int> pred = predict(tape.value(cur));
            for (std::size_t i = 0; i < pred.size(); ++i) {
                if (pred[i] == labels[i]) ++hits;
            }
            seen += labels.size();
            epoch_loss += loss_value;
            ++step;
        }
        hist.loss.push_back(epoch_loss / steps_per_epoch);
        hist.accuracy.push_back(seen ? static_cast<double>(hits) / static_cast<double>(seen) : 0.0);
        hist.lr.push_back(last_lr);
        hist.beta_gap.push_back(std::nan(""));
        hist.denom_stat.push_back(0.0);
    }
    return hist;
}

} // namespace repq
