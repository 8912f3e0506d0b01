#include "repq/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "repq/autograd.hpp"
#include "repq/errors.hpp"
#include "repq/fusion.hpp"
#include "repq/losses.hpp"
#include "repq/rng.hpp"

namespace repq {

namespace {

Shape4 vec_shape(std::size_t len) { return Shape4{static_cast<int>(len), 1, 1, 1}; }

void push_bn_params(std::vector<ParamRef>& out, std::optional<BNParams>& bn, int block, char branch,
                    const std::string& prefix) {
    if (!bn) return;
    out.push_back({prefix + ".gamma", ParamKind::bn_gamma, block, branch, bn->gamma.data(), bn->gamma.size(),
                   vec_shape(bn->gamma.size())});
    out.push_back({prefix + ".beta", ParamKind::bn_beta, block, branch, bn->beta.data(), bn->beta.size(),
                   vec_shape(bn->beta.size())});
}

} // namespace

std::vector<ParamRef> collect_params(Network& net) {
    std::vector<ParamRef> out;
    for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
        RepBlock& b = net.blocks[bi];
        const std::string p = "b" + std::to_string(bi);
        const int blk = static_cast<int>(bi);
        out.push_back({p + ".w3", ParamKind::conv_weight, blk, '3', b.w3.weight.data(), b.w3.weight.numel(),
                       b.w3.weight.shape()});
        if (b.w3.bias) {
            out.push_back({p + ".w3.bias", ParamKind::conv_bias, blk, '3', b.w3.bias->data(), b.w3.bias->size(),
                           vec_shape(b.w3.bias->size())});
        }
        out.push_back({p + ".w1", ParamKind::conv_weight, blk, '1', b.w1.weight.data(), b.w1.weight.numel(),
                       b.w1.weight.shape()});
        if (b.w1.bias) {
            out.push_back({p + ".w1.bias", ParamKind::conv_bias, blk, '1', b.w1.bias->data(), b.w1.bias->size(),
                           vec_shape(b.w1.bias->size())});
        }
        push_bn_params(out, b.bn3, blk, '3', p + ".bn3");
        push_bn_params(out, b.bn1, blk, '1', p + ".bn1");
        push_bn_params(out, b.bn0, blk, '0', p + ".bn0");
        push_bn_params(out, b.bn_post, blk, 'p', p + ".bn_post");
    }
    out.push_back({"head.w", ParamKind::conv_weight, -1, 'h', net.head.weight.data(), net.head.weight.numel(),
                   net.head.weight.shape()});
    out.push_back({"head.bias", ParamKind::conv_bias, -1, 'h', net.head.bias->data(), net.head.bias->size(),
                   vec_shape(net.head.bias->size())});
    return out;
}

std::vector<std::uint8_t> build_decay_mask(const std::vector<ParamRef>& params, const OptimConfig& cfg) {
    std::vector<std::uint8_t> mask(params.size(), 0);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const ParamRef& p = params[i];
        bool decay = false;
        if (p.kind == ParamKind::conv_weight && cfg.loss_mode == LossMode::plain_l2) decay = true;
        if (p.kind == ParamKind::bn_gamma && cfg.decay_bn_gamma) decay = true;
        if (p.kind == ParamKind::bn_beta) {
            if (cfg.decay_beta) decay = true;
            if (cfg.decay_beta_branch3_only && p.branch == '3') decay = true;
        }
        mask[i] = decay ? 1 : 0;
    }
    return mask;
}

SgdState SgdState::zeros_like(const std::vector<ParamRef>& params) {
    SgdState s;
    s.velocity.reserve(params.size());
    for (const ParamRef& p : params) s.velocity.emplace_back(p.size, 0.0f);
    return s;
}

void sgd_step(const std::vector<ParamRef>& params, const std::vector<std::vector<float>>& grads,
              SgdState& state, double lr, const OptimConfig& cfg,
              const std::vector<std::uint8_t>& decay_mask) {
    if (grads.size() != params.size() || state.velocity.size() != params.size() ||
        decay_mask.size() != params.size()) {
        throw ConfigError("sgd_step: parameter/gradient/state count mismatch");
    }
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const ParamRef& p = params[pi];
        if (grads[pi].size() != p.size) throw ConfigError("sgd_step: gradient shape mismatch for " + p.name);
        const double wd = decay_mask[pi] ? cfg.weight_decay : 0.0;
        float* v = state.velocity[pi].data();
        const float* g = grads[pi].data();
        for (std::size_t i = 0; i < p.size; ++i) {
            const double vel = cfg.momentum * static_cast<double>(v[i]) +
                               (static_cast<double>(g[i]) + wd * static_cast<double>(p.data[i]));
            v[i] = static_cast<float>(vel);
            p.data[i] = static_cast<float>(static_cast<double>(p.data[i]) - lr * vel);
        }
    }
}

double cosine_lr(int step, int total_steps, double lr0) {
    if (step < 0 || step > total_steps || total_steps <= 0) {
        throw ConfigError("cosine_lr: step out of range");
    }
    const double pi = 3.14159265358979323846;
    return lr0 * (1.0 + std::cos(pi * static_cast<double>(step) / static_cast<double>(total_steps))) / 2.0;
}

double branch_beta_gap(const RepBlock& b) {
    if (!b.bn3 || !b.bn1) throw ConfigError("branch_beta_gap: block lacks beta3 or beta1");
    double gap = 0.0;
    for (std::size_t i = 0; i < b.bn3->beta.size(); ++i) {
        gap = std::max(gap, std::abs(static_cast<double>(b.bn3->beta[i]) - static_cast<double>(b.bn1->beta[i])));
    }
    return gap;
}

double denominator_stat(const Network& net) {
    double acc = 0.0;
    for (const RepBlock& b : net.blocks) {
        if (!b.bn3 || !b.bn1) continue;
        for (double t : fold_coefficients(*b.bn3)) acc += t * t;
        for (double t : fold_coefficients(*b.bn1)) acc += t * t;
    }
    return acc;
}

namespace {

struct BlockNodes {
    NodeId w3 = -1, w3_bias = -1, w1 = -1, w1_bias = -1;
    NodeId g3 = -1, be3 = -1, g1 = -1, be1 = -1, g0 = -1, be0 = -1, gp = -1, bep = -1;
};

// Binds every parameter as a tape leaf (same order as collect_params) and
// runs the train-mode forward on the tape.
struct TapeForward {
    std::vector<NodeId> param_nodes;
    NodeId logits = -1;

    static TapeForward run(Tape& tape, Network& net, const std::vector<ParamRef>& params, const Tensor4& x,
                           bool train) {
        TapeForward tf;
        tf.param_nodes.reserve(params.size());
        for (const ParamRef& p : params) {
            std::vector<float> copy(p.data, p.data + p.size);
            tf.param_nodes.push_back(tape.leaf(Tensor4::from_data(p.shape, std::move(copy))));
        }

        // map back from parameter order to per-block node handles
        std::vector<BlockNodes> bn(net.blocks.size());
        NodeId head_w = -1, head_b = -1;
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            const ParamRef& p = params[pi];
            const NodeId id = tf.param_nodes[pi];
            if (p.block < 0) {
                (p.kind == ParamKind::conv_weight ? head_w : head_b) = id;
                continue;
            }
            BlockNodes& n = bn[static_cast<std::size_t>(p.block)];
            switch (p.kind) {
                case ParamKind::conv_weight: (p.branch == '3' ? n.w3 : n.w1) = id; break;
                case ParamKind::conv_bias: (p.branch == '3' ? n.w3_bias : n.w1_bias) = id; break;
                case ParamKind::bn_gamma:
                    (p.branch == '3' ? n.g3 : p.branch == '1' ? n.g1 : p.branch == '0' ? n.g0 : n.gp) = id;
                    break;
                case ParamKind::bn_beta:
                    (p.branch == '3' ? n.be3 : p.branch == '1' ? n.be1 : p.branch == '0' ? n.be0 : n.bep) = id;
                    break;
            }
        }

        NodeId cur = tape.leaf(x);
        for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
            RepBlock& blk = net.blocks[bi];
            const BlockNodes& n = bn[bi];
            auto maybe_bn = [&](NodeId t, std::optional<BNParams>& stats, NodeId g, NodeId be) {
                if (!stats) return t;
                if (train) return tape.batch_norm_train(t, g, be, *stats);
                // eval path inside training is only used for monitoring; fold
                // running stats through the same op by freezing batch stats is
                // not needed here
                throw ConfigError("tape forward supports train mode only");
            };
            std::vector<NodeId> parts;
            NodeId y3 = tape.conv2d(cur, n.w3, n.w3_bias >= 0 ? std::optional<NodeId>(n.w3_bias) : std::nullopt,
                                    blk.w3.stride, blk.w3.padding, blk.w3.groups);
            y3 = maybe_bn(y3, blk.bn3, n.g3, n.be3);
            parts.push_back(y3);
            NodeId y1 = tape.conv2d(cur, n.w1, n.w1_bias >= 0 ? std::optional<NodeId>(n.w1_bias) : std::nullopt,
                                    blk.w1.stride, blk.w1.padding, blk.w1.groups);
            y1 = maybe_bn(y1, blk.bn1, n.g1, n.be1);
            parts.push_back(y1);
            if (blk.config.identity_enabled) {
                parts.push_back(blk.bn0 ? maybe_bn(cur, blk.bn0, n.g0, n.be0) : cur);
            }
            NodeId s = tape.add(parts);
            if (blk.bn_post) s = maybe_bn(s, blk.bn_post, n.gp, n.bep);
            cur = tape.relu(s);
        }
        cur = tape.global_avg_pool(cur);
        tf.logits = tape.conv2d(cur, head_w, head_b, 1, 0, 1);
        return tf;
    }
};

[[noreturn]] void diagnose_divergence(Network& net, const Tensor4& batch, int step) {
    // parameters first, then branch outputs on the offending batch
    for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
        const RepBlock& b = net.blocks[bi];
        auto bad_bn = [](const std::optional<BNParams>& bn) {
            if (!bn) return false;
            for (float v : bn->gamma) if (!std::isfinite(v)) return true;
            for (float v : bn->beta) if (!std::isfinite(v)) return true;
            for (float v : bn->running_mean) if (!std::isfinite(v)) return true;
            for (float v : bn->running_var) if (!std::isfinite(v)) return true;
            return false;
        };
        std::string who;
        if (!b.w3.weight.all_finite() || bad_bn(b.bn3)) who = "3x3 branch";
        else if (!b.w1.weight.all_finite() || bad_bn(b.bn1)) who = "1x1 branch";
        else if (bad_bn(b.bn0)) who = "identity branch";
        else if (bad_bn(b.bn_post)) who = "post-BN";
        if (!who.empty()) {
            throw NumericError("training diverged at step " + std::to_string(step) + ": non-finite parameters in block " +
                               std::to_string(bi) + ", " + who);
        }
    }
    Tensor4 cur = batch;
    for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
        try {
            RepBlock::ForwardDetail d = net.blocks[bi].forward_detail(cur, RepBlock::Mode::eval);
            for (const auto& [name, t] : d.branches) {
                if (!t.all_finite()) {
                    throw NumericError("training diverged at step " + std::to_string(step) +
                                       ": non-finite activations in block " + std::to_string(bi) + ", " + name +
                                       " branch");
                }
            }
            if (!d.output.all_finite()) {
                throw NumericError("training diverged at step " + std::to_string(step) +
                                   ": non-finite activations in block " + std::to_string(bi));
            }
            cur = std::move(d.output);
        } catch (const NumericError&) {
            throw NumericError("training diverged at step " + std::to_string(step) +
                               ": non-finite activations entering or inside block " + std::to_string(bi));
        }
    }
    throw NumericError("training diverged at step " + std::to_string(step) + ": non-finite loss");
}

} // namespace

TrainHistory train(Network& net, const Dataset& data, const OptimConfig& cfg) {
    if (data.size() == 0) throw ConfigError("train: empty dataset");
    if (cfg.epochs <= 0 || cfg.batch_size <= 0) throw ConfigError("train: epochs and batch size must be positive");
    if (cfg.loss_mode != LossMode::plain_l2) {
        for (const RepBlock& b : net.blocks) {
            if (!b.bn3 || !b.bn1) {
                throw ConfigError("train: custom-style loss requires BN on 3x3 and 1x1 branches of every block");
            }
        }
    }

    std::vector<ParamRef> params = collect_params(net);
    const std::vector<std::uint8_t> decay_mask = build_decay_mask(params, cfg);
    SgdState state = SgdState::zeros_like(params);
    Rng shuffle_rng = Rng::stream(cfg.seed, "shuffle");

    // per-block (w3, w1) gradient slots for the custom losses
    std::vector<std::pair<std::size_t, std::size_t>> weight_index(net.blocks.size(), {0, 0});
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const ParamRef& p = params[pi];
        if (p.kind == ParamKind::conv_weight && p.block >= 0) {
            auto& slot = weight_index[static_cast<std::size_t>(p.block)];
            (p.branch == '3' ? slot.first : slot.second) = pi;
        }
    }

    const bool monitor_betas = [&] {
        for (const RepBlock& b : net.blocks) {
            if (b.bn3 && b.bn1) return true;
        }
        return false;
    }();

    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    const int steps_per_epoch = static_cast<int>((data.size() + cfg.batch_size - 1) / cfg.batch_size);
    const int total_steps = steps_per_epoch * cfg.epochs;

    // settle running stats on the leading batches before any update
    for (int warm = 0; warm < cfg.bn_warmup_batches; ++warm) {
        const int bstart = warm * cfg.batch_size;
        if (bstart >= static_cast<int>(data.size())) break;
        const int bend = std::min<int>(bstart + cfg.batch_size, static_cast<int>(data.size()));
        std::vector<int> idx(order.begin() + bstart, order.begin() + bend);
        Tensor4 x = data.batch(idx);
        for (RepBlock& b : net.blocks) x = b.forward(x, RepBlock::Mode::train);
    }

    TrainHistory hist;
    hist.denom_stat_initial = denominator_stat(net);

    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        double epoch_gap = monitor_betas ? 0.0 : std::nan("");
        std::size_t hits = 0, seen = 0;
        double last_lr = cfg.lr0;

        for (int bstart = 0; bstart < static_cast<int>(data.size()); bstart += cfg.batch_size) {
            const int bend = std::min<int>(bstart + cfg.batch_size, static_cast<int>(data.size()));
            std::vector<int> idx(order.begin() + bstart, order.begin() + bend);
            Tensor4 x = data.batch(idx);
            std::vector<int> labels(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = data.labels[static_cast<std::size_t>(idx[i])];

            Tape tape;
            TapeForward tf = [&] {
                try {
                    return TapeForward::run(tape, net, params, x, true);
                } catch (const NumericError&) {
                    // a non-finite value surfaced mid-forward; attribute it
                    diagnose_divergence(net, x, step);
                }
            }();
            const NodeId loss_node = tape.cross_entropy(tf.logits, labels);
            double loss_value = tape.value(loss_node).data()[0];

            // regularizer: explicit gradient for custom-style losses, decay mask for
            // plain (the plain term is still reported for comparable curves)
            double reg_value = 0.0;
            const double reg_coeff = 0.5 * cfg.weight_decay;
            if (cfg.loss_mode != LossMode::plain_l2) {
                for (const RepBlock& b : net.blocks) {
                    reg_value += (cfg.loss_mode == LossMode::custom_l2 ? custom_l2(b) : custom_l2_no_denom(b)) * reg_coeff;
                }
            } else {
                double ssq = 0.0;
                for (std::size_t pi = 0; pi < params.size(); ++pi) {
                    if (!decay_mask[pi]) continue;
                    for (std::size_t i = 0; i < params[pi].size; ++i) {
                        ssq += static_cast<double>(params[pi].data[i]) * params[pi].data[i];
                    }
                }
                reg_value = reg_coeff * ssq;
            }
            loss_value += reg_value;

            if (!std::isfinite(loss_value)) diagnose_divergence(net, x, step);

            tape.backward(loss_node);
            std::vector<std::vector<float>> grads(params.size());
            for (std::size_t pi = 0; pi < params.size(); ++pi) {
                const Tensor4& g = tape.grad(tf.param_nodes[pi]);
                grads[pi].assign(g.data(), g.data() + g.numel());
            }
            if (cfg.loss_mode != LossMode::plain_l2) {
                for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
                    const std::size_t i3 = weight_index[bi].first, i1 = weight_index[bi].second;
                    Tensor4 g3 = Tensor4::from_data(params[i3].shape, std::move(grads[i3]));
                    Tensor4 g1 = Tensor4::from_data(params[i1].shape, std::move(grads[i1]));
                    if (cfg.loss_mode == LossMode::custom_l2) {
                        custom_l2_grad(net.blocks[bi], reg_coeff, g3, g1);
                    } else {
                        custom_l2_no_denom_grad(net.blocks[bi], reg_coeff, g3, g1);
                    }
                    grads[i3] = std::move(g3.vec());
                    grads[i1] = std::move(g1.vec());
                }
            }

            const double lr = cosine_lr(step, total_steps, cfg.lr0);
            last_lr = lr;
            sgd_step(params, grads, state, lr, cfg, decay_mask);

            if (monitor_betas) {
                double gap = 0.0;
                for (const RepBlock& b : net.blocks) {
                    if (b.bn3 && b.bn1) gap = std::max(gap, branch_beta_gap(b));
                }
                hist.step_beta_gap.push_back(gap);
                epoch_gap = std::max(epoch_gap, gap);
            }

            const std::vector<int> pred = predict(tape.value(tf.logits));
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
        hist.beta_gap.push_back(epoch_gap);
        hist.denom_stat.push_back(denominator_stat(net));
    }
    return hist;
}

void TrainHistory::to_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "epoch,loss,accuracy,lr,beta_gap,denom_stat\n";
    for (std::size_t e = 0; e < loss.size(); ++e) {
        out << e << "," << loss[e] << "," << accuracy[e] << "," << lr[e] << "," << beta_gap[e] << ","
            << denom_stat[e] << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

double evaluate_accuracy(Network& net, const Dataset& data, int batch_size) {
    std::size_t hits = 0;
    for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<int> idx(end - start);
        std::iota(idx.begin(), idx.end(), static_cast<int>(start));
        const std::vector<int> pred = predict(net.logits(data.batch(idx), RepBlock::Mode::eval));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (pred[i] == data.labels[start + i]) ++hits;
        }
    }
    return data.size() ? static_cast<double>(hits) / static_cast<double>(data.size()) : 0.0;
}

} // namespace repq
