#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "repq/quant.hpp"
#include "repq/tensor.hpp"

namespace repq {

using NodeId = int;

// Reverse-mode tape over the small op set the blocks need. Nodes are
// appended in forward order, so walking the tape backwards is already a
// topological order. Values and gradients are float; reductions inside
// each op accumulate in double.
class Tape {
public:
    NodeId leaf(Tensor4 value);

    const Tensor4& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor4& grad(NodeId id) const { return grads_[static_cast<std::size_t>(id)]; }

    NodeId conv2d(NodeId x, NodeId w, std::optional<NodeId> bias, int stride, int padding, int groups);
    // gamma/beta as (c,1,1,1) leaves; running stats in `stats` are updated
    // as a side effect and treated as constants under differentiation
    NodeId batch_norm_train(NodeId x, NodeId gamma, NodeId beta, BNParams& stats, float momentum = 0.1f);
    NodeId relu(NodeId x);
    NodeId add(const std::vector<NodeId>& xs);
    NodeId global_avg_pool(NodeId x);
    // straight-through estimator: forward fake-quantizes, backward passes
    // gradient where the value was not clipped
    NodeId fake_quant_ste(NodeId x, const QuantParams& qp);
    NodeId sum(NodeId x); // scalar (1,1,1,1)
    // mean cross-entropy over the batch; softmax in double precision
    NodeId cross_entropy(NodeId logits, const std::vector<int>& labels);

    // Seeds d(root)/d(root) = 1 and accumulates gradients for every node.
    void backward(NodeId root);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor4 value;
        std::function<void(Tape&, NodeId)> backprop; // null for leaves
    };
    NodeId push(Tensor4 value, std::function<void(Tape&, NodeId)> backprop);
    Tensor4& grad_mut(NodeId id) { return grads_[static_cast<std::size_t>(id)]; }

    std::vector<Node> nodes_;
    std::vector<Tensor4> grads_;
};

// max over all parameter elements of
// |analytic - central_difference| / (|analytic| + |central| + 1e-8),
// with differences computed in double precision at the given step.
double grad_check(const std::function<double(const std::vector<Tensor4>&)>& f,
                  const std::function<std::vector<Tensor4>(const std::vector<Tensor4>&)>& analytic,
                  std::vector<Tensor4> theta, double h = 1e-3);

} // namespace repq
