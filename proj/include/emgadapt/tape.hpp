#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "emgadapt/tensor.hpp"

namespace emg::nn {

// Reverse-mode autodiff over a dynamic tape. Nodes are appended in forward
// (topological) order; backward() walks them in exact reverse order.
//
// Every op validates shapes up front and checks its output for NaN/Inf, so a
// non-finite value surfaces as a NumericError naming the node tag instead of
// silently propagating.
class Tape {
public:
    using NodeId = int;

    struct Node {
        Tensor value;
        std::vector<NodeId> inputs;
        // Accumulates input gradients given this node's grad. Null for leaves.
        std::function<void(Tape&, Node&)> backprop;
        bool requires_grad = false;
        std::string tag;
        // Reductions keep a float64 copy of their scalar output; propagated
        // through scale/add so finite-difference oracles read full precision.
        double scalar64 = 0.0;
        bool has_scalar64 = false;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    size_t size() const { return nodes_.size(); }
    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    Tensor& grad(NodeId id);
    const Node& node(NodeId id) const { return nodes_[id]; }
    double value_f64(NodeId id) const; // scalar64 when present, else data[0]

    NodeId leaf(Tensor t, bool requires_grad = false, std::string tag = "leaf");
    NodeId leaf(const Tensor& t, bool requires_grad, std::string tag, bool copy_grad_flag);

    // C = A * B for 2-D tensors, inner dims must agree.
    NodeId matmul(NodeId a, NodeId b, std::string tag = "matmul");
    // Same-shape elementwise sum.
    NodeId add(NodeId a, NodeId b, std::string tag = "add");
    // a[N x d] + bias[d] broadcast over rows (the only broadcast supported).
    NodeId add_bias(NodeId a, NodeId bias, std::string tag = "add_bias");
    NodeId scale(NodeId a, double c, std::string tag = "scale");
    // Elementwise product with a constant tensor (dropout masks etc.).
    NodeId hadamard_const(NodeId a, Tensor mask, std::string tag = "hadamard");
    NodeId transpose(NodeId a, std::string tag = "transpose");
    NodeId slice_cols(NodeId a, int64_t c0, int64_t len, std::string tag = "slice_cols");
    NodeId concat_cols(const std::vector<NodeId>& parts, std::string tag = "concat_cols");
    NodeId gelu(NodeId a, std::string tag = "gelu");

    // Row-wise softmax over the last axis of a 2-D tensor. Max-shifted, so
    // adding a constant to a row leaves the output bitwise unchanged.
    NodeId softmax_rows(NodeId a, std::string tag = "softmax");

    // Per-row layer norm with affine gain/bias over the last axis.
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5,
                      std::string tag = "layer_norm");

    // Row gather from an embedding table; gradient scatter-adds.
    NodeId embed_rows(NodeId table, const std::vector<int>& ids, std::string tag = "embed");

    // Scalar projection: sum of elementwise product with a constant tensor.
    NodeId weighted_sum(NodeId a, Tensor weights, std::string tag = "weighted_sum");

    // Sum of negative log-likelihoods over rows whose label != ignore_index.
    // valid_count reports how many rows contributed.
    NodeId cross_entropy_sum(NodeId logits, const std::vector<int>& labels,
                             int ignore_index, int64_t* valid_count = nullptr,
                             std::string tag = "ce_sum");

    // Sum of squared errors over elements where include_mask != 0 (all
    // elements when include_mask is null). included_count reports the count.
    NodeId sq_error_sum(NodeId pred, const Tensor& target, const Tensor* include_mask,
                        int64_t* included_count = nullptr, std::string tag = "sqerr_sum");

    // softmax(q k^T / sqrt(d) + mask) v; mask (if any) must be T x T additive.
    NodeId attention(NodeId q, NodeId k, NodeId v,
                     std::optional<NodeId> mask = std::nullopt,
                     std::string tag = "attention");

    // Mean NLL over non-ignored rows; 0 with zero gradient when all ignored.
    NodeId cross_entropy(NodeId logits, const std::vector<int>& labels,
                         int ignore_index = -1, std::string tag = "cross_entropy");

    // Mean squared error over included elements.
    NodeId mse(NodeId pred, const Tensor& target, const Tensor* include_mask = nullptr,
               std::string tag = "mse");

    // Reverse pass from a scalar node. seed is the gradient of the root.
    // Calling backward twice on one tape without rebuilding is an error.
    void backward(NodeId root, double seed = 1.0);

private:
    NodeId push(Node n);
    void check_finite(const Node& n) const;

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

} // namespace emg::nn
