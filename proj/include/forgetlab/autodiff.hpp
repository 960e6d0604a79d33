#pragma once

// Define-by-run reverse-mode automatic differentiation over dense tensors.
//
// A Graph is an append-only tape. Every builder call validates operand
// shapes, computes the forward value immediately and appends one node, so
// operands always precede their users and the tape is topologically sorted
// by construction. Graphs are meant to be rebuilt for every batch.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "forgetlab/tensor.hpp"

namespace forgetlab {

using NodeId = std::size_t;

enum class OpKind {
    Leaf,
    MatMul,       // [.., k] x [k, n] -> [.., n]
    Add,          // equal shapes
    Mul,          // equal shapes, elementwise
    BiasAdd,      // [.., n] + [n]
    Relu,
    Gelu,         // tanh approximation
    Softmax,      // last axis
    LayerNorm,    // last axis, operands (x, gamma, beta)
    Embedding,    // table [V, d] gathered by integer ids
    Mean,         // all elements -> [1]
    Sum,          // all elements -> [1]
    CrossEntropy, // logits [b, C] with integer labels -> mean loss [1]
    Scale,        // multiply by a constant
    BatchMatMul,  // [B, m, k] x [B, k, n] (or [B, n, k] transposed) -> [B, m, n]
    SplitHeads,   // [b, T, h*e] -> [b*h, T, e]
    MergeHeads,   // [b*h, T, e] -> [b, T, h*e]
    GatherRows,   // [b, T, d] with one position per b -> [b, d]
};

std::string_view op_name(OpKind kind);

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kGeluCoeff = 0.044715;

class Graph;

/// Gradients produced by Graph::backward, indexed by node id.
class Gradients {
public:
    /// Gradient of the loss w.r.t. node `id`; a zero tensor when the loss
    /// does not depend on it.
    const Tensor& of(NodeId id) const;
    bool has(NodeId id) const { return id < grads_.size() && !grads_[id].empty(); }
    /// Moves the gradient out, leaving a zero tensor behind.
    Tensor take(NodeId id);

private:
    friend class Graph;
    std::vector<Tensor> grads_;
    std::vector<Tensor> zeros_;
};

class Graph {
public:
    /// Appends an input or parameter. Only leaves with `requires_grad` get
    /// gradients propagated to them.
    NodeId leaf(Tensor value, bool requires_grad = true);

    /// Generic entry point for ops without auxiliary data.
    NodeId apply(OpKind op, std::span<const NodeId> operands);
    NodeId apply(OpKind op, std::initializer_list<NodeId> operands) {
        return apply(op, std::span<const NodeId>(operands.begin(), operands.size()));
    }

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId bias_add(NodeId x, NodeId bias);
    NodeId relu(NodeId x);
    NodeId gelu(NodeId x);
    NodeId softmax(NodeId x);
    NodeId layernorm(NodeId x, NodeId gamma, NodeId beta);
    /// Gathers rows of `table` ([V, d]); the output has shape `prefix` + [d]
    /// where the product of `prefix` equals ids.size().
    NodeId embedding(NodeId table, std::vector<int> ids, Shape prefix);
    NodeId mean(NodeId x);
    NodeId sum(NodeId x);
    NodeId cross_entropy(NodeId logits, std::vector<int> labels);
    NodeId scale(NodeId x, double factor);
    NodeId batch_matmul(NodeId a, NodeId b, bool transpose_b);
    NodeId split_heads(NodeId x, std::size_t heads);
    NodeId merge_heads(NodeId x, std::size_t heads);
    NodeId gather_rows(NodeId x, std::vector<int> positions);

    const Tensor& value(NodeId id) const;
    OpKind kind(NodeId id) const;
    std::span<const NodeId> operands(NodeId id) const;
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Reverse sweep from a one-element loss node.
    Gradients backward(NodeId loss) const;

private:
    struct Node {
        OpKind kind = OpKind::Leaf;
        std::vector<NodeId> inputs;
        Tensor value;
        bool requires_grad = false;
        std::vector<int> ints; // ids, labels or positions
        double scalar = 0.0;   // scale factor
        std::size_t count = 0; // heads, or 1 for transposed batch matmul
        Tensor cache;          // softmax probs (CE), normalized rows (LN) or tanh terms (GELU)
        Tensor cache2;         // 1/std per row (LN)
    };

    const Node& node(NodeId id) const;
    NodeId push(Node n);
    void backprop_node(const Node& n, const Tensor& g, std::vector<Tensor>& grads) const;

    std::vector<Node> nodes_;
};

} // namespace forgetlab
