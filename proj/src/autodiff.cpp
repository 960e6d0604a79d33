#include "forgetlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "forgetlab/error.hpp"
#include "forgetlab/kernels.hpp"

namespace forgetlab {

using kernels::Trans;

std::string_view op_name(OpKind kind) {
    switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::BiasAdd: return "bias_add";
    case OpKind::Relu: return "relu";
    case OpKind::Gelu: return "gelu";
    case OpKind::Softmax: return "softmax";
    case OpKind::LayerNorm: return "layernorm";
    case OpKind::Embedding: return "embedding";
    case OpKind::Mean: return "mean";
    case OpKind::Sum: return "sum";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::Scale: return "scale";
    case OpKind::BatchMatMul: return "batch_matmul";
    case OpKind::SplitHeads: return "split_heads";
    case OpKind::MergeHeads: return "merge_heads";
    case OpKind::GatherRows: return "gather_rows";
    }
    return "unknown";
}

const Tensor& Gradients::of(NodeId id) const {
    if (id >= grads_.size()) throw InvalidArgument("no gradient for node " + std::to_string(id));
    if (grads_[id].empty()) {
        if (zeros_[id].empty()) throw InvalidArgument("node " + std::to_string(id) + " is not a gradient leaf");
        return zeros_[id];
    }
    return grads_[id];
}

Tensor Gradients::take(NodeId id) {
    const Tensor& g = of(id);
    if (&g == &zeros_[id]) return g;
    Tensor out = std::move(grads_[id]);
    grads_[id] = Tensor();
    zeros_[id] = Tensor(out.shape());
    return out;
}

namespace {

[[noreturn]] void shape_fail(std::string_view op, const std::string& detail) {
    throw ShapeError(std::string(op) + ": " + detail);
}

std::string pair_str(const Tensor& a, const Tensor& b) { return shape_str(a.shape()) + " vs " + shape_str(b.shape()); }

constexpr double kSqrt2OverPi = 0.7978845608028654;

// tanh via a single exp: sign(u) (1 - e^{-2|u|}) / (1 + e^{-2|u|}).
double gelu_tanh(double x) {
    const double u = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
    const double e = std::exp(-2.0 * std::fabs(u));
    return std::copysign((1.0 - e) / (1.0 + e), u);
}

// d/dx of 0.5 x (1 + t), t = tanh(sqrt(2/pi) (x + 0.044715 x^3))
double gelu_grad(double x, double t) {
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * x * x);
}

Tensor& slot(std::vector<Tensor>& grads, NodeId id, const Shape& shape) {
    if (grads[id].empty()) grads[id] = Tensor(shape);
    return grads[id];
}

} // namespace

const Graph::Node& Graph::node(NodeId id) const {
    if (id >= nodes_.size()) throw InvalidArgument("unknown node id " + std::to_string(id));
    return nodes_[id];
}

const Tensor& Graph::value(NodeId id) const { return node(id).value; }
OpKind Graph::kind(NodeId id) const { return node(id).kind; }
std::span<const NodeId> Graph::operands(NodeId id) const { return node(id).inputs; }

NodeId Graph::push(Node n) {
    for (auto in : n.inputs) {
        if (in >= nodes_.size()) throw InvalidArgument("operand node " + std::to_string(in) + " does not exist");
        n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    }
    if (!n.value.all_finite())
        throw NumericError("numeric overflow: node " + std::to_string(nodes_.size()) + " (" +
                           std::string(op_name(n.kind)) + ") produced a non-finite value");
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

NodeId Graph::leaf(Tensor value, bool requires_grad) {
    if (value.empty()) throw ShapeError("leaf: empty tensor");
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

NodeId Graph::apply(OpKind op, std::span<const NodeId> operands) {
    auto need = [&](std::size_t k) {
        if (operands.size() != k)
            throw InvalidArgument(std::string(op_name(op)) + " takes " + std::to_string(k) + " operands, got " +
                                  std::to_string(operands.size()));
    };
    switch (op) {
    case OpKind::MatMul: need(2); return matmul(operands[0], operands[1]);
    case OpKind::Add: need(2); return add(operands[0], operands[1]);
    case OpKind::Mul: need(2); return mul(operands[0], operands[1]);
    case OpKind::BiasAdd: need(2); return bias_add(operands[0], operands[1]);
    case OpKind::Relu: need(1); return relu(operands[0]);
    case OpKind::Gelu: need(1); return gelu(operands[0]);
    case OpKind::Softmax: need(1); return softmax(operands[0]);
    case OpKind::LayerNorm: need(3); return layernorm(operands[0], operands[1], operands[2]);
    case OpKind::Mean: need(1); return mean(operands[0]);
    case OpKind::Sum: need(1); return sum(operands[0]);
    default:
        throw InvalidArgument(std::string(op_name(op)) + " needs auxiliary data; use its dedicated builder");
    }
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (B.rank() != 2 || A.cols() != B.dim(0)) shape_fail("matmul", pair_str(A, B));
    const std::size_t m = A.rows(), k = A.cols(), n = B.dim(1);
    Shape out = A.shape();
    out.back() = n;
    Node nd;
    nd.kind = OpKind::MatMul;
    nd.inputs = {a, b};
    nd.value = Tensor(out);
    kernels::gemm(Trans::N, Trans::N, m, n, k, A.data(), B.data(), nd.value.data(), false);
    return push(std::move(nd));
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape() != B.shape()) shape_fail("add", pair_str(A, B));
    Node nd;
    nd.kind = OpKind::Add;
    nd.inputs = {a, b};
    nd.value = A;
    auto out = nd.value.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return push(std::move(nd));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape() != B.shape()) shape_fail("mul", pair_str(A, B));
    Node nd;
    nd.kind = OpKind::Mul;
    nd.inputs = {a, b};
    nd.value = A;
    auto out = nd.value.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return push(std::move(nd));
}

NodeId Graph::bias_add(NodeId x, NodeId bias) {
    const Tensor& X = value(x);
    const Tensor& Bv = value(bias);
    if (Bv.rank() != 1 || Bv.size() != X.cols()) shape_fail("bias_add", pair_str(X, Bv));
    Node nd;
    nd.kind = OpKind::BiasAdd;
    nd.inputs = {x, bias};
    nd.value = X;
    const std::size_t n = X.cols();
    auto out = nd.value.data();
    for (std::size_t r = 0; r < X.rows(); ++r)
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] += Bv[j];
    return push(std::move(nd));
}

NodeId Graph::relu(NodeId x) {
    Node nd;
    nd.kind = OpKind::Relu;
    nd.inputs = {x};
    nd.value = value(x);
    for (auto& v : nd.value.data()) v = v > 0.0 ? v : 0.0;
    return push(std::move(nd));
}

NodeId Graph::gelu(NodeId x) {
    Node nd;
    nd.kind = OpKind::Gelu;
    nd.inputs = {x};
    nd.value = value(x);
    nd.cache = Tensor(nd.value.shape());
    auto out = nd.value.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double t = gelu_tanh(out[i]);
        nd.cache[i] = t;
        out[i] = 0.5 * out[i] * (1.0 + t);
    }
    return push(std::move(nd));
}

NodeId Graph::softmax(NodeId x) {
    const Tensor& X = value(x);
    Node nd;
    nd.kind = OpKind::Softmax;
    nd.inputs = {x};
    nd.value = Tensor(X.shape());
    kernels::softmax_rows(X.rows(), X.cols(), X.data(), nd.value.data());
    return push(std::move(nd));
}

NodeId Graph::layernorm(NodeId x, NodeId gamma, NodeId beta) {
    const Tensor& X = value(x);
    const Tensor& G = value(gamma);
    const Tensor& B = value(beta);
    if (G.rank() != 1 || G.size() != X.cols()) shape_fail("layernorm", "gamma " + pair_str(G, X));
    if (B.rank() != 1 || B.size() != X.cols()) shape_fail("layernorm", "beta " + pair_str(B, X));
    Node nd;
    nd.kind = OpKind::LayerNorm;
    nd.inputs = {x, gamma, beta};
    nd.value = Tensor(X.shape());
    nd.cache = Tensor(X.shape());
    nd.cache2 = Tensor({X.rows()});
    kernels::layernorm_rows(X.rows(), X.cols(), kLayerNormEps, X.data(), G.data(), B.data(), nd.value.data(),
                            nd.cache.data(), nd.cache2.data());
    return push(std::move(nd));
}

NodeId Graph::embedding(NodeId table, std::vector<int> ids, Shape prefix) {
    const Tensor& W = value(table);
    if (W.rank() != 2) shape_fail("embedding", "table must be 2-D, got " + shape_str(W.shape()));
    if (shape_numel(prefix) != ids.size() || prefix.empty())
        shape_fail("embedding", std::to_string(ids.size()) + " ids do not fill prefix " + shape_str(prefix));
    const std::size_t vocab = W.dim(0), d = W.dim(1);
    Shape out = prefix;
    out.push_back(d);
    Node nd;
    nd.kind = OpKind::Embedding;
    nd.inputs = {table};
    nd.value = Tensor(out);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
            throw InvalidArgument("embedding: id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                                  " outside table of " + std::to_string(vocab) + " rows");
        std::copy_n(W.ptr() + static_cast<std::size_t>(ids[i]) * d, d, nd.value.ptr() + i * d);
    }
    nd.ints = std::move(ids);
    return push(std::move(nd));
}

NodeId Graph::mean(NodeId x) {
    const Tensor& X = value(x);
    double s = 0.0;
    for (double v : X.data()) s += v;
    Node nd;
    nd.kind = OpKind::Mean;
    nd.inputs = {x};
    nd.value = Tensor::scalar(s / static_cast<double>(X.size()));
    return push(std::move(nd));
}

NodeId Graph::sum(NodeId x) {
    const Tensor& X = value(x);
    double s = 0.0;
    for (double v : X.data()) s += v;
    Node nd;
    nd.kind = OpKind::Sum;
    nd.inputs = {x};
    nd.value = Tensor::scalar(s);
    return push(std::move(nd));
}

NodeId Graph::cross_entropy(NodeId logits, std::vector<int> labels) {
    const Tensor& L = value(logits);
    if (L.rank() != 2 || labels.size() != L.dim(0))
        shape_fail("cross_entropy", "logits " + shape_str(L.shape()) + " with " + std::to_string(labels.size()) +
                                        " labels");
    const std::size_t b = L.dim(0), c = L.dim(1);
    Node nd;
    nd.kind = OpKind::CrossEntropy;
    nd.inputs = {logits};
    nd.cache = Tensor(L.shape());
    kernels::softmax_rows(b, c, L.data(), nd.cache.data());
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
            throw InvalidArgument("cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                                  std::to_string(i) + " outside " + std::to_string(c) + " classes");
        // log-sum-exp form keeps the loss finite for confident rows
        const double* row = L.ptr() + i * c;
        const double mx = *std::max_element(row, row + c);
        double se = 0.0;
        for (std::size_t j = 0; j < c; ++j) se += std::exp(row[j] - mx);
        loss += std::log(se) + mx - row[labels[i]];
    }
    nd.value = Tensor::scalar(loss / static_cast<double>(b));
    nd.ints = std::move(labels);
    return push(std::move(nd));
}

NodeId Graph::scale(NodeId x, double factor) {
    Node nd;
    nd.kind = OpKind::Scale;
    nd.inputs = {x};
    nd.value = value(x);
    for (auto& v : nd.value.data()) v *= factor;
    nd.scalar = factor;
    return push(std::move(nd));
}

NodeId Graph::batch_matmul(NodeId a, NodeId b, bool transpose_b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 3 || B.rank() != 3 || A.dim(0) != B.dim(0)) shape_fail("batch_matmul", pair_str(A, B));
    const std::size_t bs = A.dim(0), m = A.dim(1), k = A.dim(2);
    const std::size_t kb = transpose_b ? B.dim(2) : B.dim(1);
    const std::size_t n = transpose_b ? B.dim(1) : B.dim(2);
    if (kb != k) shape_fail("batch_matmul", pair_str(A, B) + (transpose_b ? " (B transposed)" : ""));
    Node nd;
    nd.kind = OpKind::BatchMatMul;
    nd.inputs = {a, b};
    nd.count = transpose_b ? 1 : 0;
    nd.value = Tensor({bs, m, n});
    for (std::size_t i = 0; i < bs; ++i) {
        kernels::gemm(Trans::N, transpose_b ? Trans::T : Trans::N, m, n, k, A.data().subspan(i * m * k, m * k),
                      B.data().subspan(i * k * n, k * n), nd.value.data().subspan(i * m * n, m * n), false);
    }
    return push(std::move(nd));
}

NodeId Graph::split_heads(NodeId x, std::size_t heads) {
    const Tensor& X = value(x);
    if (X.rank() != 3 || heads == 0 || X.dim(2) % heads != 0)
        shape_fail("split_heads", shape_str(X.shape()) + " into " + std::to_string(heads) + " heads");
    const std::size_t b = X.dim(0), t = X.dim(1), e = X.dim(2) / heads;
    Node nd;
    nd.kind = OpKind::SplitHeads;
    nd.inputs = {x};
    nd.count = heads;
    nd.value = Tensor({b * heads, t, e});
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t ti = 0; ti < t; ++ti)
                std::copy_n(X.ptr() + (bi * t + ti) * heads * e + h * e, e,
                            nd.value.ptr() + ((bi * heads + h) * t + ti) * e);
    return push(std::move(nd));
}

NodeId Graph::merge_heads(NodeId x, std::size_t heads) {
    const Tensor& X = value(x);
    if (X.rank() != 3 || heads == 0 || X.dim(0) % heads != 0)
        shape_fail("merge_heads", shape_str(X.shape()) + " from " + std::to_string(heads) + " heads");
    const std::size_t b = X.dim(0) / heads, t = X.dim(1), e = X.dim(2);
    Node nd;
    nd.kind = OpKind::MergeHeads;
    nd.inputs = {x};
    nd.count = heads;
    nd.value = Tensor({b, t, heads * e});
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t ti = 0; ti < t; ++ti)
                std::copy_n(X.ptr() + ((bi * heads + h) * t + ti) * e, e,
                            nd.value.ptr() + (bi * t + ti) * heads * e + h * e);
    return push(std::move(nd));
}

NodeId Graph::gather_rows(NodeId x, std::vector<int> positions) {
    const Tensor& X = value(x);
    if (X.rank() != 3 || positions.size() != X.dim(0))
        shape_fail("gather_rows", shape_str(X.shape()) + " with " + std::to_string(positions.size()) + " positions");
    const std::size_t b = X.dim(0), t = X.dim(1), d = X.dim(2);
    Node nd;
    nd.kind = OpKind::GatherRows;
    nd.inputs = {x};
    nd.value = Tensor({b, d});
    for (std::size_t i = 0; i < b; ++i) {
        if (positions[i] < 0 || static_cast<std::size_t>(positions[i]) >= t)
            throw InvalidArgument("gather_rows: position " + std::to_string(positions[i]) + " outside length " +
                                  std::to_string(t));
        std::copy_n(X.ptr() + (i * t + static_cast<std::size_t>(positions[i])) * d, d, nd.value.ptr() + i * d);
    }
    nd.ints = std::move(positions);
    return push(std::move(nd));
}

Gradients Graph::backward(NodeId loss) const {
    const Node& ln = node(loss);
    if (ln.value.size() != 1)
        throw ShapeError("backward: loss node " + std::to_string(loss) + " is not scalar, shape " +
                         shape_str(ln.value.shape()));
    Gradients out;
    out.grads_.resize(nodes_.size());
    out.zeros_.resize(nodes_.size());
    out.grads_[loss] = Tensor(ln.value.shape(), 1.0);
    for (std::size_t id = loss + 1; id-- > 0;) {
        const Node& n = nodes_[id];
        if (n.kind == OpKind::Leaf || !n.requires_grad || out.grads_[id].empty()) continue;
        backprop_node(n, out.grads_[id], out.grads_);
    }
    for (std::size_t id = 0; id < nodes_.size(); ++id)
        if (nodes_[id].kind == OpKind::Leaf && out.grads_[id].empty())
            out.zeros_[id] = Tensor(nodes_[id].value.shape());
    return out;
}

void Graph::backprop_node(const Node& n, const Tensor& g, std::vector<Tensor>& grads) const {
    auto wants = [&](std::size_t i) { return nodes_[n.inputs[i]].requires_grad; };
    auto in = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };
    auto acc = [&](std::size_t i) -> Tensor& { return slot(grads, n.inputs[i], in(i).shape()); };

    switch (n.kind) {
    case OpKind::Leaf: break;
    case OpKind::MatMul: {
        const Tensor& A = in(0);
        const Tensor& B = in(1);
        const std::size_t m = A.rows(), k = A.cols(), nn = B.dim(1);
        if (wants(0)) kernels::gemm(Trans::N, Trans::T, m, k, nn, g.data(), B.data(), acc(0).data(), true);
        if (wants(1)) kernels::gemm(Trans::T, Trans::N, k, nn, m, A.data(), g.data(), acc(1).data(), true);
        break;
    }
    case OpKind::Add: {
        for (std::size_t i = 0; i < 2; ++i)
            if (wants(i)) {
                auto d = acc(i).data();
                for (std::size_t j = 0; j < d.size(); ++j) d[j] += g[j];
            }
        break;
    }
    case OpKind::Mul: {
        if (wants(0)) {
            auto d = acc(0).data();
            const Tensor& B = in(1);
            for (std::size_t j = 0; j < d.size(); ++j) d[j] += g[j] * B[j];
        }
        if (wants(1)) {
            auto d = acc(1).data();
            const Tensor& A = in(0);
            for (std::size_t j = 0; j < d.size(); ++j) d[j] += g[j] * A[j];
        }
        break;
    }
    case OpKind::BiasAdd: {
        if (wants(0)) {
            auto d = acc(0).data();
            for (std::size_t j = 0; j < d.size(); ++j) d[j] += g[j];
        }
        if (wants(1)) {
            auto d = acc(1).data();
            const std::size_t cols = d.size();
            for (std::size_t r = 0; r < g.size() / cols; ++r)
                for (std::size_t j = 0; j < cols; ++j) d[j] += g[r * cols + j];
        }
        break;
    }
    case OpKind::Relu: {
        if (!wants(0)) break;
        auto d = acc(0).data();
        const Tensor& X = in(0);
        for (std::size_t j = 0; j < d.size(); ++j) d[j] += X[j] > 0.0 ? g[j] : 0.0;
        break;
    }
    case OpKind::Gelu: {
        if (!wants(0)) break;
        auto d = acc(0).data();
        const Tensor& X = in(0);
        for (std::size_t j = 0; j < d.size(); ++j) d[j] += g[j] * gelu_grad(X[j], n.cache[j]);
        break;
    }
    case OpKind::Softmax: {
        if (!wants(0)) break;
        auto d = acc(0).data();
        const Tensor& Y = n.value;
        const std::size_t rows = Y.rows(), cols = Y.cols();
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * Y[r * cols + j];
            for (std::size_t j = 0; j < cols; ++j) d[r * cols + j] += Y[r * cols + j] * (g[r * cols + j] - dot);
        }
        break;
    }
    case OpKind::LayerNorm: {
        const Tensor& xhat = n.cache;
        const Tensor& inv_std = n.cache2;
        const Tensor& G = in(1);
        const std::size_t rows = xhat.rows(), cols = xhat.cols();
        if (wants(1)) {
            auto d = acc(1).data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < cols; ++j) d[j] += g[r * cols + j] * xhat[r * cols + j];
        }
        if (wants(2)) {
            auto d = acc(2).data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < cols; ++j) d[j] += g[r * cols + j];
        }
        if (wants(0)) {
            auto d = acc(0).data();
            const double inv_n = 1.0 / static_cast<double>(cols);
            for (std::size_t r = 0; r < rows; ++r) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t j = 0; j < cols; ++j) {
                    const double dh = g[r * cols + j] * G[j];
                    m1 += dh;
                    m2 += dh * xhat[r * cols + j];
                }
                m1 *= inv_n;
                m2 *= inv_n;
                for (std::size_t j = 0; j < cols; ++j) {
                    const double dh = g[r * cols + j] * G[j];
                    d[r * cols + j] += inv_std[r] * (dh - m1 - xhat[r * cols + j] * m2);
                }
            }
        }
        break;
    }
    case OpKind::Embedding: {
        if (!wants(0)) break;
        auto d = acc(0).data();
        const std::size_t dim = in(0).dim(1);
        for (std::size_t i = 0; i < n.ints.size(); ++i) {
            double* row = d.data() + static_cast<std::size_t>(n.ints[i]) * dim;
            for (std::size_t j = 0; j < dim; ++j) row[j] += g[i * dim + j];
        }
        break;
    }
    case OpKind::Mean: {
        if (!wants(0)) break;
        auto d = acc(0).data();
        const double s = g[0] / static_cast<double>(d.size());
        for (auto& v : d) v += s;
        break;
    }
    case OpKind::Sum: {
        if (!wants(0)) break;
        for (auto& v : acc(0).data()) v += g[0];
        break;
    }
    case OpKind::CrossEntropy: {
        if (!wants(0)) break;
        auto d = acc(0).data();
        const Tensor& P = n.cache;
        const std::size_t b = P.dim(0), c = P.dim(1);
        const double s = g[0] / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < c; ++j)
                d[i * c + j] += s * (P[i * c + j] - (static_cast<int>(j) == n.ints[i] ? 1.0 : 0.0));
        break;
    }
    case OpKind::Scale: {
        if (!wants(0)) break;
        auto d = acc(0).data();
        for (std::size_t j = 0; j < d.size(); ++j) d[j] += n.scalar * g[j];
        break;
    }
    case OpKind::BatchMatMul: {
        const Tensor& A = in(0);
        const Tensor& B = in(1);
        const bool tb = n.count == 1;
        const std::size_t bs = A.dim(0), m = A.dim(1), k = A.dim(2), nn = n.value.dim(2);
        for (std::size_t i = 0; i < bs; ++i) {
            auto gi = g.data().subspan(i * m * nn, m * nn);
            auto ai = A.data().subspan(i * m * k, m * k);
            auto bi = B.data().subspan(i * k * nn, k * nn);
            if (wants(0)) {
                auto da = acc(0).data().subspan(i * m * k, m * k);
                // dA = dC * op(B)^T
                kernels::gemm(Trans::N, tb ? Trans::N : Trans::T, m, k, nn, gi, bi, da, true);
            }
            if (wants(1)) {
                auto db = acc(1).data().subspan(i * k * nn, k * nn);
                if (tb)
                    kernels::gemm(Trans::T, Trans::N, nn, k, m, gi, ai, db, true); // dB = dC^T A
                else
                    kernels::gemm(Trans::T, Trans::N, k, nn, m, ai, gi, db, true); // dB = A^T dC
            }
        }
        break;
    }
    case OpKind::SplitHeads: {
        if (!wants(0)) break;
        auto d = acc(0).data();
        const Tensor& X = in(0);
        const std::size_t heads = n.count, b = X.dim(0), t = X.dim(1), e = X.dim(2) / heads;
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t ti = 0; ti < t; ++ti) {
                    const double* src = g.ptr() + ((bi * heads + h) * t + ti) * e;
                    double* dst = d.data() + (bi * t + ti) * heads * e + h * e;
                    for (std::size_t j = 0; j < e; ++j) dst[j] += src[j];
                }
        break;
    }
    case OpKind::MergeHeads: {
        if (!wants(0)) break;
        auto d = acc(0).data();
        const Tensor& X = in(0);
        const std::size_t heads = n.count, b = X.dim(0) / heads, t = X.dim(1), e = X.dim(2);
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t ti = 0; ti < t; ++ti) {
                    const double* src = g.ptr() + (bi * t + ti) * heads * e + h * e;
                    double* dst = d.data() + ((bi * heads + h) * t + ti) * e;
                    for (std::size_t j = 0; j < e; ++j) dst[j] += src[j];
                }
        break;
    }
    case OpKind::GatherRows: {
        if (!wants(0)) break;
        auto d = acc(0).data();
        const Tensor& X = in(0);
        const std::size_t t = X.dim(1), dim = X.dim(2);
        for (std::size_t i = 0; i < n.ints.size(); ++i) {
            double* dst = d.data() + (i * t + static_cast<std::size_t>(n.ints[i])) * dim;
            for (std::size_t j = 0; j < dim; ++j) dst[j] += g[i * dim + j];
        }
        break;
    }
    }
}

} // namespace forgetlab
