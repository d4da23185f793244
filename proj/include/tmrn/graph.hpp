#ifndef TMRN_GRAPH_HPP
#define TMRN_GRAPH_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tmrn/tensor.hpp"

namespace tmrn {

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid for the graph's lifetime.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::uint32_t i) : g_(g), i_(i) {}

  bool defined() const { return g_ != nullptr; }
  Graph* graph() const { return g_; }
  std::uint32_t index() const { return i_; }

  const Tensor& value() const;
  const std::vector<double>& grad() const;

 private:
  Graph* g_ = nullptr;
  std::uint32_t i_ = 0;
};

enum class Op : std::uint8_t {
  Leaf,
  MatMul,
  Transpose,
  Add,
  Sub,
  Hadamard,
  Scale,
  AddScalar,
  BroadcastRows,
  Sigmoid,
  Tanh,
  Relu,
  Abs,
  SoftmaxRows,
  LayerNorm,
  ConcatCols,
  ConcatRows,
  SliceRows,
  Reshape,
  SumAll,
  MeanAll,
};

/// Dynamically built tape of differentiable operations. Nodes are appended in
/// execution order, so the reverse of the insertion order is a valid reverse
/// topological order for backpropagation. One backward pass per forward trace;
/// a second backward on the same graph throws.
///
/// A graph and its execution belong to a single thread. Independent graphs may
/// run on different threads.
class Graph {
 public:
  struct Node {
    Op op = Op::Leaf;
    std::array<std::uint32_t, 3> in{};
    std::uint8_t nin = 0;
    double aux = 0.0;
    std::uint32_t aux_a = 0, aux_b = 0;
    Tensor value;
    std::vector<double> grad;  // sized lazily during backward
    bool needs_grad = false;
    Tensor* sink = nullptr;  // external tensor whose .grad receives this node's gradient
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void reserve(std::size_t n) { nodes_.reserve(n); }
  std::size_t size() const { return nodes_.size(); }

  /// Constant input: participates in forward only.
  Var constant(Tensor t) { return push_leaf(std::move(t), false, nullptr); }

  /// Input whose gradient is wanted but kept inside the graph (read via Var::grad()).
  Var input(Tensor t, bool requires_grad) { return push_leaf(std::move(t), requires_grad, nullptr); }

  Var leaf(const Tensor& t) { return push_leaf(t, t.requires_grad, nullptr); }

  /// Model parameter: value is copied in, and after backward the accumulated
  /// gradient is added into `t.grad` (created as zeros if absent).
  Var param(Tensor& t) { return push_leaf(t, true, &t); }

  const Node& node(std::uint32_t i) const { return nodes_[i]; }
  Node& node(std::uint32_t i) { return nodes_[i]; }

  /// Reverse-mode sweep from a scalar loss. Fan-out accumulates additively.
  void backward(Var loss) {
    if (loss.graph() != this) throw ValueError("backward: loss from another graph");
    if (consumed_) throw ValueError("backward: graph already consumed; run a new forward first");
    Node& ln = nodes_[loss.index()];
    if (ln.value.size() != 1) {
      throw DimError("backward: loss must be scalar, got " + shape_to_string(ln.value.shape()));
    }
    ln.value.require_finite("backward loss");
    consumed_ = true;
    ensure_grad(loss.index());
    nodes_[loss.index()].grad[0] = 1.0;
    for (std::uint32_t i = loss.index() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      dispatch_backward(n);
    }
    // Deliver leaf gradients to external parameter tensors.
    for (Node& n : nodes_) {
      if (n.sink == nullptr) continue;
      n.sink->ensure_grad();
      if (n.grad.empty()) continue;
      auto& dst = *n.sink->grad;
      for (std::size_t k = 0; k < n.grad.size(); ++k) dst[k] += n.grad[k];
    }
  }

  bool consumed() const { return consumed_; }

  /// Internal: appends an op node (inputs already evaluated). Op builders only.
  Var push(Node n) {
    for (std::uint8_t k = 0; k < n.nin; ++k) n.needs_grad = n.needs_grad || nodes_[n.in[k]].needs_grad;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

 private:
  Var push_leaf(Tensor t, bool needs_grad, Tensor* sink) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(t);
    n.needs_grad = needs_grad;
    n.sink = sink;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  void ensure_grad(std::uint32_t i) {
    Node& n = nodes_[i];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  }

  std::vector<double>& grad_in(const Node& n, std::uint8_t k) {
    ensure_grad(n.in[k]);
    return nodes_[n.in[k]].grad;
  }

  const Tensor& val_in(const Node& n, std::uint8_t k) const { return nodes_[n.in[k]].value; }

  void dispatch_backward(Node& n);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return g_->node(i_).value; }
inline const std::vector<double>& Var::grad() const { return g_->node(i_).grad; }

namespace detail {

inline void check_same_graph(Var a, Var b, const char* op) {
  if (a.graph() != b.graph() || a.graph() == nullptr)
    throw ValueError(std::string(op) + ": operands from different graphs");
}

inline bool bias_like(const Tensor& t) {
  return t.rank() == 1 || (t.rank() == 2 && t.shape()[0] == 1);
}

inline std::size_t bias_len(const Tensor& t) {
  return t.rank() == 1 ? t.shape()[0] : t.shape()[1];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward kernels. Each op appends one node with its output value computed
// eagerly; the matching backward case lives in Graph::dispatch_backward.
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  detail::check_same_graph(a, b, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2)
    throw DimError("matmul requires rank-2 operands, got " + shape_to_string(A.shape()) + " and " +
                   shape_to_string(B.shape()));
  if (A.cols() != B.rows())
    throw DimError("matmul inner extents disagree: " + shape_to_string(A.shape()) + " vs " +
                   shape_to_string(B.shape()));
  const std::size_t M = A.rows(), K = A.cols(), N = B.cols();
  Graph::Node n;
  n.op = Op::MatMul;
  n.in = {a.index(), b.index(), 0};
  n.nin = 2;
  n.value = Tensor({M, N});
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const double aik = A(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < N; ++j) n.value(i, j) += aik * B(k, j);
    }
  return a.graph()->push(std::move(n));
}

inline Var transpose(Var x) {
  const Tensor& X = x.value();
  if (X.rank() != 2) throw DimError("transpose requires rank-2 tensor");
  Graph::Node n;
  n.op = Op::Transpose;
  n.in = {x.index(), 0, 0};
  n.nin = 1;
  n.value = Tensor({X.cols(), X.rows()});
  for (std::size_t i = 0; i < X.rows(); ++i)
    for (std::size_t j = 0; j < X.cols(); ++j) n.value(j, i) = X(i, j);
  return x.graph()->push(std::move(n));
}

namespace detail {
inline Var broadcast_rows(Var bias, std::size_t m) {
  const Tensor& B = bias.value();
  if (!bias_like(B)) throw DimError("broadcast_rows: operand is not a bias vector");
  const std::size_t N = bias_len(B);
  Graph::Node n;
  n.op = Op::BroadcastRows;
  n.in = {bias.index(), 0, 0};
  n.nin = 1;
  n.aux_a = static_cast<std::uint32_t>(m);
  n.value = Tensor({m, N});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < N; ++j) n.value(i, j) = B.at(j);
  return bias.graph()->push(std::move(n));
}

/// Promotes a bias-vector operand to the other operand's row count.
/// Broadcasting is deliberately limited to this one pattern.
inline std::pair<Var, Var> align_elementwise(Var a, Var b, const char* op) {
  check_same_graph(a, b, op);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() == B.shape()) return {a, b};
  if (A.rank() == 2 && bias_like(B) && bias_len(B) == A.cols() && A.rows() >= 1)
    return {a, broadcast_rows(b, A.rows())};
  if (B.rank() == 2 && bias_like(A) && bias_len(A) == B.cols() && B.rows() >= 1)
    return {broadcast_rows(a, B.rows()), b};
  throw DimError(std::string(op) + ": incompatible shapes " + shape_to_string(A.shape()) + " and " +
                 shape_to_string(B.shape()));
}

inline Var binary_elementwise(Var a, Var b, Op op, const char* name) {
  auto [x, y] = align_elementwise(a, b, name);
  const Tensor& X = x.value();
  const Tensor& Y = y.value();
  Graph::Node n;
  n.op = op;
  n.in = {x.index(), y.index(), 0};
  n.nin = 2;
  n.value = Tensor(X.shape());
  const std::size_t sz = X.size();
  for (std::size_t i = 0; i < sz; ++i) {
    switch (op) {
      case Op::Add: n.value.at(i) = X.at(i) + Y.at(i); break;
      case Op::Sub: n.value.at(i) = X.at(i) - Y.at(i); break;
      case Op::Hadamard: n.value.at(i) = X.at(i) * Y.at(i); break;
      default: throw ValueError("binary_elementwise: bad op");
    }
  }
  return x.graph()->push(std::move(n));
}
}  // namespace detail

inline Var add(Var a, Var b) { return detail::binary_elementwise(a, b, Op::Add, "add"); }
inline Var sub(Var a, Var b) { return detail::binary_elementwise(a, b, Op::Sub, "sub"); }
inline Var hadamard(Var a, Var b) { return detail::binary_elementwise(a, b, Op::Hadamard, "hadamard"); }

inline Var scale(Var x, double c) {
  Graph::Node n;
  n.op = Op::Scale;
  n.in = {x.index(), 0, 0};
  n.nin = 1;
  n.aux = c;
  n.value = x.value();
  for (auto& v : n.value.data()) v *= c;
  return x.graph()->push(std::move(n));
}

inline Var add_scalar(Var x, double c) {
  Graph::Node n;
  n.op = Op::AddScalar;
  n.in = {x.index(), 0, 0};
  n.nin = 1;
  n.aux = c;
  n.value = x.value();
  for (auto& v : n.value.data()) v += c;
  return x.graph()->push(std::move(n));
}

namespace detail {
template <typename F>
inline Var unary_elementwise(Var x, Op op, F&& f) {
  Graph::Node n;
  n.op = op;
  n.in = {x.index(), 0, 0};
  n.nin = 1;
  n.value = x.value();
  for (auto& v : n.value.data()) v = f(v);
  return x.graph()->push(std::move(n));
}
}  // namespace detail

inline Var sigmoid(Var x) {
  return detail::unary_elementwise(x, Op::Sigmoid, [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

inline Var tanh(Var x) {
  return detail::unary_elementwise(x, Op::Tanh, [](double v) { return std::tanh(v); });
}

inline Var relu(Var x) {
  return detail::unary_elementwise(x, Op::Relu, [](double v) { return v > 0.0 ? v : 0.0; });
}

inline Var abs(Var x) {
  return detail::unary_elementwise(x, Op::Abs, [](double v) { return std::fabs(v); });
}

/// Numerically stable row softmax: each row is shifted by its max before
/// exponentiation, so inputs of magnitude 1e3 and beyond do not overflow.
inline Var softmax_rows(Var x) {
  const Tensor& X = x.value();
  if (X.rank() != 2) throw DimError("softmax_rows requires rank-2 tensor");
  X.require_finite("softmax_rows input");
  Graph::Node n;
  n.op = Op::SoftmaxRows;
  n.in = {x.index(), 0, 0};
  n.nin = 1;
  n.value = Tensor(X.shape());
  const std::size_t M = X.rows(), N = X.cols();
  for (std::size_t i = 0; i < M; ++i) {
    double mx = X(i, 0);
    for (std::size_t j = 1; j < N; ++j) mx = std::max(mx, X(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      double e = std::exp(X(i, j) - mx);
      n.value(i, j) = e;
      s += e;
    }
    for (std::size_t j = 0; j < N; ++j) n.value(i, j) /= s;
  }
  return x.graph()->push(std::move(n));
}

/// Per-row normalization to zero mean / unit variance (population variance,
/// eps inside the square root), then affine scale and shift: gamma * xhat + beta.
inline Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  detail::check_same_graph(x, gamma, "layer_norm");
  detail::check_same_graph(x, beta, "layer_norm");
  const Tensor& X = x.value();
  const Tensor& G = gamma.value();
  const Tensor& B = beta.value();
  if (X.rank() != 2) throw DimError("layer_norm requires rank-2 input");
  const std::size_t M = X.rows(), N = X.cols();
  if (!detail::bias_like(G) || detail::bias_len(G) != N || !detail::bias_like(B) ||
      detail::bias_len(B) != N)
    throw DimError("layer_norm: gamma/beta must be length-" + std::to_string(N) + " vectors");
  X.require_finite("layer_norm input");
  Graph::Node n;
  n.op = Op::LayerNorm;
  n.in = {x.index(), gamma.index(), beta.index()};
  n.nin = 3;
  n.aux = eps;
  n.value = Tensor(X.shape());
  for (std::size_t i = 0; i < M; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < N; ++j) mu += X(i, j);
    mu /= static_cast<double>(N);
    double var = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      double d = X(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(N);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < N; ++j)
      n.value(i, j) = G.at(j) * ((X(i, j) - mu) * inv) + B.at(j);
  }
  return x.graph()->push(std::move(n));
}

inline Var concat_cols(Var a, Var b) {
  detail::check_same_graph(a, b, "concat_cols");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.rows() != B.rows())
    throw DimError("concat_cols: row counts must match, got " + shape_to_string(A.shape()) +
                   " and " + shape_to_string(B.shape()));
  Graph::Node n;
  n.op = Op::ConcatCols;
  n.in = {a.index(), b.index(), 0};
  n.nin = 2;
  n.value = Tensor({A.rows(), A.cols() + B.cols()});
  for (std::size_t i = 0; i < A.rows(); ++i) {
    for (std::size_t j = 0; j < A.cols(); ++j) n.value(i, j) = A(i, j);
    for (std::size_t j = 0; j < B.cols(); ++j) n.value(i, A.cols() + j) = B(i, j);
  }
  return a.graph()->push(std::move(n));
}

inline Var concat_rows(Var a, Var b) {
  detail::check_same_graph(a, b, "concat_rows");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols())
    throw DimError("concat_rows: column counts must match, got " + shape_to_string(A.shape()) +
                   " and " + shape_to_string(B.shape()));
  Graph::Node n;
  n.op = Op::ConcatRows;
  n.in = {a.index(), b.index(), 0};
  n.nin = 2;
  n.value = Tensor({A.rows() + B.rows(), A.cols()});
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) n.value(i, j) = A(i, j);
  for (std::size_t i = 0; i < B.rows(); ++i)
    for (std::size_t j = 0; j < B.cols(); ++j) n.value(A.rows() + i, j) = B(i, j);
  return a.graph()->push(std::move(n));
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimError("concat_cols: no operands");
  Var acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = concat_cols(acc, parts[i]);
  return acc;
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimError("concat_rows: no operands");
  Var acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = concat_rows(acc, parts[i]);
  return acc;
}

inline Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Tensor& X = x.value();
  if (X.rank() != 2) throw DimError("slice_rows requires rank-2 tensor");
  if (count == 0 || begin + count > X.rows())
    throw DimError("slice_rows: range [" + std::to_string(begin) + ", " +
                   std::to_string(begin + count) + ") out of " + std::to_string(X.rows()) + " rows");
  Graph::Node n;
  n.op = Op::SliceRows;
  n.in = {x.index(), 0, 0};
  n.nin = 1;
  n.aux_a = static_cast<std::uint32_t>(begin);
  n.aux_b = static_cast<std::uint32_t>(count);
  n.value = Tensor({count, X.cols()});
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = 0; j < X.cols(); ++j) n.value(i, j) = X(begin + i, j);
  return x.graph()->push(std::move(n));
}

inline Var reshape(Var x, Shape shape) {
  if (Tensor::element_count(shape) != x.value().size())
    throw DimError("reshape: element count mismatch for " + shape_to_string(shape));
  Graph::Node n;
  n.op = Op::Reshape;
  n.in = {x.index(), 0, 0};
  n.nin = 1;
  n.value = Tensor(std::move(shape), x.value().data());
  return x.graph()->push(std::move(n));
}

inline Var sum_all(Var x) {
  Graph::Node n;
  n.op = Op::SumAll;
  n.in = {x.index(), 0, 0};
  n.nin = 1;
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  n.value = Tensor({1, 1}, {s});
  return x.graph()->push(std::move(n));
}

inline Var mean_all(Var x) {
  Graph::Node n;
  n.op = Op::MeanAll;
  n.in = {x.index(), 0, 0};
  n.nin = 1;
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  n.value = Tensor({1, 1}, {s / static_cast<double>(x.value().size())});
  return x.graph()->push(std::move(n));
}

/// xW + b with b broadcast per row.
inline Var linear(Var x, Var w, Var b) { return add(matmul(x, w), b); }

// ---------------------------------------------------------------------------
// Backward dispatch.
// ---------------------------------------------------------------------------

inline void Graph::dispatch_backward(Node& n) {
  const std::vector<double>& gy = n.grad;
  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::MatMul: {
      const Tensor& A = val_in(n, 0);
      const Tensor& B = val_in(n, 1);
      const std::size_t M = A.rows(), K = A.cols(), N = B.cols();
      if (nodes_[n.in[0]].needs_grad) {
        auto& ga = grad_in(n, 0);
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t k = 0; k < K; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < N; ++j) s += gy[i * N + j] * B(k, j);
            ga[i * K + k] += s;
          }
      }
      if (nodes_[n.in[1]].needs_grad) {
        auto& gb = grad_in(n, 1);
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t k = 0; k < K; ++k) {
            const double aik = A(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < N; ++j) gb[k * N + j] += aik * gy[i * N + j];
          }
      }
      break;
    }
    case Op::Transpose: {
      if (!nodes_[n.in[0]].needs_grad) break;
      auto& gx = grad_in(n, 0);
      const std::size_t R = n.value.rows(), C = n.value.cols();  // output dims
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) gx[j * R + i] += gy[i * C + j];
      break;
    }
    case Op::Add:
      for (std::uint8_t k = 0; k < 2; ++k) {
        if (!nodes_[n.in[k]].needs_grad) continue;
        auto& g = grad_in(n, k);
        for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
      }
      break;
    case Op::Sub: {
      if (nodes_[n.in[0]].needs_grad) {
        auto& g = grad_in(n, 0);
        for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
      }
      if (nodes_[n.in[1]].needs_grad) {
        auto& g = grad_in(n, 1);
        for (std::size_t i = 0; i < gy.size(); ++i) g[i] -= gy[i];
      }
      break;
    }
    case Op::Hadamard: {
      const Tensor& A = val_in(n, 0);
      const Tensor& B = val_in(n, 1);
      if (nodes_[n.in[0]].needs_grad) {
        auto& g = grad_in(n, 0);
        for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * B.at(i);
      }
      if (nodes_[n.in[1]].needs_grad) {
        auto& g = grad_in(n, 1);
        for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * A.at(i);
      }
      break;
    }
    case Op::Scale: {
      if (!nodes_[n.in[0]].needs_grad) break;
      auto& g = grad_in(n, 0);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += n.aux * gy[i];
      break;
    }
    case Op::AddScalar: {
      if (!nodes_[n.in[0]].needs_grad) break;
      auto& g = grad_in(n, 0);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
      break;
    }
    case Op::BroadcastRows: {
      if (!nodes_[n.in[0]].needs_grad) break;
      auto& g = grad_in(n, 0);
      const std::size_t M = n.value.rows(), N = n.value.cols();
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) g[j] += gy[i * N + j];
      break;
    }
    case Op::Sigmoid: {
      if (!nodes_[n.in[0]].needs_grad) break;
      auto& g = grad_in(n, 0);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const double y = n.value.at(i);
        g[i] += gy[i] * y * (1.0 - y);
      }
      break;
    }
    case Op::Tanh: {
      if (!nodes_[n.in[0]].needs_grad) break;
      auto& g = grad_in(n, 0);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const double y = n.value.at(i);
        g[i] += gy[i] * (1.0 - y * y);
      }
      break;
    }
    case Op::Relu: {
      if (!nodes_[n.in[0]].needs_grad) break;
      auto& g = grad_in(n, 0);
      const Tensor& X = val_in(n, 0);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += X.at(i) > 0.0 ? gy[i] : 0.0;
      break;
    }
    case Op::Abs: {
      if (!nodes_[n.in[0]].needs_grad) break;
      auto& g = grad_in(n, 0);
      const Tensor& X = val_in(n, 0);
      // subgradient 0 at exact ties
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const double x = X.at(i);
        g[i] += x > 0.0 ? gy[i] : (x < 0.0 ? -gy[i] : 0.0);
      }
      break;
    }
    case Op::SoftmaxRows: {
      if (!nodes_[n.in[0]].needs_grad) break;
      auto& g = grad_in(n, 0);
      const std::size_t M = n.value.rows(), N = n.value.cols();
      for (std::size_t i = 0; i < M; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < N; ++j) dot += gy[i * N + j] * n.value(i, j);
        for (std::size_t j = 0; j < N; ++j)
          g[i * N + j] += n.value(i, j) * (gy[i * N + j] - dot);
      }
      break;
    }
    case Op::LayerNorm: {
      const Tensor& X = val_in(n, 0);
      const Tensor& G = val_in(n, 1);
      const std::size_t M = X.rows(), N = X.cols();
      const double eps = n.aux;
      const bool need_x = nodes_[n.in[0]].needs_grad;
      const bool need_g = nodes_[n.in[1]].needs_grad;
      const bool need_b = nodes_[n.in[2]].needs_grad;
      std::vector<double> xhat(N);
      for (std::size_t i = 0; i < M; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < N; ++j) mu += X(i, j);
        mu /= static_cast<double>(N);
        double var = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
          const double d = X(i, j) - mu;
          var += d * d;
        }
        var /= static_cast<double>(N);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < N; ++j) xhat[j] = (X(i, j) - mu) * inv;
        if (need_g) {
          auto& gg = grad_in(n, 1);
          for (std::size_t j = 0; j < N; ++j) gg[j] += gy[i * N + j] * xhat[j];
        }
        if (need_b) {
          auto& gb = grad_in(n, 2);
          for (std::size_t j = 0; j < N; ++j) gb[j] += gy[i * N + j];
        }
        if (need_x) {
          auto& gx = grad_in(n, 0);
          double mean_h = 0.0, mean_hx = 0.0;
          for (std::size_t j = 0; j < N; ++j) {
            const double h = gy[i * N + j] * G.at(j);
            mean_h += h;
            mean_hx += h * xhat[j];
          }
          mean_h /= static_cast<double>(N);
          mean_hx /= static_cast<double>(N);
          for (std::size_t j = 0; j < N; ++j) {
            const double h = gy[i * N + j] * G.at(j);
            gx[i * N + j] += (h - mean_h - xhat[j] * mean_hx) * inv;
          }
        }
      }
      break;
    }
    case Op::ConcatCols: {
      const std::size_t Na = val_in(n, 0).cols(), Nb = val_in(n, 1).cols();
      const std::size_t M = n.value.rows(), N = n.value.cols();
      if (nodes_[n.in[0]].needs_grad) {
        auto& g = grad_in(n, 0);
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t j = 0; j < Na; ++j) g[i * Na + j] += gy[i * N + j];
      }
      if (nodes_[n.in[1]].needs_grad) {
        auto& g = grad_in(n, 1);
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t j = 0; j < Nb; ++j) g[i * Nb + j] += gy[i * N + Na + j];
      }
      break;
    }
    case Op::ConcatRows: {
      const std::size_t Ra = val_in(n, 0).rows();
      const std::size_t sz_a = val_in(n, 0).size();
      if (nodes_[n.in[0]].needs_grad) {
        auto& g = grad_in(n, 0);
        for (std::size_t i = 0; i < sz_a; ++i) g[i] += gy[i];
      }
      if (nodes_[n.in[1]].needs_grad) {
        auto& g = grad_in(n, 1);
        const std::size_t off = Ra * n.value.cols();
        for (std::size_t i = 0; i < val_in(n, 1).size(); ++i) g[i] += gy[off + i];
      }
      break;
    }
    case Op::SliceRows: {
      if (!nodes_[n.in[0]].needs_grad) break;
      auto& g = grad_in(n, 0);
      const std::size_t C = n.value.cols();
      const std::size_t begin = n.aux_a, count = n.aux_b;
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < C; ++j) g[(begin + i) * C + j] += gy[i * C + j];
      break;
    }
    case Op::Reshape: {
      if (!nodes_[n.in[0]].needs_grad) break;
      auto& g = grad_in(n, 0);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
      break;
    }
    case Op::SumAll: {
      if (!nodes_[n.in[0]].needs_grad) break;
      auto& g = grad_in(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[0];
      break;
    }
    case Op::MeanAll: {
      if (!nodes_[n.in[0]].needs_grad) break;
      auto& g = grad_in(n, 0);
      const double inv = 1.0 / static_cast<double>(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[0] * inv;
      break;
    }
  }
}

}  // namespace tmrn

#endif  // TMRN_GRAPH_HPP
