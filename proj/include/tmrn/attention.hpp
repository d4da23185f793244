#ifndef TMRN_ATTENTION_HPP
#define TMRN_ATTENTION_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "tmrn/graph.hpp"
#include "tmrn/rng.hpp"

namespace tmrn {

/// Per-time-step validity mask; true entries participate in attention.
using Mask = std::vector<std::uint8_t>;

inline Mask all_true(std::size_t n) { return Mask(n, 1); }

inline std::size_t count_true(const Mask& m) {
  std::size_t c = 0;
  for (auto v : m) c += (v != 0);
  return c;
}

namespace detail {

inline void check_mask(const Mask& mask, std::size_t len, const char* where) {
  if (mask.size() != len)
    throw DimError(std::string(where) + ": mask length " + std::to_string(mask.size()) +
                   " does not match sequence length " + std::to_string(len));
  if (count_true(mask) == 0)
    throw ValueError(std::string(where) + ": all positions masked out");
}

// Masked positions get an additive score of -1e30: large enough that the
// shifted exponential underflows to exactly zero, so a masked key contributes
// nothing to the mixture, bit for bit. The all-true case skips the add so the
// unmasked path is untouched.
inline Var apply_key_mask(Var scores, const Mask& mask) {
  if (count_true(mask) == mask.size()) return scores;
  Tensor bias({mask.size()});
  for (std::size_t j = 0; j < mask.size(); ++j) bias.at(j) = mask[j] ? 0.0 : -1e30;
  return add(scores, scores.graph()->constant(std::move(bias)));
}

}  // namespace detail

/// Query/key/value projections for one attention block. Square d x d, one
/// distinct instance per block unless sharing is explicit.
struct AttentionParams {
  Tensor w_q, w_k, w_v;

  static AttentionParams init(std::size_t d, Rng& rng) {
    AttentionParams p;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    for (Tensor* t : {&p.w_q, &p.w_k, &p.w_v}) {
      *t = Tensor({d, d});
      for (auto& v : t->data()) v = rng.uniform(-bound, bound);
      t->requires_grad = true;
    }
    return p;
  }
};

/// Graph-bound view of AttentionParams for one forward pass.
struct AttentionVars {
  Var w_q, w_k, w_v;
};

inline AttentionVars bind(Graph& g, AttentionParams& p) {
  return {g.param(p.w_q), g.param(p.w_k), g.param(p.w_v)};
}

/// Scaled dot-product attention with queries from `query_seq` and keys/values
/// from `kv_seq`: softmax(Q K^T / sqrt(d)) V. Output has one row per query;
/// the key/value sequence length disappears. Scaling uses the model width d
/// (the projection column count).
inline Var cross_attention(Var query_seq, Var kv_seq, const AttentionVars& p,
                           const Mask& kv_mask) {
  const Tensor& q_in = query_seq.value();
  const Tensor& kv_in = kv_seq.value();
  const std::size_t d = p.w_q.value().cols();
  if (q_in.rank() != 2 || q_in.cols() != d)
    throw DimError("cross_attention: query width " + shape_to_string(q_in.shape()) +
                   " does not match model dimension " + std::to_string(d));
  if (kv_in.rank() != 2 || kv_in.cols() != d)
    throw DimError("cross_attention: key/value width " + shape_to_string(kv_in.shape()) +
                   " does not match model dimension " + std::to_string(d));
  detail::check_mask(kv_mask, kv_in.rows(), "cross_attention");

  Var q = matmul(query_seq, p.w_q);
  Var k = matmul(kv_seq, p.w_k);
  Var v = matmul(kv_seq, p.w_v);
  Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  Var weights = softmax_rows(detail::apply_key_mask(scores, kv_mask));
  return matmul(weights, v);
}

/// Self-attention: cross_attention with the sequence attending to itself.
inline Var self_attention(Var x, const AttentionVars& p, const Mask& mask) {
  return cross_attention(x, x, p, mask);
}

/// Collapses a T x d sequence to a single 1 x d row: softmax(F w / sqrt(d))
/// over unmasked time steps, then the weighted sum of rows.
inline Var attention_pool(Var f, Var w, const Mask& mask) {
  const Tensor& F = f.value();
  const Tensor& W = w.value();
  if (F.rank() != 2) throw DimError("attention_pool: sequence must be rank-2");
  const std::size_t d = F.cols();
  if (W.size() != d)
    throw DimError("attention_pool: weight length " + std::to_string(W.size()) +
                   " does not match feature width " + std::to_string(d));
  detail::check_mask(mask, F.rows(), "attention_pool");

  Var scores = scale(matmul(f, reshape(w, {d, 1})), 1.0 / std::sqrt(static_cast<double>(d)));
  Var weights = softmax_rows(detail::apply_key_mask(transpose(scores), mask));  // 1 x T
  return matmul(weights, f);
}

/// Learned pooling weight for one modality stream, length d.
struct PoolingParams {
  Tensor w;

  static PoolingParams init(std::size_t d, Rng& rng) {
    PoolingParams p;
    p.w = Tensor({d});
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    for (auto& v : p.w.data()) v = rng.uniform(-bound, bound);
    p.w.requires_grad = true;
    return p;
  }
};

}  // namespace tmrn

#endif  // TMRN_ATTENTION_HPP
