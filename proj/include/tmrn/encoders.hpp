#ifndef TMRN_ENCODERS_HPP
#define TMRN_ENCODERS_HPP

#include <utility>
#include <vector>

#include "tmrn/graph.hpp"
#include "tmrn/rng.hpp"

namespace tmrn {

/// One direction of an LSTM: input->gate and hidden->gate weights plus biases
/// for the input, forget, cell, and output gates. Weights are initialized
/// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases zero except the forget
/// gate, which starts at 1.
struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  Tensor w_xi, w_hi, b_i;
  Tensor w_xf, w_hf, b_f;
  Tensor w_xg, w_hg, b_g;
  Tensor w_xo, w_ho, b_o;

  static LstmParams init(std::size_t input_dim, std::size_t hidden, Rng& rng) {
    LstmParams p;
    p.input_dim = input_dim;
    p.hidden = hidden;
    auto fill = [&rng](Tensor& t, Shape shape, double fan_in) {
      t = Tensor(std::move(shape));
      const double bound = 1.0 / std::sqrt(fan_in);
      for (auto& v : t.data()) v = rng.uniform(-bound, bound);
      t.requires_grad = true;
    };
    auto zero_bias = [hidden](Tensor& t, double v) {
      t = Tensor::full({hidden}, v);
      t.requires_grad = true;
    };
    for (Tensor* w : {&p.w_xi, &p.w_xf, &p.w_xg, &p.w_xo})
      fill(*w, {input_dim, hidden}, static_cast<double>(input_dim));
    for (Tensor* w : {&p.w_hi, &p.w_hf, &p.w_hg, &p.w_ho})
      fill(*w, {hidden, hidden}, static_cast<double>(hidden));
    zero_bias(p.b_i, 0.0);
    zero_bias(p.b_f, 1.0);
    zero_bias(p.b_g, 0.0);
    zero_bias(p.b_o, 0.0);
    return p;
  }
};

struct LstmVars {
  Var w_xi, w_hi, b_i;
  Var w_xf, w_hf, b_f;
  Var w_xg, w_hg, b_g;
  Var w_xo, w_ho, b_o;
};

inline LstmVars bind(Graph& g, LstmParams& p) {
  return {g.param(p.w_xi), g.param(p.w_hi), g.param(p.b_i),  g.param(p.w_xf),
          g.param(p.w_hf), g.param(p.b_f),  g.param(p.w_xg), g.param(p.w_hg),
          g.param(p.b_g),  g.param(p.w_xo), g.param(p.w_ho), g.param(p.b_o)};
}

/// Standard LSTM recurrence (no peepholes). Inputs and states are 1 x n rows.
/// i, f, o use sigmoid, the cell candidate uses tanh:
///   c = f . c_prev + i . g,  h = o . tanh(c)
inline std::pair<Var, Var> lstm_cell_step(Var x_t, Var h_prev, Var c_prev, const LstmVars& p) {
  Var i = sigmoid(add(add(matmul(x_t, p.w_xi), matmul(h_prev, p.w_hi)), p.b_i));
  Var f = sigmoid(add(add(matmul(x_t, p.w_xf), matmul(h_prev, p.w_hf)), p.b_f));
  Var gc = tanh(add(add(matmul(x_t, p.w_xg), matmul(h_prev, p.w_hg)), p.b_g));
  Var o = sigmoid(add(add(matmul(x_t, p.w_xo), matmul(h_prev, p.w_ho)), p.b_o));
  Var c = add(hadamard(f, c_prev), hadamard(i, gc));
  Var h = hadamard(o, tanh(c));
  return {h, c};
}

/// Bidirectional pass over a T x d sequence with zero initial states. Row t of
/// the output is concat(h_fwd[t], h_bwd[t]), where the backward direction
/// consumes the sequence in reverse. Output is T x 2h.
inline Var bilstm_forward(Graph& g, Var x, const LstmVars& fwd, const LstmVars& bwd) {
  const Tensor& X = x.value();
  if (X.rank() != 2) throw DimError("bilstm_forward: input must be rank-2");
  const std::size_t T = X.rows();
  if (T == 0) throw DimError("bilstm_forward: empty sequence");
  const std::size_t h = fwd.b_i.value().size();

  std::vector<Var> h_fwd(T), h_bwd(T);
  Var hf = g.constant(Tensor::zeros({1, h}));
  Var cf = g.constant(Tensor::zeros({1, h}));
  for (std::size_t t = 0; t < T; ++t) {
    auto [nh, nc] = lstm_cell_step(slice_rows(x, t, 1), hf, cf, fwd);
    hf = nh;
    cf = nc;
    h_fwd[t] = nh;
  }
  Var hb = g.constant(Tensor::zeros({1, h}));
  Var cb = g.constant(Tensor::zeros({1, h}));
  for (std::size_t t = T; t-- > 0;) {
    auto [nh, nc] = lstm_cell_step(slice_rows(x, t, 1), hb, cb, bwd);
    hb = nh;
    cb = nc;
    h_bwd[t] = nh;
  }
  Var out = concat_cols(h_fwd[0], h_bwd[0]);
  for (std::size_t t = 1; t < T; ++t) out = concat_rows(out, concat_cols(h_fwd[t], h_bwd[t]));
  return out;
}

/// Fully connected projection to the shared model width d.
struct ProjectionParams {
  Tensor w, b;

  static ProjectionParams init(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
    ProjectionParams p;
    p.w = Tensor({in_dim, out_dim});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (auto& v : p.w.data()) v = rng.uniform(-bound, bound);
    p.w.requires_grad = true;
    p.b = Tensor::zeros({out_dim});
    p.b.requires_grad = true;
    return p;
  }
};

struct ProjectionVars {
  Var w, b;
};

inline ProjectionVars bind(Graph& g, ProjectionParams& p) { return {g.param(p.w), g.param(p.b)}; }

/// BiLSTM encoder plus projection for one non-text modality.
struct BranchEncoderParams {
  LstmParams fwd, bwd;
  ProjectionParams proj;

  static BranchEncoderParams init(std::size_t feat_dim, std::size_t hidden, std::size_t d,
                                  Rng& rng) {
    BranchEncoderParams p;
    p.fwd = LstmParams::init(feat_dim, hidden, rng);
    p.bwd = LstmParams::init(feat_dim, hidden, rng);
    p.proj = ProjectionParams::init(2 * hidden, d, rng);
    return p;
  }
};

struct BranchEncoderVars {
  LstmVars fwd, bwd;
  ProjectionVars proj;
};

inline BranchEncoderVars bind(Graph& g, BranchEncoderParams& p) {
  return {bind(g, p.fwd), bind(g, p.bwd), bind(g, p.proj)};
}

/// Text path: precomputed features go through the projection only.
inline Var encode_text(Var x_t, const ProjectionVars& proj) {
  return linear(x_t, proj.w, proj.b);
}

/// Audio/visual path: BiLSTM over time, then projection of the 2h-wide states.
inline Var encode_branch(Graph& g, Var x_m, const BranchEncoderVars& enc) {
  return linear(bilstm_forward(g, x_m, enc.fwd, enc.bwd), enc.proj.w, enc.proj.b);
}

struct EncodedStreams {
  Var text, audio, visual;
};

/// Unified per-modality features, each T_m x d.
inline EncodedStreams encode_all(Graph& g, Var x_t, Var x_a, Var x_v, const ProjectionVars& text,
                                 const BranchEncoderVars& audio, const BranchEncoderVars& visual) {
  return {encode_text(x_t, text), encode_branch(g, x_a, audio), encode_branch(g, x_v, visual)};
}

}  // namespace tmrn

#endif  // TMRN_ENCODERS_HPP
