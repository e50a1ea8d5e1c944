// SPDX-License-Identifier: Apache-2.0
//
// GRU and LSTM cells, their Mogrifier variants, and sequence encoders.
// Every cell accepts either a single vector [D] or a batch of rows [B, D].

#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltn/optim.hpp"
#include "ltn/random.hpp"
#include "ltn/tensor.hpp"

namespace ltn {

namespace detail {
inline void check_cell_input(const char* op, const Value& x, std::size_t in, const Value& h, std::size_t hidden) {
  if (x.shape().last() != in || x.shape().rank == 0) throw ShapeError(std::string(op) + ": input " + x.shape().str() +
                                                                      " does not match input_dim " + std::to_string(in));
  if (h.shape().last() != hidden || h.shape().rank != x.shape().rank ||
      (x.shape().rank == 2 && x.shape()[0] != h.shape()[0]))
    throw ShapeError(std::string(op) + ": hidden " + h.shape().str() + " does not match input " + x.shape().str() +
                     " with hidden_dim " + std::to_string(hidden));
}

inline Value zero_state(std::size_t hidden, std::size_t batch) {
  return batch == 0 ? Value::zeros(Shape{hidden}) : Value::zeros(Shape{batch, hidden});
}
}  // namespace detail

struct GruParams {
  Value W_ir, W_iz, W_in;
  Value W_hr, W_hz, W_hn;
  Value b_ir, b_iz, b_in;
  Value b_hr, b_hz, b_hn;

  std::size_t input_dim() const { return W_ir.shape()[1]; }
  std::size_t hidden_dim() const { return W_hr.shape()[0]; }

  static GruParams init(Rng& rng, std::size_t input_dim, std::size_t hidden_dim, const std::string& prefix) {
    GruParams p;
    p.W_ir = init_weight(rng, hidden_dim, input_dim, prefix + ".W_ir");
    p.W_iz = init_weight(rng, hidden_dim, input_dim, prefix + ".W_iz");
    p.W_in = init_weight(rng, hidden_dim, input_dim, prefix + ".W_in");
    p.W_hr = init_weight(rng, hidden_dim, hidden_dim, prefix + ".W_hr");
    p.W_hz = init_weight(rng, hidden_dim, hidden_dim, prefix + ".W_hz");
    p.W_hn = init_weight(rng, hidden_dim, hidden_dim, prefix + ".W_hn");
    p.b_ir = init_bias(hidden_dim, prefix + ".b_ir");
    p.b_iz = init_bias(hidden_dim, prefix + ".b_iz");
    p.b_in = init_bias(hidden_dim, prefix + ".b_in");
    p.b_hr = init_bias(hidden_dim, prefix + ".b_hr");
    p.b_hz = init_bias(hidden_dim, prefix + ".b_hz");
    p.b_hn = init_bias(hidden_dim, prefix + ".b_hn");
    return p;
  }

  void collect(ParamSet& out) const {
    for (const Value* v : {&W_ir, &W_iz, &W_in, &W_hr, &W_hz, &W_hn, &b_ir, &b_iz, &b_in, &b_hr, &b_hz, &b_hn})
      out.add(*v);
  }
};

/// Mutual-gating matrices. Odd round a uses Q[(a-1)/2] ([input, hidden]);
/// even round a uses R[a/2-1] ([hidden, input]).
struct MogrifierParams {
  std::size_t rounds = 0;
  std::vector<Value> Q;
  std::vector<Value> R;

  static MogrifierParams init(Rng& rng, std::size_t input_dim, std::size_t hidden_dim, std::size_t rounds,
                              const std::string& prefix) {
    MogrifierParams p;
    p.rounds = rounds;
    for (std::size_t a = 1; a <= rounds; ++a) {
      if (a % 2 == 1)
        p.Q.push_back(init_weight(rng, input_dim, hidden_dim, prefix + ".Q" + std::to_string(a)));
      else
        p.R.push_back(init_weight(rng, hidden_dim, input_dim, prefix + ".R" + std::to_string(a)));
    }
    return p;
  }

  void collect(ParamSet& out) const {
    for (const auto& q : Q) out.add(q);
    for (const auto& r : R) out.add(r);
  }
};

struct Mogrified {
  Value x;
  Value h;
};

/// Alternating gating rounds: odd rounds rescale x by 1.5*tanh(Q h), even
/// rounds rescale h by 1.5*tanh(R x). Zero rounds returns the inputs.
inline Mogrified mogrify(const Value& x, const Value& h, const MogrifierParams& p) {
  if (p.Q.size() != (p.rounds + 1) / 2 || p.R.size() != p.rounds / 2)
    throw std::invalid_argument("mogrify: " + std::to_string(p.rounds) + " rounds need " +
                                std::to_string((p.rounds + 1) / 2) + " Q and " + std::to_string(p.rounds / 2) +
                                " R matrices");
  Value xc = x, hc = h;
  for (std::size_t a = 1; a <= p.rounds; ++a) {
    if (a % 2 == 1)
      xc = mul(scale(tanh(linear(hc, p.Q[(a - 1) / 2])), 1.5), xc);
    else
      hc = mul(scale(tanh(linear(xc, p.R[a / 2 - 1])), 1.5), hc);
  }
  return {xc, hc};
}

inline Value gru_step(const Value& x, const Value& h_prev, const GruParams& p) {
  detail::check_cell_input("gru_step", x, p.input_dim(), h_prev, p.hidden_dim());
  const Value r = sigmoid(linear(x, p.W_ir, p.b_ir) + linear(h_prev, p.W_hr, p.b_hr));
  const Value z = sigmoid(linear(x, p.W_iz, p.b_iz) + linear(h_prev, p.W_hz, p.b_hz));
  const Value n = tanh(linear(x, p.W_in, p.b_in) + r * linear(h_prev, p.W_hn, p.b_hn));
  // (1 - z) * n + z * h_prev
  return n + z * (h_prev - n);
}

inline Value mogrifier_gru_step(const Value& x, const Value& h_prev, const GruParams& gp, const MogrifierParams& mp) {
  detail::check_cell_input("mogrifier_gru_step", x, gp.input_dim(), h_prev, gp.hidden_dim());
  const Mogrified m = mogrify(x, h_prev, mp);
  return gru_step(m.x, m.h, gp);
}

struct LstmState {
  Value h;
  Value c;

  static LstmState zeros(std::size_t hidden, std::size_t batch = 0) {
    return {detail::zero_state(hidden, batch), detail::zero_state(hidden, batch)};
  }
};

struct LstmParams {
  Value W_ii, W_if, W_ig, W_io;
  Value W_hi, W_hf, W_hg, W_ho;
  Value b_i, b_f, b_g, b_o;
  std::optional<MogrifierParams> mogrifier;
  Value h0;  // learned initial hidden state, mogrifier layers only

  std::size_t input_dim() const { return W_ii.shape()[1]; }
  std::size_t hidden_dim() const { return W_hi.shape()[0]; }

  static LstmParams init(Rng& rng, std::size_t input_dim, std::size_t hidden_dim, std::size_t mogrifier_rounds,
                         const std::string& prefix) {
    LstmParams p;
    p.W_ii = init_weight(rng, hidden_dim, input_dim, prefix + ".W_ii");
    p.W_if = init_weight(rng, hidden_dim, input_dim, prefix + ".W_if");
    p.W_ig = init_weight(rng, hidden_dim, input_dim, prefix + ".W_ig");
    p.W_io = init_weight(rng, hidden_dim, input_dim, prefix + ".W_io");
    p.W_hi = init_weight(rng, hidden_dim, hidden_dim, prefix + ".W_hi");
    p.W_hf = init_weight(rng, hidden_dim, hidden_dim, prefix + ".W_hf");
    p.W_hg = init_weight(rng, hidden_dim, hidden_dim, prefix + ".W_hg");
    p.W_ho = init_weight(rng, hidden_dim, hidden_dim, prefix + ".W_ho");
    p.b_i = init_bias(hidden_dim, prefix + ".b_i");
    p.b_f = init_bias(hidden_dim, prefix + ".b_f");
    p.b_g = init_bias(hidden_dim, prefix + ".b_g");
    p.b_o = init_bias(hidden_dim, prefix + ".b_o");
    if (mogrifier_rounds > 0) {
      p.mogrifier = MogrifierParams::init(rng, input_dim, hidden_dim, mogrifier_rounds, prefix + ".mog");
      p.h0 = Value::parameter(Shape{hidden_dim}, std::vector<double>(hidden_dim, 1.0), prefix + ".h0");
    }
    return p;
  }

  /// Zero cell state; hidden state zero or the learned h0.
  LstmState initial_state(std::size_t batch = 0) const {
    LstmState s = LstmState::zeros(hidden_dim(), batch);
    if (h0.defined()) s.h = batch == 0 ? h0 : repeat_rows(h0, batch);
    return s;
  }

  void collect(ParamSet& out) const {
    for (const Value* v : {&W_ii, &W_if, &W_ig, &W_io, &W_hi, &W_hf, &W_hg, &W_ho, &b_i, &b_f, &b_g, &b_o})
      out.add(*v);
    if (mogrifier) mogrifier->collect(out);
    if (h0.defined()) out.add(h0);
  }
};

inline LstmState lstm_step(const Value& x_in, const LstmState& state, const LstmParams& p) {
  detail::check_cell_input("lstm_step", x_in, p.input_dim(), state.h, p.hidden_dim());
  Value x = x_in, h = state.h;
  if (p.mogrifier) {
    Mogrified m = mogrify(x, h, *p.mogrifier);
    x = m.x;
    h = m.h;
  }
  const Value i = sigmoid(linear(x, p.W_ii, p.b_i) + linear(h, p.W_hi));
  const Value f = sigmoid(linear(x, p.W_if, p.b_f) + linear(h, p.W_hf));
  const Value g = tanh(linear(x, p.W_ig, p.b_g) + linear(h, p.W_hg));
  const Value o = sigmoid(linear(x, p.W_io, p.b_o) + linear(h, p.W_ho));
  const Value c = f * state.c + i * g;
  return {o * tanh(c), c};
}

/// Runs one LSTM layer over `seq` and returns the hidden output of every step.
inline std::vector<Value> run_lstm(std::span<const Value> seq, const LstmParams& p, LstmState state) {
  std::vector<Value> out;
  out.reserve(seq.size());
  for (const auto& x : seq) {
    state = lstm_step(x, state, p);
    out.push_back(state.h);
  }
  return out;
}

/// Final hidden state of one unidirectional LSTM layer.
inline Value encode_sequence(std::span<const Value> seq, const LstmParams& p, const LstmState& initial) {
  if (seq.empty()) throw std::invalid_argument("encode_sequence: empty sequence");
  return run_lstm(seq, p, initial).back();
}

/// Forward-final and backward-final hidden states, concatenated.
inline Value encode_sequence(std::span<const Value> seq, const LstmParams& forward, const LstmParams& backward,
                             const LstmState& initial) {
  if (seq.empty()) throw std::invalid_argument("encode_sequence: empty sequence");
  std::vector<Value> rev(seq.rbegin(), seq.rend());
  return concat({run_lstm(seq, forward, initial).back(), run_lstm(rev, backward, initial).back()});
}

/// Stacked (and optionally bidirectional) Mogrifier LSTM. Layer k > 0 reads
/// the per-step outputs of layer k-1 in the same direction.
struct LstmStack {
  std::vector<LstmParams> forward;
  std::vector<LstmParams> backward;  // empty unless bidirectional

  bool bidirectional() const { return !backward.empty(); }
  std::size_t hidden_dim() const { return forward.front().hidden_dim(); }
  std::size_t input_dim() const { return forward.front().input_dim(); }
  std::size_t output_dim() const { return hidden_dim() * (bidirectional() ? 2 : 1); }

  static LstmStack init(Rng& rng, std::size_t input_dim, std::size_t hidden_dim, std::size_t layers,
                        std::size_t mogrifier_rounds, bool bidirectional, const std::string& prefix) {
    if (layers == 0) throw std::invalid_argument("LstmStack: at least one layer required");
    LstmStack s;
    for (std::size_t l = 0; l < layers; ++l)
      s.forward.push_back(LstmParams::init(rng, l == 0 ? input_dim : hidden_dim, hidden_dim, mogrifier_rounds,
                                           prefix + ".fwd" + std::to_string(l)));
    if (bidirectional)
      for (std::size_t l = 0; l < layers; ++l)
        s.backward.push_back(LstmParams::init(rng, l == 0 ? input_dim : hidden_dim, hidden_dim, mogrifier_rounds,
                                              prefix + ".bwd" + std::to_string(l)));
    return s;
  }

  /// `batch` = 0 for single vectors, otherwise the row count of every input.
  Value encode(std::span<const Value> seq, std::size_t batch = 0) const {
    if (seq.empty()) throw std::invalid_argument("LstmStack::encode: empty sequence");
    auto run_direction = [&](const std::vector<LstmParams>& layers, std::vector<Value> xs) {
      for (const auto& layer : layers) xs = run_lstm(xs, layer, layer.initial_state(batch));
      return xs.back();
    };
    std::vector<Value> xs(seq.begin(), seq.end());
    Value fwd = run_direction(forward, xs);
    if (!bidirectional()) return fwd;
    std::vector<Value> rev(seq.rbegin(), seq.rend());
    return concat({fwd, run_direction(backward, rev)});
  }

  void collect(ParamSet& out) const {
    for (const auto& l : forward) l.collect(out);
    for (const auto& l : backward) l.collect(out);
  }
};

}  // namespace ltn
