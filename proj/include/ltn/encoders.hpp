// SPDX-License-Identifier: Apache-2.0
//
// History, social, future and map encoders producing the complete history
// tensor V_i and the complete future tensor V_f.

#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltn/cells.hpp"
#include "ltn/config.hpp"
#include "ltn/optim.hpp"
#include "ltn/scene.hpp"
#include "ltn/tensor.hpp"

namespace ltn {

/// Features per step: position relative to `origin` and finite-difference
/// velocity.
inline constexpr std::size_t kStepFeatures = 4;

/// Additive attention: score(q, k) = v . tanh(W_q q + W_k k).
struct AttentionParams {
  Value W_q;  // [A, query_dim]
  Value W_k;  // [A, key_dim]
  Value v;    // [A]

  static AttentionParams init(Rng& rng, std::size_t query_dim, std::size_t key_dim, std::size_t inner,
                              const std::string& prefix) {
    AttentionParams p;
    p.W_q = init_weight(rng, inner, query_dim, prefix + ".W_q");
    p.W_k = init_weight(rng, inner, key_dim, prefix + ".W_k");
    const double bound = 1.0 / std::sqrt(static_cast<double>(inner));
    std::vector<double> v(inner);
    for (auto& x : v) x = rng.uniform(-bound, bound);
    p.v = Value::parameter(Shape{inner}, std::move(v), prefix + ".v");
    return p;
  }
  void collect(ParamSet& out) const {
    out.add(W_q);
    out.add(W_k);
    out.add(v);
  }
};

struct AttentionResult {
  Value pooled;   // [key_dim]
  Value weights;  // [n]
};

/// Softmax-weighted sum of the rows of `keys` ([n, key_dim], n >= 1).
inline AttentionResult attend(const Value& query, const Value& keys, const AttentionParams& p) {
  const Value scores = matmul(tanh(add(linear(keys, p.W_k), linear(query, p.W_q))), p.v);
  const Value w = softmax(scores);
  return {matmul(w, keys), w};
}

/// Two stride-2 3x3 convolutions with ReLU, flattened and projected.
struct MapEncoderParams {
  std::size_t cells = 0;
  Value conv1_w, conv1_b;  // [c, 9], [c]
  Value conv2_w, conv2_b;  // [2c, 9c], [2c]
  Value proj_w, proj_b;    // [hidden, 2c * (cells/4)^2], [hidden]

  static MapEncoderParams init(Rng& rng, std::size_t cells, std::size_t channels, std::size_t hidden,
                               const std::string& prefix) {
    if (cells == 0 || cells % 4 != 0) throw std::invalid_argument("map encoder: map_cells must be a positive multiple of 4");
    MapEncoderParams p;
    p.cells = cells;
    p.conv1_w = init_weight(rng, channels, 9, prefix + ".conv1_w");
    p.conv1_b = init_bias(channels, prefix + ".conv1_b");
    p.conv2_w = init_weight(rng, 2 * channels, 9 * channels, prefix + ".conv2_w");
    p.conv2_b = init_bias(2 * channels, prefix + ".conv2_b");
    const std::size_t flat = 2 * channels * (cells / 4) * (cells / 4);
    p.proj_w = init_weight(rng, hidden, flat, prefix + ".proj_w");
    p.proj_b = init_bias(hidden, prefix + ".proj_b");
    return p;
  }
  std::size_t hidden_dim() const { return proj_w.shape()[0]; }
  void collect(ParamSet& out) const {
    for (const Value* v : {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &proj_w, &proj_b}) out.add(*v);
  }
};

struct EncoderParams {
  LstmStack history;
  LstmStack neighbor;
  LstmStack future;           // bidirectional
  LstmStack neighbor_future;
  AttentionParams social;
  AttentionParams future_social;
  MapEncoderParams map;

  static EncoderParams init(Rng& rng, const ModelConfig& c) {
    EncoderParams p;
    p.history = LstmStack::init(rng, kStepFeatures, c.history_hidden, c.encoder_layers, c.encoder_rounds, false, "enc.history");
    p.neighbor = LstmStack::init(rng, kStepFeatures, c.neighbor_hidden, c.encoder_layers, c.encoder_rounds, false, "enc.neighbor");
    p.future = LstmStack::init(rng, kStepFeatures, c.future_hidden, c.encoder_layers, c.encoder_rounds, true, "enc.future");
    p.neighbor_future =
        LstmStack::init(rng, kStepFeatures, c.neighbor_hidden, c.encoder_layers, c.encoder_rounds, false, "enc.neighbor_future");
    p.social = AttentionParams::init(rng, c.history_hidden, c.neighbor_hidden, c.attention_dim, "enc.social");
    p.future_social = AttentionParams::init(rng, 2 * c.future_hidden, c.neighbor_hidden, c.attention_dim, "enc.future_social");
    if (c.use_map) p.map = MapEncoderParams::init(rng, c.map_cells, c.map_channels, c.map_hidden, "enc.map");
    return p;
  }

  bool has_map() const { return map.proj_w.defined(); }

  void collect(ParamSet& out) const {
    history.collect(out);
    neighbor.collect(out);
    future.collect(out);
    neighbor_future.collect(out);
    social.collect(out);
    future_social.collect(out);
    if (has_map()) map.collect(out);
  }
};

/// Per-step features of `track`; `before_first` is the position preceding
/// track[0] for the velocity term (the first velocity is zero when absent).
inline std::vector<std::array<double, kStepFeatures>> step_features(std::span<const Vec2> track, Vec2 origin, double dt,
                                                                    const Vec2* before_first = nullptr) {
  std::vector<std::array<double, kStepFeatures>> out;
  out.reserve(track.size());
  for (std::size_t t = 0; t < track.size(); ++t) {
    Vec2 vel{0.0, 0.0};
    if (t > 0)
      vel = (1.0 / dt) * (track[t] - track[t - 1]);
    else if (before_first)
      vel = (1.0 / dt) * (track[0] - *before_first);
    const Vec2 rel = track[t] - origin;
    out.push_back({rel.x, rel.y, vel.x, vel.y});
  }
  return out;
}

/// Stacks several equal-length feature sequences into per-step [n, 4]
/// constants (or [4] vectors when `tracks` has one entry and `batched` is false).
inline std::vector<Value> feature_inputs(const std::vector<std::vector<std::array<double, kStepFeatures>>>& tracks,
                                         bool batched) {
  const std::size_t n = tracks.size(), T = tracks.front().size();
  std::vector<Value> seq;
  seq.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> d;
    d.reserve(n * kStepFeatures);
    for (const auto& tr : tracks) d.insert(d.end(), tr[t].begin(), tr[t].end());
    seq.push_back(batched ? Value::constant(Shape{n, kStepFeatures}, std::move(d))
                          : Value::constant(Shape{kStepFeatures}, std::move(d)));
  }
  return seq;
}

inline void check_history(const PredictionInstance& inst) {
  if (inst.history.size() < 2 || inst.history.size() != inst.horizon.obs_frames)
    throw std::invalid_argument("encoder: history of '" + inst.id + "' has " + std::to_string(inst.history.size()) +
                                " frames, expected " + std::to_string(inst.horizon.obs_frames) + " (>= 2)");
}

/// Final hidden state of the stacked Mogrifier LSTM over the agent's history.
inline Value encode_agent_history(const PredictionInstance& inst, const EncoderParams& p) {
  check_history(inst);
  const auto feats = step_features(inst.history, inst.last_observed(), inst.dt);
  return p.history.encode(feature_inputs({feats}, false));
}

struct SocialEncoding {
  Value pooled;    // [neighbor_hidden]
  Value weights;   // [n], undefined when empty
  bool empty = true;
};

namespace detail {
inline SocialEncoding pool_neighbors(const std::vector<std::vector<std::array<double, kStepFeatures>>>& feats,
                                     const LstmStack& encoder, const AttentionParams& attention, const Value& query) {
  SocialEncoding out;
  if (feats.empty()) {
    out.pooled = Value::zeros(Shape{encoder.output_dim()});
    return out;
  }
  const Value keys = encoder.encode(feature_inputs(feats, true), feats.size());
  const AttentionResult a = attend(query, keys, attention);
  out.pooled = a.pooled;
  out.weights = a.weights;
  out.empty = false;
  return out;
}
}  // namespace detail

/// Neighbor histories encoded by the shared neighbor LSTM and pooled by
/// additive attention with `query` (the agent-history encoding).
inline SocialEncoding encode_social(const PredictionInstance& inst, const EncoderParams& p, const Value& query) {
  check_history(inst);
  std::vector<std::vector<std::array<double, kStepFeatures>>> feats;
  for (const auto& nb : inst.neighbor_histories) feats.push_back(step_features(nb, inst.last_observed(), inst.dt));
  return detail::pool_neighbors(feats, p.neighbor, p.social, query);
}

struct MapEncoding {
  Value encoding;
  bool available = false;
};

/// Map CNN; an unavailable patch yields zeros with `available` false.
inline MapEncoding encode_map(const MapPatch& patch, const MapEncoderParams& p) {
  if (patch.values.size() != patch.cells * patch.cells)
    throw std::invalid_argument("encode_map: patch is not square (" + std::to_string(patch.values.size()) +
                                " values for side " + std::to_string(patch.cells) + ")");
  if (patch.cells != p.cells)
    throw std::invalid_argument("encode_map: patch side " + std::to_string(patch.cells) + " but encoder expects " +
                                std::to_string(p.cells));
  if (!patch.available) return {Value::zeros(Shape{p.hidden_dim()}), false};
  const Value x = Value::constant(Shape{1, patch.cells, patch.cells}, patch.values);
  const Value h1 = relu(conv2d(x, p.conv1_w, p.conv1_b, 3, 2, 1));
  const Value h2 = relu(conv2d(h1, p.conv2_w, p.conv2_b, 3, 2, 1));
  return {linear(reshape(h2, Shape{h2.numel()}), p.proj_w, p.proj_b), true};
}

struct HistoryEncoding {
  Value v_i;
  Value agent;
  SocialEncoding social;
  MapEncoding map;
};

inline HistoryEncoding encode_history(const PredictionInstance& inst, const EncoderParams& p) {
  HistoryEncoding h;
  h.agent = encode_agent_history(inst, p);
  h.social = encode_social(inst, p, h.agent);
  if (p.has_map()) {
    h.map = encode_map(inst.map_patch, p.map);
    h.v_i = concat({h.agent, h.social.pooled, h.map.encoding});
  } else {
    h.v_i = concat({h.agent, h.social.pooled});
  }
  return h;
}

struct FutureEncoding {
  Value v_f;            // [2*future_hidden + neighbor_hidden]
  Value bidirectional;  // [2*future_hidden]
  SocialEncoding social;
};

/// Training-only encoding of the ground-truth futures of the agent and its
/// neighbors, relative to the agent's last observed position.
inline FutureEncoding encode_future(const PredictionInstance& inst, const EncoderParams& p) {
  if (!inst.has_future())
    throw std::logic_error("encode_future: instance '" + inst.id + "' has no ground-truth future (inference mode)");
  const Vec2 origin = inst.last_observed();
  FutureEncoding out;
  out.bidirectional = p.future.encode(feature_inputs({step_features(inst.future, origin, inst.dt, &origin)}, false));
  std::vector<std::vector<std::array<double, kStepFeatures>>> feats;
  for (std::size_t k = 0; k < inst.neighbor_futures.size(); ++k) {
    const Vec2 prev = inst.neighbor_histories[k].back();
    feats.push_back(step_features(inst.neighbor_futures[k], origin, inst.dt, &prev));
  }
  out.social = detail::pool_neighbors(feats, p.neighbor_future, p.future_social, out.bidirectional);
  out.v_f = concat({out.bidirectional, out.social.pooled});
  return out;
}

}  // namespace ltn
