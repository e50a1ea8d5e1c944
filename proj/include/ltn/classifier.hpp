// SPDX-License-Identifier: Apache-2.0
//
// Second stage: label proposals against ground truth, score them with a
// binary classifier and pick the final trajectories.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltn/cells.hpp"
#include "ltn/latent.hpp"
#include "ltn/optim.hpp"
#include "ltn/scene.hpp"
#include "ltn/tensor.hpp"

namespace ltn {

inline constexpr double kScoreClamp = 1e-7;

struct ClassifierParams {
  GruParams encoder;  // over proposal increments
  Value W1, b1;       // [head, hidden + history_dim]
  Value W2, b2;       // [1, head]
  Value log_w;        // BCE weight w = exp(log_w) > 0

  static ClassifierParams init(Rng& rng, std::size_t history_dim, std::size_t hidden, std::size_t head,
                               const std::string& prefix) {
    ClassifierParams p;
    p.encoder = GruParams::init(rng, 2, hidden, prefix + ".gru");
    p.W1 = init_weight(rng, head, hidden + history_dim, prefix + ".W1");
    p.b1 = init_bias(head, prefix + ".b1");
    p.W2 = init_weight(rng, 1, head, prefix + ".W2");
    p.b2 = init_bias(1, prefix + ".b2");
    p.log_w = Value::parameter(Shape{1}, {0.0}, prefix + ".log_w");
    return p;
  }
  double w() const { return std::exp(log_w[0]); }

  void collect(ParamSet& out) const {
    encoder.collect(out);
    for (const Value* v : {&W1, &b1, &W2, &b2, &log_w}) out.add(*v);
  }
};

/// Mean over timesteps of the Euclidean distance to ground truth.
inline double average_distance(std::span<const Vec2> a, std::span<const Vec2> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("average_distance: horizon mismatch");
  double acc = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) acc += distance(a[t], b[t]);
  return acc / static_cast<double>(a.size());
}

/// Positive iff the average distance D <= gamma.
inline void label_proposals(std::vector<TrajectoryProposal>& proposals, std::span<const Vec2> ground_truth,
                            double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("label_proposals: gamma must be positive");
  for (auto& p : proposals) {
    if (p.positions.size() != ground_truth.size())
      throw std::invalid_argument("label_proposals: proposal " + std::to_string(p.index) + " has " +
                                  std::to_string(p.positions.size()) + " steps, ground truth " +
                                  std::to_string(ground_truth.size()));
    const double D = average_distance(p.positions, ground_truth);
    p.avg_distance = D;
    p.label = D <= gamma;
  }
}

/// Differentiable scores in (0,1), one per proposal. `v_i` should be
/// detached by callers that keep the encoders out of the classifier loss.
inline Value score_values(std::span<const TrajectoryProposal> proposals, Vec2 origin, const Value& v_i,
                          const ClassifierParams& p) {
  if (proposals.empty()) throw std::invalid_argument("score_proposals: no proposals");
  const std::size_t N = proposals.size(), T = proposals.front().positions.size();
  Value h = Value::zeros(Shape{N, p.encoder.hidden_dim()});
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> inc(N * 2);
    for (std::size_t n = 0; n < N; ++n) {
      if (proposals[n].positions.size() != T) throw std::invalid_argument("score_proposals: ragged proposal horizons");
      const Vec2 prev = t == 0 ? origin : proposals[n].positions[t - 1];
      const Vec2 d = proposals[n].positions[t] - prev;
      inc[2 * n] = d.x;
      inc[2 * n + 1] = d.y;
    }
    h = gru_step(Value::constant(Shape{N, 2}, std::move(inc)), h, p.encoder);
  }
  const Value feat = concat({h, repeat_rows(v_i, N)});
  return reshape(sigmoid(linear(tanh(linear(feat, p.W1, p.b1)), p.W2, p.b2)), Shape{N});
}

inline void score_proposals(std::vector<TrajectoryProposal>& proposals, Vec2 origin, const Value& v_i,
                            const ClassifierParams& p) {
  NoGradGuard ng;
  const Value s = score_values(proposals, origin, v_i, p);
  for (std::size_t n = 0; n < proposals.size(); ++n) proposals[n].score = s[n];
}

/// Weighted BCE -w (y log x + (1-y) log(1-x)) per proposal, x clamped to
/// [1e-7, 1-1e-7]. Returns the per-proposal losses.
inline Value classification_losses(const Value& scores, std::span<const double> labels, const Value& log_w) {
  if (scores.numel() != labels.size()) throw std::invalid_argument("classification_loss: label count mismatch");
  const Value x = clamp(scores, kScoreClamp, 1.0 - kScoreClamp);
  const Value y = Value::constant(scores.shape(), std::vector<double>(labels.begin(), labels.end()));
  std::vector<double> inv(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) inv[i] = 1.0 - labels[i];
  const Value one_minus_y = Value::constant(scores.shape(), std::move(inv));
  const Value ll = add(mul(y, log(x)), mul(one_minus_y, log(add_scalar(neg(x), 1.0))));
  return neg(scale_by(ll, exp(log_w)));
}

/// Mean of the per-proposal weighted BCE terms.
inline Value classification_loss(const Value& scores, std::span<const double> labels, const Value& log_w) {
  return mean(classification_losses(scores, labels, log_w));
}

inline double classification_loss(std::span<const double> scores, std::span<const double> labels, double w) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("classification_loss: label count mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double x = std::clamp(scores[i], kScoreClamp, 1.0 - kScoreClamp);
    acc += -w * (labels[i] * std::log(x) + (1.0 - labels[i]) * std::log(1.0 - x));
  }
  return acc / static_cast<double>(scores.size());
}

/// Highest score first; ties go to the lower average distance (unknown
/// distances last), then to the lower proposal index.
inline std::vector<TrajectoryProposal> select_final_trajectory(std::vector<TrajectoryProposal> proposals,
                                                               std::size_t k) {
  if (k > proposals.size())
    throw std::invalid_argument("select_final_trajectory: k=" + std::to_string(k) + " exceeds " +
                                std::to_string(proposals.size()) + " proposals");
  for (const auto& p : proposals)
    if (!p.score) throw std::invalid_argument("select_final_trajectory: proposal " + std::to_string(p.index) + " is unscored");
  std::sort(proposals.begin(), proposals.end(), [](const TrajectoryProposal& a, const TrajectoryProposal& b) {
    if (*a.score != *b.score) return *a.score > *b.score;
    const double unknown = std::numeric_limits<double>::infinity();
    const double da = a.avg_distance.value_or(unknown), db = b.avg_distance.value_or(unknown);
    if (da != db) return da < db;
    return a.index < b.index;
  });
  proposals.resize(k);
  return proposals;
}

}  // namespace ltn
