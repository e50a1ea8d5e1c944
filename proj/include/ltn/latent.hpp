// SPDX-License-Identifier: Apache-2.0
//
// Discrete-latent CVAE: categorical prior/posterior heads, KL and mutual
// information terms, the Mogrifier-GRU trajectory decoder and proposal
// sampling.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltn/cells.hpp"
#include "ltn/config.hpp"
#include "ltn/optim.hpp"
#include "ltn/random.hpp"
#include "ltn/scene.hpp"
#include "ltn/tensor.hpp"

namespace ltn {

struct CategoricalLatent {
  std::vector<double> logits;
  std::vector<double> probs;

  static CategoricalLatent from_logits(std::span<const double> logits) {
    CategoricalLatent c;
    c.logits.assign(logits.begin(), logits.end());
    c.probs.resize(c.logits.size());
    detail::softmax_rows(c.logits, c.probs, 1, c.logits.size(), false);
    return c;
  }
  static CategoricalLatent from_probs(std::vector<double> probs) {
    CategoricalLatent c;
    c.logits.resize(probs.size());
    for (std::size_t k = 0; k < probs.size(); ++k) c.logits[k] = std::log(probs[k]);
    c.probs = std::move(probs);
    return c;
  }

  /// Most likely symbol; the lowest index wins ties.
  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
};

/// affine -> tanh -> affine to |Z| logits.
struct LatentHeadParams {
  Value W1, b1, W2, b2;

  static LatentHeadParams init(Rng& rng, std::size_t in, std::size_t hidden, std::size_t latent,
                               const std::string& prefix) {
    return {init_weight(rng, hidden, in, prefix + ".W1"), init_bias(hidden, prefix + ".b1"),
            init_weight(rng, latent, hidden, prefix + ".W2"), init_bias(latent, prefix + ".b2")};
  }
  std::size_t input_dim() const { return W1.shape()[1]; }
  std::size_t latent_dim() const { return W2.shape()[0]; }

  Value logits(const Value& condition) const { return linear(tanh(linear(condition, W1, b1)), W2, b2); }

  void collect(ParamSet& out) const {
    for (const Value* v : {&W1, &b1, &W2, &b2}) out.add(*v);
  }
};

namespace detail {
inline CategoricalLatent checked_latent(const Value& logits, const char* who) {
  for (double l : logits.data())
    if (!std::isfinite(l)) throw std::runtime_error(std::string(who) + ": non-finite logits");
  return CategoricalLatent::from_logits(logits.data());
}
}  // namespace detail

/// p_theta(z | V_i). `v_i` already carries the map section when maps are used.
inline Value prior_logits(const Value& v_i, const LatentHeadParams& theta) { return theta.logits(v_i); }

/// q_phi(z | V_f, V_i).
inline Value posterior_logits(const Value& v_i, const Value& v_f, const LatentHeadParams& phi) {
  return phi.logits(concat({v_i, v_f}));
}

inline CategoricalLatent prior_distribution(const Value& v_i, const LatentHeadParams& theta) {
  NoGradGuard ng;
  return detail::checked_latent(prior_logits(v_i, theta), "prior_distribution");
}

inline CategoricalLatent posterior_distribution(const Value& v_i, const Value& v_f, const LatentHeadParams& phi) {
  NoGradGuard ng;
  return detail::checked_latent(posterior_logits(v_i, v_f, phi), "posterior_distribution");
}

/// KL(q || p) with 0 log 0 = 0; +infinity when q puts mass where p has none.
inline double kl_divergence(const CategoricalLatent& q, const CategoricalLatent& p) {
  if (q.probs.size() != p.probs.size()) throw std::invalid_argument("kl_divergence: support size mismatch");
  double kl = 0.0;
  for (std::size_t k = 0; k < q.probs.size(); ++k) {
    if (q.probs[k] <= 0.0) continue;
    if (p.probs[k] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += q.probs[k] * (std::log(q.probs[k]) - std::log(p.probs[k]));
  }
  return kl;
}

/// Differentiable KL between two categorical distributions given by logits.
inline Value kl_divergence(const Value& q_logits, const Value& p_logits) {
  const Value log_q = log_softmax(q_logits);
  return sum(mul(softmax(q_logits), sub(log_q, log_softmax(p_logits))));
}

/// I_q: mean over the batch of KL(q(z|x_b) || mean_b q(z|x_b)).
inline double mutual_information(const std::vector<CategoricalLatent>& batch) {
  if (batch.empty()) throw std::invalid_argument("mutual_information: empty batch");
  const std::size_t K = batch.front().probs.size();
  CategoricalLatent marginal;
  marginal.probs.assign(K, 0.0);
  for (const auto& q : batch)
    for (std::size_t k = 0; k < K; ++k) marginal.probs[k] += q.probs[k] / static_cast<double>(batch.size());
  double acc = 0.0;
  for (const auto& q : batch) acc += kl_divergence(q, marginal);
  return acc / static_cast<double>(batch.size());
}

inline Value mutual_information(const std::vector<Value>& q_logits) {
  if (q_logits.empty()) throw std::invalid_argument("mutual_information: empty batch");
  const Value L = stack(q_logits);
  const Value Q = softmax(L);
  const Value log_marginal = log(mean_rows(Q));
  return scale(sum(mul(Q, sub(log_softmax(L), log_marginal))), 1.0 / static_cast<double>(q_logits.size()));
}

// ---------------------------------------------------------------------------
// Decoder

/// Per-step bivariate Gaussian over the position increment. The covariance
/// is L L^T with L = [[exp(a), 0], [c, exp(b)]].
struct GaussianStep {
  Vec2 mean;
  double log_l11 = 0.0;
  double l21 = 0.0;
  double log_l22 = 0.0;

  double l11() const { return std::exp(log_l11); }
  double l22() const { return std::exp(log_l22); }
  std::array<double, 3> cov() const {  // xx, xy, yy
    return {l11() * l11(), l11() * l21, l21 * l21 + l22() * l22()};
  }
  double log_density(Vec2 increment) const {
    const double u1 = (increment.x - mean.x) / l11();
    const double u2 = (increment.y - mean.y - l21 * u1) / l22();
    return -std::log(2.0 * std::numbers::pi) - log_l11 - log_l22 - 0.5 * (u1 * u1 + u2 * u2);
  }
  Vec2 sample(CounterRng& rng) const {
    const double e1 = rng.normal(), e2 = rng.normal();
    return {mean.x + l11() * e1, mean.y + l21 * e1 + l22() * e2};
  }
};

struct DecodedDistribution {
  std::size_t latent_index = 0;
  Vec2 origin;  // last observed position
  std::vector<GaussianStep> steps;

  std::vector<Vec2> mean_positions() const {
    std::vector<Vec2> out;
    Vec2 p = origin;
    for (const auto& s : steps) {
      p = p + s.mean;
      out.push_back(p);
    }
    return out;
  }
  double log_likelihood(std::span<const Vec2> future) const {
    if (future.size() != steps.size()) throw std::invalid_argument("log_likelihood: horizon mismatch");
    double ll = 0.0;
    Vec2 prev = origin;
    for (std::size_t t = 0; t < steps.size(); ++t) {
      ll += steps[t].log_density(future[t] - prev);
      prev = future[t];
    }
    return ll;
  }
};

inline constexpr std::size_t kGaussianParams = 5;  // mean x, mean y, log l11, log l22, l21
inline constexpr double kLogScaleMin = -5.0;
inline constexpr double kLogScaleMax = 3.0;

struct DecoderParams {
  Value W_init, b_init;  // condition -> initial hidden
  GruParams gru;
  MogrifierParams mogrifier;
  Value W_out, b_out;  // hidden -> 5 Gaussian parameters

  static DecoderParams init(Rng& rng, std::size_t history_dim, std::size_t latent_dim, std::size_t hidden,
                            std::size_t rounds, const std::string& prefix) {
    DecoderParams p;
    const std::size_t cond = history_dim + latent_dim;
    p.W_init = init_weight(rng, hidden, cond, prefix + ".W_init");
    p.b_init = init_bias(hidden, prefix + ".b_init");
    p.gru = GruParams::init(rng, cond + 2, hidden, prefix + ".gru");
    p.mogrifier = MogrifierParams::init(rng, cond + 2, hidden, rounds, prefix + ".mog");
    p.W_out = init_weight(rng, kGaussianParams, hidden, prefix + ".W_out");
    p.b_out = init_bias(kGaussianParams, prefix + ".b_out");
    return p;
  }
  std::size_t condition_dim() const { return W_init.shape()[1]; }

  void collect(ParamSet& out) const {
    out.add(W_init);
    out.add(b_init);
    gru.collect(out);
    mogrifier.collect(out);
    out.add(W_out);
    out.add(b_out);
  }
};

/// Decoder unrolled for a batch of latent symbols; step t holds a
/// [K, 5] array of Gaussian parameters, one row per symbol.
struct DecoderRollout {
  std::vector<std::size_t> latents;
  std::vector<Value> steps;
};

/// Runs the decoder for each symbol in `latents`. The initial hidden state is
/// an affine map of [V_i, one-hot z]; the step input is [V_i, one-hot z,
/// previous mean increment].
inline DecoderRollout decode_rollout(const Value& v_i, std::span<const std::size_t> latents, const DecoderParams& p,
                                     std::size_t latent_dim, std::size_t horizon) {
  if (latents.empty()) throw std::invalid_argument("decode_rollout: no latent symbols");
  const std::size_t K = latents.size();
  std::vector<double> onehot(K * latent_dim, 0.0);
  for (std::size_t r = 0; r < K; ++r) {
    if (latents[r] >= latent_dim)
      throw std::out_of_range("decode_rollout: latent index " + std::to_string(latents[r]) + " outside [0," +
                              std::to_string(latent_dim) + ")");
    onehot[r * latent_dim + latents[r]] = 1.0;
  }
  const Value cond = concat({repeat_rows(v_i, K), Value::constant(Shape{K, latent_dim}, std::move(onehot))});
  if (cond.shape()[1] != p.condition_dim())
    throw ShapeError("decode_rollout: condition width " + std::to_string(cond.shape()[1]) + " but decoder expects " +
                     std::to_string(p.condition_dim()));
  DecoderRollout out;
  out.latents.assign(latents.begin(), latents.end());
  Value h = linear(cond, p.W_init, p.b_init);
  Value prev_mean = Value::zeros(Shape{K, 2});
  for (std::size_t t = 0; t < horizon; ++t) {
    h = mogrifier_gru_step(concat({cond, prev_mean}), h, p.gru, p.mogrifier);
    const Value raw = linear(h, p.W_out, p.b_out);
    const Value g = concat({slice(raw, 0, 2), clamp(slice(raw, 2, 4), kLogScaleMin, kLogScaleMax), slice(raw, 4, 5)});
    out.steps.push_back(g);
    prev_mean = slice(g, 0, 2);
  }
  return out;
}

/// Sum over steps of the increment log-densities of `future`, one entry per
/// rollout row.
inline Value rollout_log_likelihood(const DecoderRollout& r, Vec2 origin, std::span<const Vec2> future) {
  if (future.size() != r.steps.size()) throw std::invalid_argument("rollout_log_likelihood: horizon mismatch");
  Value total;
  Vec2 prev = origin;
  for (std::size_t t = 0; t < r.steps.size(); ++t) {
    const Vec2 d = future[t] - prev;
    prev = future[t];
    const Value& g = r.steps[t];
    const Value a = slice(g, 2, 3), b = slice(g, 3, 4), c = slice(g, 4, 5);
    const Value u1 = mul(add(neg(slice(g, 0, 1)), Value::vector({d.x})), exp(neg(a)));
    const Value u2 = mul(sub(add(neg(slice(g, 1, 2)), Value::vector({d.y})), mul(c, u1)), exp(neg(b)));
    const Value ll = add_scalar(neg(add(add(a, b), scale(add(square(u1), square(u2)), 0.5))),
                                -std::log(2.0 * std::numbers::pi));
    total = total.defined() ? add(total, ll) : ll;
  }
  return reshape(total, Shape{r.latents.size()});
}

inline DecodedDistribution rollout_distribution(const DecoderRollout& r, std::size_t row, Vec2 origin) {
  DecodedDistribution d;
  d.latent_index = r.latents.at(row);
  d.origin = origin;
  for (const auto& g : r.steps) {
    const double* x = g.data().data() + row * kGaussianParams;
    d.steps.push_back({{x[0], x[1]}, x[2], x[4], x[3]});
  }
  return d;
}

inline DecodedDistribution decode_trajectory_distribution(const Value& v_i, std::size_t z, const DecoderParams& p,
                                                          std::size_t latent_dim, std::size_t horizon, Vec2 origin) {
  NoGradGuard ng;
  const std::size_t zs[1] = {z};
  return rollout_distribution(decode_rollout(v_i, zs, p, latent_dim, horizon), 0, origin);
}

struct TrajectoryProposal {
  std::size_t index = 0;
  std::size_t latent_index = 0;
  std::vector<Vec2> positions;
  std::optional<double> score;
  std::optional<bool> label;  // true = positive
  std::optional<double> avg_distance;
};

enum class SamplingMode { latent_mode, full };

/// Draws one trajectory from `dist` using proposal stream `stream`.
inline TrajectoryProposal sample_trajectory(const DecodedDistribution& dist, std::uint64_t seed, std::uint64_t stream) {
  CounterRng rng(seed, stream);
  TrajectoryProposal p;
  p.latent_index = dist.latent_index;
  Vec2 pos = dist.origin;
  for (const auto& s : dist.steps) {
    pos = pos + s.sample(rng);
    p.positions.push_back(pos);
  }
  return p;
}

/// Proposal k always uses stream `stream_base + k`, so results do not depend
/// on how proposals are partitioned.
inline std::vector<TrajectoryProposal> sample_proposals(const CategoricalLatent& prior, const DecoderRollout& all,
                                                        Vec2 origin, std::size_t n, SamplingMode mode,
                                                        std::uint64_t seed, std::uint64_t stream_base) {
  if (n == 0) throw std::invalid_argument("sample_proposals: need at least one proposal");
  auto row_of = [&](std::size_t z) {
    const auto it = std::find(all.latents.begin(), all.latents.end(), z);
    if (it == all.latents.end()) throw std::invalid_argument("sample_proposals: rollout lacks latent " + std::to_string(z));
    return static_cast<std::size_t>(it - all.latents.begin());
  };
  std::vector<TrajectoryProposal> out;
  out.reserve(n);
  const std::size_t mode_z = prior.argmax();
  std::optional<DecodedDistribution> mode_dist;
  if (mode == SamplingMode::latent_mode) mode_dist = rollout_distribution(all, row_of(mode_z), origin);
  for (std::size_t k = 0; k < n; ++k) {
    if (mode == SamplingMode::latent_mode) {
      out.push_back(sample_trajectory(*mode_dist, seed, stream_base + k));
    } else {
      // Symbol draw uses a sibling stream so step noise matches latent_mode.
      CounterRng zr(seed ^ 0x5bd1e995ULL, stream_base + k);
      const double u = zr.uniform();
      double acc = 0.0;
      std::size_t z = prior.probs.size() - 1;
      for (std::size_t j = 0; j < prior.probs.size(); ++j) {
        acc += prior.probs[j];
        if (u < acc) {
          z = j;
          break;
        }
      }
      out.push_back(sample_trajectory(rollout_distribution(all, row_of(z), origin), seed, stream_base + k));
    }
    out.back().index = k;
  }
  return out;
}

}  // namespace ltn
