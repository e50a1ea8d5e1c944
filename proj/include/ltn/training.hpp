// SPDX-License-Identifier: Apache-2.0
//
// Composite objective (ELBO-style regression term plus weighted BCE over
// proposals) and the optimization loop.

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltn/classifier.hpp"
#include "ltn/config.hpp"
#include "ltn/encoders.hpp"
#include "ltn/latent.hpp"
#include "ltn/metrics.hpp"
#include "ltn/model.hpp"
#include "ltn/optim.hpp"

namespace ltn {

/// Training-mode forward pass of one instance over all latent symbols.
struct InstanceForward {
  HistoryEncoding history;
  FutureEncoding future;
  Value prior_logits;
  Value posterior_logits;
  DecoderRollout rollout;
  Value log_likelihood;  // [|Z|], log p_psi(future | V_i, z)
};

inline InstanceForward forward_instance(const Model& m, const PredictionInstance& inst) {
  if (inst.future.size() != m.config.pred_frames)
    throw std::invalid_argument("forward_instance: '" + inst.id + "' has " + std::to_string(inst.future.size()) +
                                " future frames, model predicts " + std::to_string(m.config.pred_frames));
  InstanceForward f;
  f.history = encode_history(inst, m.encoder);
  f.future = encode_future(inst, m.encoder);
  f.prior_logits = prior_logits(f.history.v_i, m.prior);
  f.posterior_logits = posterior_logits(f.history.v_i, f.future.v_f, m.posterior);
  std::vector<std::size_t> all(m.config.latent_dim);
  for (std::size_t z = 0; z < all.size(); ++z) all[z] = z;
  f.rollout = decode_rollout(f.history.v_i, all, m.decoder, m.config.latent_dim, m.config.pred_frames);
  f.log_likelihood = rollout_log_likelihood(f.rollout, inst.last_observed(), inst.future);
  return f;
}

struct RegressionTerms {
  Value loss;                  // to minimize
  double expected_ll = 0.0;    // batch mean of E_q[log p_psi]
  double kl = 0.0;             // batch mean of KL(q || p)
  double mutual_info = 0.0;    // I_q over the batch
};

/// -(mean_b E_{z~q}[log p_psi] - beta * mean_b KL(q||p) + alpha * I_q).
/// The expectation enumerates every symbol weighted by q.
inline RegressionTerms regression_loss(std::span<const InstanceForward> batch, double beta, double alpha) {
  if (batch.empty()) throw std::invalid_argument("regression_loss: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Value acc;
  std::vector<Value> q_logits;
  RegressionTerms out;
  for (const auto& f : batch) {
    const Value e = sum(mul(softmax(f.posterior_logits), f.log_likelihood));
    const Value kl = kl_divergence(f.posterior_logits, f.prior_logits);
    out.expected_ll += e.item() * inv_b;
    out.kl += kl.item() * inv_b;
    const Value term = sub(scale(kl, beta), e);
    acc = acc.defined() ? add(acc, term) : term;
    q_logits.push_back(f.posterior_logits);
  }
  Value loss = scale(acc, inv_b);
  const Value mi = mutual_information(q_logits);
  out.mutual_info = mi.item();
  if (alpha != 0.0) loss = sub(loss, scale(mi, alpha));
  out.loss = loss;
  return out;
}

inline RegressionTerms regression_loss(std::span<const PredictionInstance> instances, const Model& m, double beta,
                                       double alpha) {
  std::vector<InstanceForward> fw;
  for (const auto& inst : instances) fw.push_back(forward_instance(m, inst));
  return regression_loss(fw, beta, alpha);
}

/// L_reg + (1/N) sum_n L_class(n).
inline Value total_loss(const Value& reg_loss, const Value& class_losses) {
  if (class_losses.numel() == 0) throw std::invalid_argument("total_loss: no proposals");
  return add(reg_loss, mean(class_losses));
}

inline double total_loss(double reg_loss, std::span<const double> class_losses) {
  if (class_losses.empty()) throw std::invalid_argument("total_loss: no proposals");
  double acc = 0.0;
  for (double c : class_losses) acc += c;
  return reg_loss + acc / static_cast<double>(class_losses.size());
}

/// Proposals from the prior's most likely symbol, labeled against the
/// ground truth and scored. Samples are constants; only classifier
/// parameters receive gradients through the returned losses.
struct ClassificationTerms {
  Value losses;  // per proposal
  std::vector<TrajectoryProposal> proposals;
};

inline ClassificationTerms classification_terms(const Model& m, const PredictionInstance& inst,
                                                const InstanceForward& f, std::size_t n, double gamma,
                                                std::uint64_t seed, std::uint64_t stream_base) {
  ClassificationTerms out;
  const CategoricalLatent prior = CategoricalLatent::from_logits(f.prior_logits.data());
  out.proposals = sample_proposals(prior, f.rollout, inst.last_observed(), n, SamplingMode::latent_mode, seed, stream_base);
  label_proposals(out.proposals, inst.future, gamma);
  std::vector<double> labels;
  for (const auto& p : out.proposals) labels.push_back(*p.label ? 1.0 : 0.0);
  const Value scores = score_values(out.proposals, inst.last_observed(), detach(f.history.v_i), m.classifier);
  for (std::size_t i = 0; i < out.proposals.size(); ++i) out.proposals[i].score = scores[i];
  out.losses = classification_losses(scores, labels, m.classifier.log_w);
  return out;
}

struct StepRecord {
  std::size_t step = 0;
  double beta = 0.0;
  double reconstruction = 0.0;  // -E_q[log p_psi], batch mean
  double kl = 0.0;
  double mutual_info = 0.0;
  double regression = 0.0;
  double classification = 0.0;  // mean over proposals
  double total = 0.0;
  double grad_norm = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double mutual_info = 0.0;
  double regression = 0.0;
  double classification = 0.0;
  double total = 0.0;
  double val_ade = std::numeric_limits<double>::quiet_NaN();
  double val_fde = std::numeric_limits<double>::quiet_NaN();
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
  std::optional<std::size_t> best_epoch;
  bool diverged = false;
  std::string divergence_message;
};

/// Optimizer state plus one-step update, usable on its own for custom loops.
class Trainer {
 public:
  Trainer(Model& model, const TrainConfig& config) : model_(model), config_(config) {
    params_ = config.train_classifier ? model.parameters() : model.regression_parameters();
    adam_.learning_rate = config.learning_rate;
  }

  std::size_t step_count() const { return step_; }
  const ParamSet& parameters() const { return params_; }

  /// Forward, backward, clip and Adam update on one batch. Throws
  /// std::runtime_error (leaving parameters untouched) on a non-finite loss.
  StepRecord step(std::span<const PredictionInstance> batch) {
    StepRecord rec;
    rec.step = step_;
    rec.beta = beta_value(step_, config_.beta);
    std::vector<InstanceForward> fw;
    fw.reserve(batch.size());
    for (const auto& inst : batch) fw.push_back(forward_instance(model_, inst));
    const RegressionTerms reg = regression_loss(fw, rec.beta, config_.alpha);
    Value total = reg.loss;
    if (config_.train_classifier) {
      std::vector<Value> losses;
      for (std::size_t b = 0; b < batch.size(); ++b)
        losses.push_back(classification_terms(model_, batch[b], fw[b], config_.n_proposals, config_.gamma,
                                              config_.seed, (static_cast<std::uint64_t>(step_) << 20) + (b << 10))
                             .losses);
      const Value class_losses = concat(losses);
      rec.classification = mean(class_losses).item();
      total = total_loss(reg.loss, class_losses);
    }
    rec.reconstruction = -reg.expected_ll;
    rec.kl = reg.kl;
    rec.mutual_info = reg.mutual_info;
    rec.regression = reg.loss.item();
    rec.total = total.item();
    if (!std::isfinite(rec.total)) {
      std::ostringstream os;
      os << "non-finite loss at step " << step_ << " (reconstruction " << rec.reconstruction << ", kl " << rec.kl
         << ", I_q " << rec.mutual_info << ", classification " << rec.classification << ")";
      throw std::runtime_error(os.str());
    }
    params_.zero_grad();
    backward(total);
    rec.grad_norm = clip_grad_norm(params_, config_.grad_clip);
    adam_step(params_, adam_);
    ++step_;
    return rec;
  }

 private:
  Model& model_;
  TrainConfig config_;
  ParamSet params_;
  AdamState adam_;
  std::size_t step_ = 0;
};

struct DisplacementSummary {
  double ade = 0.0;
  double fde = 0.0;
};

/// Mean ADE/FDE of the most-likely trajectory.
inline DisplacementSummary evaluate_most_likely(const Model& m, std::span<const PredictionInstance> instances) {
  DisplacementSummary s;
  if (instances.empty()) return s;
  for (const auto& inst : instances) {
    const auto pred = predict_most_likely(m, inst);
    s.ade += ade(pred, inst.future);
    s.fde += fde(pred, inst.future);
  }
  s.ade /= static_cast<double>(instances.size());
  s.fde /= static_cast<double>(instances.size());
  return s;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Shuffled mini-batch training. Parameters end at the epoch with the best
/// validation FDE (or the last epoch without validation data). A non-finite
/// loss stops training and restores the last good epoch.
inline TrainReport fit(Model& model, std::span<const PredictionInstance> train,
                       std::span<const PredictionInstance> validation, const TrainConfig& config,
                       const EpochCallback& on_epoch = {}) {
  TrainReport report;
  if (config.epochs == 0) return report;
  if (train.empty()) throw std::invalid_argument("fit: empty training split");
  if (config.batch_size == 0) throw std::invalid_argument("fit: batch_size must be positive");
  Trainer trainer(model, config);
  ParamSet all = model.parameters();
  auto last_good = snapshot(all);
  std::optional<std::vector<std::vector<double>>> best;
  double best_fde = std::numeric_limits<double>::infinity();
  Rng order_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  bool stop = false;
  for (std::size_t epoch = 0; epoch < config.epochs && !stop; ++epoch) {
    order_rng.shuffle(order);
    EpochRecord er;
    er.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      if (config.max_steps && trainer.step_count() >= config.max_steps) {
        stop = true;
        break;
      }
      std::vector<PredictionInstance> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i)
        batch.push_back(train[order[i]]);
      StepRecord rec;
      try {
        rec = trainer.step(batch);
      } catch (const std::runtime_error& e) {
        report.diverged = true;
        report.divergence_message = e.what();
        restore(all, last_good);
        stop = true;
        break;
      }
      report.steps.push_back(rec);
      ++er.steps;
      er.reconstruction += rec.reconstruction;
      er.kl += rec.kl;
      er.mutual_info += rec.mutual_info;
      er.regression += rec.regression;
      er.classification += rec.classification;
      er.total += rec.total;
    }
    if (er.steps == 0) break;
    const double n = static_cast<double>(er.steps);
    er.reconstruction /= n;
    er.kl /= n;
    er.mutual_info /= n;
    er.regression /= n;
    er.classification /= n;
    er.total /= n;
    if (!validation.empty()) {
      const auto v = evaluate_most_likely(model, validation);
      er.val_ade = v.ade;
      er.val_fde = v.fde;
      if (v.fde < best_fde) {
        best_fde = v.fde;
        best = snapshot(all);
        report.best_epoch = epoch;
      }
    }
    if (!report.diverged) last_good = snapshot(all);
    report.epochs.push_back(er);
    if (on_epoch) on_epoch(er);
  }
  if (best && !report.diverged) restore(all, *best);
  return report;
}

}  // namespace ltn
