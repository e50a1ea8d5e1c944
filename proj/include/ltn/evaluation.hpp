// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltn/config.hpp"
#include "ltn/data.hpp"
#include "ltn/metrics.hpp"
#include "ltn/model.hpp"
#include "ltn/training.hpp"

namespace ltn {

/// Builds instances from every scene; a zero distance picks 10 m or 30 m
/// per scene.
inline std::vector<PredictionInstance> scene_instances(std::span<const Scene> scenes, const RunConfig& c,
                                                       bool include_future = true) {
  std::vector<PredictionInstance> out;
  const Horizon h{c.data.obs_frames, c.model.pred_frames};
  for (const auto& s : scenes) {
    const double d = c.data.perception_distance > 0 ? c.data.perception_distance : default_perception_distance(s);
    auto b = build_prediction_instances(s, d, h, c.model.map_cells, include_future);
    out.insert(out.end(), std::make_move_iterator(b.instances.begin()), std::make_move_iterator(b.instances.end()));
  }
  return out;
}

struct SceneSplit {
  std::vector<Scene> train;
  std::vector<Scene> validation;
};

/// The last ceil(fraction * n) scenes (at least one when n > 1 and
/// fraction > 0) are held out.
inline SceneSplit split_scenes(std::vector<Scene> scenes, double fraction) {
  SceneSplit s;
  std::size_t hold = 0;
  if (fraction > 0 && scenes.size() > 1)
    hold = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(scenes.size()))), 1,
                                   scenes.size() - 1);
  const std::size_t cut = scenes.size() - hold;
  s.train.assign(std::make_move_iterator(scenes.begin()), std::make_move_iterator(scenes.begin() + static_cast<long>(cut)));
  s.validation.assign(std::make_move_iterator(scenes.begin() + static_cast<long>(cut)), std::make_move_iterator(scenes.end()));
  return s;
}

inline std::vector<std::vector<Vec2>> proposal_positions(std::span<const TrajectoryProposal> proposals, std::size_t k) {
  std::vector<std::vector<Vec2>> out;
  for (std::size_t i = 0; i < std::min(k, proposals.size()); ++i) out.push_back(proposals[i].positions);
  return out;
}

struct EvaluationSummary {
  MetricsReport selected;     // classifier top-1; min-of-k over the first k raw samples
  MetricsReport most_likely;  // mean of the argmax-z component
  std::vector<double> min_ade_topk;  // per instance, over the k best-scored proposals
  std::vector<double> min_fde_topk;
  double mean_min_ade_topk = 0.0;
  double mean_min_fde_topk = 0.0;
  MetricsReport constant_velocity;
  MetricsReport constant_position;
};

/// `predictions` are matched to `instances` by id; instances without a
/// prediction are an error.
inline EvaluationSummary evaluate_predictions(std::span<const Prediction> predictions,
                                              std::span<const PredictionInstance> instances, std::size_t k,
                                              const std::string& units = "m") {
  if (k == 0) throw std::invalid_argument("evaluate: k must be positive");
  std::map<std::string, const Prediction*> by_id;
  for (const auto& p : predictions) by_id[p.instance_id] = &p;
  std::vector<InstanceMetrics> sel, ml, cv, cp;
  EvaluationSummary s;
  for (const auto& inst : instances) {
    auto it = by_id.find(inst.id);
    if (it == by_id.end()) throw std::invalid_argument("evaluate: no prediction for instance '" + inst.id + "'");
    const Prediction& p = *it->second;
    if (p.proposals.empty()) throw std::invalid_argument("evaluate: prediction '" + inst.id + "' has no proposals");
    const auto samples = proposal_positions(p.proposals, k);
    sel.push_back(compute_instance_metrics(inst.id, p.selected_proposal().positions, samples, inst.future, inst.dt));
    const auto& ml_path = p.most_likely.empty() ? p.selected_proposal().positions : p.most_likely;
    ml.push_back(compute_instance_metrics(inst.id, ml_path, samples, inst.future, inst.dt));
    double ba = std::numeric_limits<double>::infinity(), bf = ba;
    const bool scored = std::all_of(p.proposals.begin(), p.proposals.end(), [](const auto& q) { return q.score.has_value(); });
    const auto top = scored ? select_final_trajectory(p.proposals, std::min(k, p.proposals.size())) : p.proposals;
    for (std::size_t i = 0; i < std::min(k, top.size()); ++i) {
      ba = std::min(ba, ade(top[i].positions, inst.future));
      bf = std::min(bf, fde(top[i].positions, inst.future));
    }
    s.min_ade_topk.push_back(ba);
    s.min_fde_topk.push_back(bf);
    const auto cvp = constant_velocity_prediction(inst.history, inst.future.size());
    cv.push_back(compute_instance_metrics(inst.id, cvp, {cvp}, inst.future, inst.dt));
    const auto cpp = constant_position_prediction(inst.history, inst.future.size());
    cp.push_back(compute_instance_metrics(inst.id, cpp, {cpp}, inst.future, inst.dt));
  }
  for (std::size_t i = 0; i < s.min_ade_topk.size(); ++i) {
    s.mean_min_ade_topk += s.min_ade_topk[i] / static_cast<double>(s.min_ade_topk.size());
    s.mean_min_fde_topk += s.min_fde_topk[i] / static_cast<double>(s.min_fde_topk.size());
  }
  s.selected = aggregate_metrics(std::move(sel), units);
  s.most_likely = aggregate_metrics(std::move(ml), units);
  s.constant_velocity = aggregate_metrics(std::move(cv), units);
  s.constant_position = aggregate_metrics(std::move(cp), units);
  return s;
}

inline std::vector<Prediction> predict_all(const Model& m, std::span<const PredictionInstance> instances,
                                           std::size_t n_proposals, std::uint64_t seed,
                                           SamplingMode mode = SamplingMode::latent_mode) {
  std::vector<Prediction> out;
  out.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) out.push_back(predict(m, instances[i], n_proposals, seed + i, mode));
  return out;
}

// ---------------------------------------------------------------------------
// Decoder cell ablation: the same data and seeds with the configured
// Mogrifier rounds and with a plain GRU decoder.

struct AblationRun {
  std::uint64_t seed = 0;
  std::size_t decoder_rounds = 0;
  TrainReport train;
  EvaluationSummary test;
  Model model;
};

struct AblationResult {
  std::vector<AblationRun> mogrifier;
  std::vector<AblationRun> vanilla;

  static double mean_of(const std::vector<AblationRun>& runs, double (*f)(const AblationRun&)) {
    double acc = 0.0;
    for (const auto& r : runs) acc += f(r);
    return runs.empty() ? 0.0 : acc / static_cast<double>(runs.size());
  }
};

inline AblationRun train_and_test(RunConfig c, std::uint64_t seed, std::span<const PredictionInstance> train,
                                  std::span<const PredictionInstance> validation,
                                  std::span<const PredictionInstance> test) {
  AblationRun run;
  run.seed = seed;
  run.decoder_rounds = c.model.decoder_rounds;
  c.train.seed = seed;
  Model m = Model::init(c.model, seed);
  run.train = fit(m, train, validation, c.train);
  run.model = m;
  const auto preds = predict_all(m, test, std::max(c.train.n_proposals, c.data.eval_samples), seed ^ 0x5bd1e995ULL);
  run.test = evaluate_predictions(preds, test, c.data.eval_samples, c.data.units);
  return run;
}

inline AblationResult run_cell_ablation(const RunConfig& base, std::span<const Scene> train_scenes,
                                        std::span<const Scene> test_scenes, std::span<const std::uint64_t> seeds) {
  if (base.model.decoder_rounds == 0) throw std::invalid_argument("ablate-cell: decoder_rounds must be positive");
  const SceneSplit split = split_scenes(std::vector<Scene>(train_scenes.begin(), train_scenes.end()), base.data.val_fraction);
  const auto train = scene_instances(split.train, base);
  const auto val = scene_instances(split.validation, base);
  const auto test = scene_instances(test_scenes, base);
  if (train.empty() || test.empty()) throw std::invalid_argument("ablate-cell: no training or test instances");
  AblationResult r;
  for (const auto seed : seeds) {
    r.mogrifier.push_back(train_and_test(base, seed, train, val, test));
    RunConfig plain = base;
    plain.model.decoder_rounds = 0;
    r.vanilla.push_back(train_and_test(plain, seed, train, val, test));
  }
  return r;
}

/// Alternating turning and social_repulsion scenes, turning first.
inline std::vector<Scene> mixed_synthetic_scenes(std::uint64_t seed, std::size_t n, std::size_t agents,
                                                 const SyntheticOptions& opts = {}) {
  const auto turning = generate_synthetic_scenes(seed, n - n / 2, agents, Dynamics::turning, opts);
  std::vector<Scene> social;
  if (n / 2 > 0) social = generate_synthetic_scenes(seed + 0x51ed27ULL, n / 2, agents, Dynamics::social_repulsion, opts);
  std::vector<Scene> out;
  for (std::size_t i = 0; i < turning.size(); ++i) {
    out.push_back(turning[i]);
    if (i < social.size()) out.push_back(social[i]);
  }
  return out;
}

}  // namespace ltn
