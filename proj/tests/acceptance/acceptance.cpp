// SPDX-License-Identifier: Apache-2.0
//
// Prints one PASS/FAIL line per acceptance criterion. Exit status is 0 once
// every check has run; FAIL lines are reported, not hidden.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ltn/ltn.hpp"
#include "oracles.hpp"

using namespace ltn;

namespace {

// Pinned tolerances and budgets.
constexpr std::size_t kGradSeeds = 10;
constexpr double kGradStep = 1e-5;
constexpr double kGradTol = 1e-4;
constexpr double kGradBudgetSeconds = 120.0;
constexpr double kRecoveryTol = 1e-12;
constexpr std::size_t kRecoveryPairs = 100;
constexpr double kProbSumTol = 1e-9;
constexpr double kKlFloor = -1e-9;
constexpr std::size_t kKlPairs = 1000;
constexpr double kConstantMiTol = 1e-12;
constexpr double kLossOracleTol = 1e-12;
constexpr double kMetricTol = 1e-9;
constexpr std::size_t kAblationTrainScenes = 500;
constexpr std::size_t kAblationTestScenes = 100;
constexpr std::size_t kHeldOutSocialScenes = 100;
constexpr std::size_t kAblationEpochs = 12;
constexpr double kAblationBudgetSeconds = 1800.0;
const std::vector<std::uint64_t> kAblationSeeds{1, 2, 3};
constexpr std::size_t kOverfitSteps = 200;
constexpr std::size_t kOverfitWarmup = 50;
constexpr std::size_t kOverfitWindow = 50;

int failures = 0;

void report(bool pass, const std::string& name, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<Value> leaves_of(const ParamSet& ps, std::vector<Value> extra = {}) {
  std::vector<Value> out(ps.begin(), ps.end());
  out.insert(out.end(), extra.begin(), extra.end());
  return out;
}

RunConfig grad_config() {
  RunConfig c;
  auto& m = c.model;
  m.history_hidden = 4;
  m.neighbor_hidden = 3;
  m.future_hidden = 3;
  m.encoder_layers = 2;
  m.encoder_rounds = 2;
  m.attention_dim = 3;
  m.use_map = true;
  m.map_cells = 4;
  m.map_channels = 2;
  m.map_hidden = 3;
  m.latent_dim = 4;
  m.latent_hidden = 4;
  m.decoder_hidden = 4;
  m.decoder_rounds = 2;
  m.classifier_hidden = 3;
  m.classifier_head_hidden = 3;
  m.pred_frames = 4;
  return c;
}

// ---------------------------------------------------------------------------

void gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig c = grad_config();
  auto scenes = generate_synthetic_scenes(31, 2, 3, Dynamics::social_repulsion);
  auto insts = scene_instances(scenes, c);
  insts.resize(std::min<std::size_t>(insts.size(), 2));
  double worst = 0.0;
  std::string worst_name = "none";
  bool ok = insts.size() == 2;
  std::size_t checks = 0;

  for (std::size_t seed = 0; seed < kGradSeeds && ok; ++seed) {
    std::mt19937_64 g(100 + seed);
    GradCheckOptions opt;
    opt.step = kGradStep;
    opt.tol = kGradTol;
    opt.max_entries_per_leaf = 3;
    opt.seed = seed;
    auto record = [&](const std::string& name, const GradCheckReport& r) {
      ++checks;
      if (r.max_rel_error() > worst || !r.passed) {
        worst = std::max(worst, r.max_rel_error());
        worst_name = name;
      }
      ok = ok && r.passed;
    };
    for (auto& inst : insts) {
      inst.map_patch.cells = c.model.map_cells;
      inst.map_patch.values = oracle::random_vec(g, c.model.map_cells * c.model.map_cells, 0, 1);
      inst.map_patch.available = true;
    }

    Rng rng(seed);
    const auto gp = GruParams::init(rng, 3, 4, "gru");
    const auto mp = MogrifierParams::init(rng, 3, 4, 3, "mog");
    const auto lp = LstmParams::init(rng, 3, 4, 3, "lstm");
    Value x = Value::parameter(Shape{3}, oracle::random_vec(g, 3), "x");
    Value h = Value::parameter(Shape{4}, oracle::random_vec(g, 4), "h");
    Value cs = Value::parameter(Shape{4}, oracle::random_vec(g, 4), "c");
    const Value proj = Value::vector(oracle::random_vec(g, 4));
    ParamSet ps;
    gp.collect(ps);
    record("gru", grad_check([&] { return sum(mul(gru_step(x, h, gp), proj)); }, leaves_of(ps, {x, h}), opt));
    mp.collect(ps);
    record("mogrifier_gru", grad_check([&] { return sum(mul(mogrifier_gru_step(x, h, gp, mp), proj)); },
                                       leaves_of(ps, {x, h}), opt));
    ParamSet lps;
    lp.collect(lps);
    record("mogrifier_lstm",
           grad_check([&] {
             const auto s = lstm_step(x, LstmState{h, cs}, lp);
             return add(sum(mul(s.h, proj)), sum(mul(s.c, proj)));
           },
                      leaves_of(lps, {x, h, cs}), opt));

    const Model m = Model::init(c.model, 200 + seed);
    oracle::randomize(m.parameters(), g, 0.4);
    const auto& inst = insts[seed % 2];
    ParamSet enc;
    m.encoder.collect(enc);
    const Value p_hist = Value::vector(oracle::random_vec(g, c.model.history_dim()));
    const Value p_fut = Value::vector(oracle::random_vec(g, c.model.future_dim()));
    record("encoders", grad_check([&] {
             return add(sum(mul(encode_history(inst, m.encoder).v_i, p_hist)),
                        sum(mul(encode_future(inst, m.encoder).v_f, p_fut)));
           },
                                  leaves_of(enc), opt));

    Value v_i = Value::parameter(Shape{c.model.history_dim()}, oracle::random_vec(g, c.model.history_dim()), "v_i");
    Value v_f = Value::parameter(Shape{c.model.future_dim()}, oracle::random_vec(g, c.model.future_dim()), "v_f");
    ParamSet heads;
    m.prior.collect(heads);
    m.posterior.collect(heads);
    record("latent_heads", grad_check([&] {
             return kl_divergence(posterior_logits(v_i, v_f, m.posterior), prior_logits(v_i, m.prior));
           },
                                      leaves_of(heads, {v_i, v_f}), opt));

    ParamSet dec;
    m.decoder.collect(dec);
    std::vector<std::size_t> all(c.model.latent_dim);
    for (std::size_t z = 0; z < all.size(); ++z) all[z] = z;
    record("decoder", grad_check([&] {
             const auto r = decode_rollout(v_i, all, m.decoder, c.model.latent_dim, c.model.pred_frames);
             return sum(rollout_log_likelihood(r, inst.last_observed(), inst.future));
           },
                                 leaves_of(dec, {v_i}), opt));

    std::vector<TrajectoryProposal> props;
    for (std::size_t n = 0; n < 4; ++n) {
      TrajectoryProposal q;
      q.index = n;
      for (const auto& p : inst.future) {
        const auto d = oracle::random_vec(g, 2, -1, 1);
        q.positions.push_back(p + Vec2{d[0], d[1]});
      }
      props.push_back(q);
    }
    const std::vector<double> labels{1, 0, 1, 0};
    ParamSet cls;
    m.classifier.collect(cls);
    record("classifier", grad_check([&] {
             return classification_loss(score_values(props, inst.last_observed(), v_i, m.classifier), labels,
                                        m.classifier.log_w);
           },
                                    leaves_of(cls, {v_i}), opt));

    record("regression_loss", grad_check([&] { return regression_loss(insts, m, 0.7, 0.5).loss; },
                                         leaves_of(m.regression_parameters()), opt));

    std::vector<InstanceForward> fw;
    {
      NoGradGuard ng;
      for (const auto& i : insts) fw.push_back(forward_instance(m, i));
    }
    record("total_loss", grad_check([&] {
             std::vector<Value> losses;
             for (std::size_t b = 0; b < fw.size(); ++b)
               losses.push_back(classification_terms(m, insts[b], fw[b], 5, 3.0, seed, b << 10).losses);
             return total_loss(regression_loss(fw, 0.7, 0.5).loss, concat(losses));
           },
                                    leaves_of(m.classifier_parameters()), opt));
  }
  const double t = seconds_since(t0);
  report(ok && t < kGradBudgetSeconds, "gradient_suite",
         std::to_string(checks) + " checks over " + std::to_string(kGradSeeds) + " seeds, max rel error " + num(worst) +
             " (" + worst_name + ") tol " + num(kGradTol) + ", " + num(t) + " s (budget " + num(kGradBudgetSeconds) + " s)");
}

void mogrifier_recovery() {
  std::mt19937_64 g(7);
  double worst = 0.0;
  for (std::size_t k = 0; k < kRecoveryPairs; ++k) {
    Rng rng(k);
    const std::size_t in = 1 + k % 5, hidden = 1 + (k * 7) % 9;
    const auto gp = GruParams::init(rng, in, hidden, "gru");
    const auto mp = MogrifierParams::init(rng, in, hidden, 0, "mog");
    ParamSet ps;
    gp.collect(ps);
    oracle::randomize(ps, g, 1.0);
    const Value x = Value::vector(oracle::random_vec(g, in, -2, 2));
    const Value h = Value::vector(oracle::random_vec(g, hidden, -1, 1));
    const Value a = mogrifier_gru_step(x, h, gp, mp), b = gru_step(x, h, gp);
    for (std::size_t i = 0; i < hidden; ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  report(worst <= kRecoveryTol, "mogrifier_recovery",
         std::to_string(kRecoveryPairs) + " (x, h) pairs, max |diff| " + num(worst) + " tol " + num(kRecoveryTol));
}

void distribution_sanity() {
  RunConfig c;
  c.model.latent_dim = 25;
  const Model m = Model::init(c.model, 5);
  std::mt19937_64 g(5);
  oracle::randomize(m.parameters(), g, 0.5);
  const auto insts = scene_instances(generate_synthetic_scenes(5, 20, 4, Dynamics::social_repulsion), c);
  double worst_sum = 0.0;
  for (const auto& inst : insts) {
    NoGradGuard ng;
    const auto h = encode_history(inst, m.encoder);
    const auto f = encode_future(inst, m.encoder);
    for (const auto& d : {prior_distribution(h.v_i, m.prior), posterior_distribution(h.v_i, f.v_f, m.posterior)}) {
      double s = 0.0;
      for (double p : d.probs) s += p;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
  }
  double min_kl = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < kKlPairs; ++k) {
    const double scale = 0.1 + 0.01 * static_cast<double>(k);
    const auto q = CategoricalLatent::from_logits(oracle::random_vec(g, 25, -scale, scale));
    const auto p = CategoricalLatent::from_logits(oracle::random_vec(g, 25, -scale, scale));
    min_kl = std::min(min_kl, kl_divergence(q, p));
  }
  double worst_mi = 0.0;
  for (int k = 0; k < 50; ++k) {
    const auto logits = oracle::random_vec(g, 25, -4, 4);
    const std::vector<CategoricalLatent> batch(8, CategoricalLatent::from_logits(logits));
    const std::vector<Value> graph(8, Value::vector(logits));
    worst_mi = std::max({worst_mi, std::abs(mutual_information(batch)), std::abs(mutual_information(graph).item())});
  }
  const bool ok = !insts.empty() && worst_sum <= kProbSumTol && min_kl >= kKlFloor && worst_mi <= kConstantMiTol;
  report(ok, "distribution_sanity",
         std::to_string(insts.size()) + " instances, max |sum p - 1| " + num(worst_sum) + "; min KL over " +
             std::to_string(kKlPairs) + " pairs " + num(min_kl) + "; max |I_q| constant batch " + num(worst_mi));
}

void loss_oracles() {
  std::mt19937_64 g(9);
  double worst = 0.0;
  bool labels_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 20), T = 12;
    std::vector<Vec2> truth;
    for (std::size_t t = 0; t < T; ++t) {
      const auto v = oracle::random_vec(g, 2, -5, 5);
      truth.push_back({v[0], v[1]});
    }
    std::vector<TrajectoryProposal> props(n);
    for (std::size_t i = 0; i < n; ++i) {
      props[i].index = i;
      for (const auto& p : truth) {
        const auto d = oracle::random_vec(g, 2, -6, 6);
        props[i].positions.push_back(p + Vec2{d[0], d[1]});
      }
    }
    const double gamma = oracle::random_vec(g, 1, 0.5, 5)[0];
    label_proposals(props, truth, gamma);
    std::vector<double> x, y;
    for (const auto& p : props) {
      const double D = oracle::avg_distance(p.positions, truth);
      worst = std::max(worst, std::abs(*p.avg_distance - D));
      labels_ok = labels_ok && (*p.label == (D <= gamma));
      x.push_back(oracle::random_vec(g, 1, 0, 1)[0]);
      y.push_back(*p.label ? 1.0 : 0.0);
    }
    const double w = oracle::random_vec(g, 1, 0.2, 3)[0];
    double bce = 0.0;
    for (std::size_t i = 0; i < n; ++i) bce += oracle::bce(x[i], y[i], w) / static_cast<double>(n);
    worst = std::max(worst, std::abs(classification_loss(x, y, w) - bce));
    worst = std::max(worst, std::abs(classification_loss(Value::vector(x), y, Value::vector({std::log(w)})).item() - bce));
    const double reg = oracle::random_vec(g, 1, -10, 10)[0];
    std::vector<double> per(n);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += (per[i] = oracle::bce(x[i], y[i], w)) / static_cast<double>(n);
    worst = std::max(worst, std::abs(total_loss(reg, per) - (reg + mean)));
    worst = std::max(worst, std::abs(total_loss(Value::scalar(reg), Value::vector(per)).item() - (reg + mean)));
  }
  std::vector<Vec2> truth;
  for (int t = 1; t <= 12; ++t) truth.push_back({0.4 * t, 0.0});
  TrajectoryProposal off;
  for (const auto& p : truth) off.positions.push_back(p + Vec2{3, 4});
  std::vector<TrajectoryProposal> one{off};
  label_proposals(one, truth, 3.0);
  const bool offset_ok = std::abs(*one[0].avg_distance - 5.0) <= kLossOracleTol && !*one[0].label;
  report(labels_ok && offset_ok && worst <= kLossOracleTol, "loss_oracles",
         "200 random batches, max |diff| " + num(worst) + " tol " + num(kLossOracleTol) + "; labels " +
             (labels_ok ? "agree" : "disagree") + "; (3,4) offset D=" + num(*one[0].avg_distance) + " label " +
             (*one[0].label ? "positive" : "negative"));
}

void metric_oracles() {
  std::mt19937_64 g(11);
  double worst = 0.0;
  bool bound_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    auto path = [&] {
      std::vector<Vec2> p;
      for (int t = 0; t < 12; ++t) {
        const auto v = oracle::random_vec(g, 2, -8, 8);
        p.push_back({v[0], v[1]});
      }
      return p;
    };
    const auto truth = path();
    std::vector<std::vector<Vec2>> samples;
    for (int k = 0; k < 20; ++k) samples.push_back(path());
    const auto m = compute_instance_metrics("t", samples[0], samples, truth, 0.4);
    double ba = 1e300, bf = 1e300;
    for (const auto& s : samples) {
      ba = std::min(ba, oracle::avg_distance(s, truth));
      bf = std::min(bf, oracle::final_distance(s, truth));
      bound_ok = bound_ok && m.min_ade_k <= ade(s, truth);
    }
    worst = std::max({worst, std::abs(m.ade - oracle::avg_distance(samples[0], truth)),
                      std::abs(m.fde - oracle::final_distance(samples[0], truth)), std::abs(m.min_ade_k - ba),
                      std::abs(m.min_fde_k - bf)});
  }
  report(worst <= kMetricTol && bound_ok, "metric_oracles",
         "200 instances x 20 samples, max |diff| " + num(worst) + " tol " + num(kMetricTol) + "; minADE_20 <= every ADE: " +
             (bound_ok ? "yes" : "no"));
}

// ---------------------------------------------------------------------------

RunConfig benchmark_config() {
  RunConfig c;
  auto& m = c.model;
  m.history_hidden = 16;
  m.future_hidden = 16;
  m.decoder_hidden = 16;
  m.latent_hidden = 16;
  m.encoder_layers = 1;
  m.encoder_rounds = 0;
  m.decoder_rounds = 6;
  c.train.batch_size = 16;
  c.train.epochs = kAblationEpochs;
  c.train.beta.midpoint_step = 100;
  c.train.beta.rate = 0.05;
  c.data.val_fraction = 0.1;
  return c;
}

struct Benchmark {
  AblationResult ablation;
  double seconds = 0.0;
  double cv_fde = 0.0;
};

double mean_over(const std::vector<AblationRun>& runs, const std::function<double(const AblationRun&)>& f) {
  double acc = 0.0;
  for (const auto& r : runs) acc += f(r);
  return acc / static_cast<double>(runs.size());
}

Benchmark run_benchmark() {
  const auto t0 = std::chrono::steady_clock::now();
  Benchmark b;
  const RunConfig c = benchmark_config();
  const auto train = mixed_synthetic_scenes(1, kAblationTrainScenes, 3);
  const auto test = mixed_synthetic_scenes(7920, kAblationTestScenes, 3);
  b.ablation = run_cell_ablation(c, train, test, kAblationSeeds);
  b.seconds = seconds_since(t0);
  b.cv_fde = b.ablation.mogrifier.front().test.constant_velocity.fde;
  return b;
}

void decoder_cell_ablation(const Benchmark& b) {
  const auto fde = [](const AblationRun& r) { return r.test.most_likely.fde; };
  const double mog = mean_over(b.ablation.mogrifier, fde), van = mean_over(b.ablation.vanilla, fde);
  std::string per;
  for (std::size_t i = 0; i < b.ablation.mogrifier.size(); ++i)
    per += (i ? ", " : "") + num(fde(b.ablation.mogrifier[i])) + "/" + num(fde(b.ablation.vanilla[i]));
  report(mog <= van && b.seconds < kAblationBudgetSeconds, "decoder_cell_ablation",
         "mean final FDE mogrifier_gru " + num(mog) + " m vs gru " + num(van) + " m over " +
             std::to_string(kAblationSeeds.size()) + " seeds (per seed " + per + "), " + num(b.seconds) + " s (budget " +
             num(kAblationBudgetSeconds) + " s)");
}

void two_stage_benefit(const Benchmark& b) {
  const double top1 = mean_over(b.ablation.mogrifier, [](const AblationRun& r) { return r.test.selected.fde; });
  const double ml = mean_over(b.ablation.mogrifier, [](const AblationRun& r) { return r.test.most_likely.fde; });
  const double best = mean_over(b.ablation.mogrifier, [](const AblationRun& r) { return r.test.mean_min_fde_topk; });
  report(top1 <= ml, "two_stage_selection",
         "classifier top-1 FDE " + num(top1) + " m vs argmax-z mean FDE " + num(ml) + " m (min FDE over top-20 by score " +
             num(best) + " m)");
}

void learning_signal(const Benchmark& b) {
  auto scenes = generate_synthetic_scenes(3, 1, 3, Dynamics::social_repulsion);
  const auto inst = build_prediction_instances(scenes[0], 10.0, Horizon{}).instances.at(0);
  const std::vector<PredictionInstance> one{inst};
  Model m = Model::init(ModelConfig{}, 1);
  TrainConfig tc;
  tc.batch_size = 1;
  tc.beta.kind = BetaSchedule::Kind::constant;
  Trainer trainer(m, tc);
  std::vector<double> rec, ade_trace;
  for (std::size_t s = 0; s < kOverfitSteps; ++s) {
    ade_trace.push_back(ade(predict_most_likely(m, inst), inst.future));
    rec.push_back(trainer.step(one).reconstruction);
  }
  auto windows = [&](const std::vector<double>& v) {
    std::vector<double> w;
    for (std::size_t s = kOverfitWarmup; s + kOverfitWindow <= v.size(); s += kOverfitWindow) {
      double acc = 0.0;
      for (std::size_t i = s; i < s + kOverfitWindow; ++i) acc += v[i] / static_cast<double>(kOverfitWindow);
      w.push_back(acc);
    }
    return w;
  };
  const auto wr = windows(rec), wa = windows(ade_trace);
  auto decreasing = [](const std::vector<double>& w) {
    for (std::size_t i = 1; i < w.size(); ++i)
      if (!(w[i] < w[i - 1])) return false;
    return true;
  };
  auto fmt = [](const std::vector<double>& w) {
    std::string s;
    for (std::size_t i = 0; i < w.size(); ++i) s += (i ? " > " : "") + num(w[i]);
    return s;
  };

  RunConfig c = benchmark_config();
  const auto social = scene_instances(generate_synthetic_scenes(4242, kHeldOutSocialScenes, 3, Dynamics::social_repulsion), c);
  double cv = 0.0;
  for (const auto& i : social) cv += fde(constant_velocity_prediction(i.history, i.future.size()), i.future);
  cv /= static_cast<double>(social.size());
  double model = 0.0;
  for (const auto& run : b.ablation.mogrifier) model += evaluate_most_likely(run.model, social).fde;
  model /= static_cast<double>(b.ablation.mogrifier.size());

  report(decreasing(wr) && decreasing(wa) && model < cv, "end_to_end_learning",
         "overfit window means reconstruction " + fmt(wr) + ", ADE " + fmt(wa) + "; held-out social FDE " + num(model) +
             " m vs constant velocity " + num(cv) + " m (" + std::to_string(social.size()) + " instances)");
}

void determinism() {
  RunConfig c;
  auto& mc = c.model;
  mc.history_hidden = 8;
  mc.future_hidden = 8;
  mc.decoder_hidden = 8;
  mc.latent_hidden = 8;
  mc.encoder_layers = 1;
  mc.encoder_rounds = 2;
  mc.decoder_rounds = 2;
  c.train.epochs = 2;
  const auto data = scene_instances(generate_synthetic_scenes(17, 6, 3, Dynamics::turning), c);
  const std::vector<PredictionInstance> val(data.begin(), data.begin() + 3);
  auto train_once = [&] {
    Model m = Model::init(c.model, 23);
    auto r = fit(m, data, val, c.train);
    return std::pair{std::move(m), std::move(r)};
  };
  const auto [ma, ra] = train_once();
  const auto [mb, rb] = train_once();
  bool same = ra.steps.size() == rb.steps.size() && ra.epochs.size() == rb.epochs.size() && ra.best_epoch == rb.best_epoch;
  for (std::size_t i = 0; same && i < ra.steps.size(); ++i) {
    const auto &x = ra.steps[i], &y = rb.steps[i];
    same = x.reconstruction == y.reconstruction && x.kl == y.kl && x.mutual_info == y.mutual_info &&
           x.classification == y.classification && x.total == y.total && x.grad_norm == y.grad_norm && x.beta == y.beta;
  }
  for (std::size_t i = 0; same && i < ra.epochs.size(); ++i)
    same = ra.epochs[i].total == rb.epochs[i].total && ra.epochs[i].val_fde == rb.epochs[i].val_fde;
  bool proposals_same = true;
  for (const auto& inst : val) {
    const auto pa = predict(ma, inst, 20, 9), pb = predict(mb, inst, 20, 9);
    for (std::size_t k = 0; k < pa.proposals.size(); ++k)
      proposals_same = proposals_same && pa.proposals[k].positions == pb.proposals[k].positions &&
                       pa.proposals[k].score == pb.proposals[k].score;
    proposals_same = proposals_same && pa.selected == pb.selected;
  }
  std::stringstream ss;
  write_checkpoint(ss, ma, c);
  const auto back = read_checkpoint(ss);
  bool exact = true;
  const auto pa = ma.parameters(), pb = back.model.parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) {
    const auto x = pa[k].data(), y = pb[k].data();
    exact = exact && pa[k].name() == pb[k].name() && std::equal(x.begin(), x.end(), y.begin(), y.end());
  }
  report(same && proposals_same && exact, "determinism",
         std::to_string(ra.steps.size()) + " steps bit-identical: " + (same ? "yes" : "no") +
             "; proposal sets identical: " + (proposals_same ? "yes" : "no") + "; checkpoint round-trip exact: " +
             (exact ? "yes" : "no"));
}

}  // namespace

int main() {
  gradient_suite();
  mogrifier_recovery();
  distribution_sanity();
  loss_oracles();
  metric_oracles();
  const Benchmark b = run_benchmark();
  decoder_cell_ablation(b);
  two_stage_benefit(b);
  learning_signal(b);
  determinism();
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return 0;
}
