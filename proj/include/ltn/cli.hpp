// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: synth-gen, train, predict, evaluate, ablate-cell.

#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltn/config.hpp"
#include "ltn/data.hpp"
#include "ltn/evaluation.hpp"
#include "ltn/metrics.hpp"
#include "ltn/model.hpp"
#include "ltn/svg.hpp"
#include "ltn/training.hpp"

namespace ltn {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// JSON encoding

inline json to_json(std::span<const Vec2> pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back({p.x, p.y});
  return a;
}

inline std::vector<Vec2> points_from_json(const json& a) {
  std::vector<Vec2> out;
  for (const auto& p : a) {
    if (!p.is_array() || p.size() != 2) throw std::invalid_argument("expected [x, y] pairs");
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

inline json to_json(const Prediction& p) {
  json props = json::array();
  for (const auto& q : p.proposals) {
    json j{{"index", q.index}, {"latent_index", q.latent_index}, {"positions", to_json(q.positions)}};
    if (q.score) j["score"] = *q.score;
    props.push_back(std::move(j));
  }
  return {{"instance_id", p.instance_id},
          {"latent_mode", p.latent_mode},
          {"selected", p.selected},
          {"most_likely", to_json(p.most_likely)},
          {"proposals", std::move(props)}};
}

inline Prediction prediction_from_json(const json& j) {
  Prediction p;
  p.instance_id = j.at("instance_id").get<std::string>();
  p.latent_mode = j.value("latent_mode", std::size_t{0});
  if (j.contains("most_likely")) p.most_likely = points_from_json(j.at("most_likely"));
  for (const auto& q : j.at("proposals")) {
    TrajectoryProposal t;
    t.index = q.value("index", p.proposals.size());
    t.latent_index = q.value("latent_index", std::size_t{0});
    t.positions = points_from_json(q.at("positions"));
    if (q.contains("score")) t.score = q.at("score").get<double>();
    p.proposals.push_back(std::move(t));
  }
  p.selected = j.value("selected", std::size_t{0});
  if (p.selected >= p.proposals.size() && !p.proposals.empty())
    throw std::invalid_argument("prediction '" + p.instance_id + "': selected index out of range");
  return p;
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const MetricsReport& r) {
  json fde_at = json::object();
  for (std::size_t i = 0; i < kSecondMarks; ++i) fde_at[std::to_string(i + 1) + "s"] = optional_json(r.fde_at[i]);
  return {{"units", r.units}, {"count", r.count},         {"k", r.k},
          {"ade", r.ade},     {"fde", r.fde},             {"min_ade_k", r.min_ade_k},
          {"min_fde_k", r.min_fde_k}, {"fde_at", fde_at}};
}

inline json to_json(const EvaluationSummary& s) {
  return {{"selected", to_json(s.selected)},
          {"most_likely", to_json(s.most_likely)},
          {"min_ade_top_k_by_score", s.mean_min_ade_topk},
          {"min_fde_top_k_by_score", s.mean_min_fde_topk},
          {"constant_velocity", to_json(s.constant_velocity)},
          {"constant_position", to_json(s.constant_position)}};
}

inline json to_json(const TrainReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"steps", e.steps},
                      {"reconstruction", e.reconstruction},
                      {"kl", e.kl},
                      {"mutual_info", e.mutual_info},
                      {"regression", e.regression},
                      {"classification", e.classification},
                      {"total", e.total},
                      {"val_ade", std::isfinite(e.val_ade) ? json(e.val_ade) : json(nullptr)},
                      {"val_fde", std::isfinite(e.val_fde) ? json(e.val_fde) : json(nullptr)}});
  json steps = json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"step", s.step},
                     {"beta", s.beta},
                     {"reconstruction", s.reconstruction},
                     {"kl", s.kl},
                     {"mutual_info", s.mutual_info},
                     {"classification", s.classification},
                     {"total", s.total},
                     {"grad_norm", s.grad_norm}});
  return {{"epochs", epochs},
          {"steps", steps},
          {"best_epoch", r.best_epoch ? json(*r.best_epoch) : json(nullptr)},
          {"diverged", r.diverged},
          {"divergence_message", r.divergence_message}};
}

// ---------------------------------------------------------------------------
// Files

inline std::string format_number(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

/// One row per instance: the classifier's top-1 as the designated
/// prediction, raw-sample minima, then the most-likely and top-k-by-score
/// columns.
inline void write_metrics_csv(std::ostream& out, const EvaluationSummary& s) {
  const std::string k = std::to_string(s.selected.k);
  out << "instance_id,ade,fde,min_ade_" << k << ",min_fde_" << k << ",fde_1s,fde_2s,fde_3s,fde_4s,most_likely_ade,"
      << "most_likely_fde,min_ade_top" << k << "_by_score,min_fde_top" << k << "_by_score\n";
  for (std::size_t i = 0; i < s.selected.per_instance.size(); ++i) {
    const auto& m = s.selected.per_instance[i];
    const auto& ml = s.most_likely.per_instance[i];
    out << m.id << ',' << format_number(m.ade) << ',' << format_number(m.fde) << ',' << format_number(m.min_ade_k) << ','
        << format_number(m.min_fde_k);
    for (const auto& f : m.fde_at) out << ',' << (f ? format_number(*f) : "");
    out << ',' << format_number(ml.ade) << ',' << format_number(ml.fde) << ',' << format_number(s.min_ade_topk[i]) << ','
        << format_number(s.min_fde_topk[i]) << '\n';
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

/// Files are read as given; directories contribute every regular file in
/// name order.
inline std::vector<Scene> load_scene_paths(const std::vector<std::string>& paths, const LoadOptions& opts) {
  std::vector<Scene> out;
  for (const auto& p : paths) {
    std::vector<std::string> files;
    if (std::filesystem::is_directory(p)) {
      for (const auto& e : std::filesystem::directory_iterator(p))
        if (e.is_regular_file()) files.push_back(e.path().string());
      std::sort(files.begin(), files.end());
    } else {
      files.push_back(p);
    }
    for (const auto& f : files) {
      auto scenes = load_trajectory_file(f, opts);
      out.insert(out.end(), scenes.begin(), scenes.end());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Command line

namespace detail {

inline bool is_data_key(const std::string& key) {
  return key == "obs_frames" || key == "dt" || key == "perception_distance" || key == "units" || key == "eval_samples";
}

/// Registers `--key` for every configuration key (or only the data keys).
inline void add_config_flags(CLI::App* app, bool data_only, std::map<std::string, std::string>& values) {
  for (const auto& f : config_fields()) {
    if (data_only && !is_data_key(f.key)) continue;
    app->add_option_function<std::string>("--" + f.key, [&values, key = f.key](const std::string& v) { values[key] = v; },
                                          f.help);
  }
}

inline RunConfig resolve_config(const std::string& config_path, const std::map<std::string, std::string>& flags,
                                RunConfig base = {}) {
  RunConfig c = config_path.empty() ? base : read_config_file(config_path, base);
  if (const char* env = std::getenv("LTN_SEED"); env && *env) set_config_value(c, "seed", env);
  for (const auto& [k, v] : flags) set_config_value(c, k, v);
  return c;
}

inline LoadOptions load_options(const RunConfig& c) {
  LoadOptions o;
  o.dt = c.data.dt;
  return o;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  namespace fs = std::filesystem;
  CLI::App app{"Two-stage long-horizon trajectory forecaster"};
  app.name("ltn");
  app.require_subcommand(1);

  // synth-gen
  auto* synth = app.add_subcommand("synth-gen", "write synthetic scenes as trajectory files");
  std::string synth_out, synth_dynamics = "mixed";
  std::size_t synth_scenes = 100, synth_agents = 4, synth_frames = 20;
  std::uint64_t synth_seed = 1;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--scenes", synth_scenes, "number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--agents", synth_agents, "agents per scene, robot included")->check(CLI::PositiveNumber);
  synth->add_option("--frames", synth_frames, "frames per scene")->check(CLI::PositiveNumber);
  synth->add_option("--dynamics", synth_dynamics, "constant_velocity | turning | social_repulsion | mixed");
  synth->add_option("--seed", synth_seed, "random seed (LTN_SEED overrides the default)");

  // train
  auto* train = app.add_subcommand("train", "fit a model and write a checkpoint plus report");
  std::vector<std::string> train_data;
  std::string train_config, train_out;
  train->add_option("--data", train_data, "trajectory files or directories")->required();
  train->add_option("--config", train_config, "key = value configuration file");
  train->add_option("--out", train_out, "output directory")->required();
  std::map<std::string, std::string> train_flags;
  detail::add_config_flags(train, false, train_flags);

  // predict
  auto* pred = app.add_subcommand("predict", "sample and score proposals for every instance");
  std::string pred_ckpt, pred_out, pred_mode = "latent_mode", pred_svg;
  std::vector<std::string> pred_data;
  std::size_t pred_n = 0, pred_svg_limit = 10;
  std::optional<std::uint64_t> pred_seed;
  pred->add_option("--checkpoint", pred_ckpt, "model checkpoint")->required();
  pred->add_option("--data", pred_data, "trajectory files or directories")->required();
  pred->add_option("--out", pred_out, "predictions JSON path")->required();
  pred->add_option("--proposals", pred_n, "proposals per instance (default: max(n_proposals, eval_samples))");
  pred->add_option("--mode", pred_mode, "latent_mode | full");
  pred->add_option("--seed", pred_seed, "sampling seed (default: the checkpoint seed)");
  pred->add_option("--svg", pred_svg, "directory for per-instance SVG plots");
  pred->add_option("--svg-limit", pred_svg_limit, "maximum number of SVG plots");
  std::map<std::string, std::string> pred_flags;
  detail::add_config_flags(pred, true, pred_flags);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "score predictions against ground truth");
  std::vector<std::string> eval_data;
  std::string eval_preds, eval_ckpt, eval_out;
  std::optional<std::uint64_t> eval_seed;
  eval->add_option("--data", eval_data, "ground-truth trajectory files or directories")->required();
  auto* eval_pred_opt = eval->add_option("--predictions", eval_preds, "predictions JSON from `predict`");
  eval->add_option("--checkpoint", eval_ckpt, "predict with this checkpoint instead")->excludes(eval_pred_opt);
  eval->add_option("--out", eval_out, "output directory")->required();
  eval->add_option("--seed", eval_seed, "sampling seed when predicting from a checkpoint");
  std::map<std::string, std::string> eval_flags;
  detail::add_config_flags(eval, true, eval_flags);

  // ablate-cell
  auto* abl = app.add_subcommand("ablate-cell", "compare the Mogrifier GRU decoder with a plain GRU decoder");
  std::vector<std::string> abl_data, abl_test;
  std::string abl_config, abl_out;
  std::size_t abl_scenes = 500, abl_test_scenes = 100, abl_agents = 3;
  std::vector<std::uint64_t> abl_seeds{1, 2, 3};
  abl->add_option("--data", abl_data, "training scenes (default: synthetic turning + social_repulsion)");
  abl->add_option("--test-data", abl_test, "held-out scenes (default: synthetic)");
  abl->add_option("--scenes", abl_scenes, "synthetic training scenes")->check(CLI::PositiveNumber);
  abl->add_option("--test-scenes", abl_test_scenes, "synthetic test scenes")->check(CLI::PositiveNumber);
  abl->add_option("--agents", abl_agents, "synthetic agents per scene")->check(CLI::PositiveNumber);
  abl->add_option("--seeds", abl_seeds, "training seeds")->delimiter(',');
  abl->add_option("--config", abl_config, "key = value configuration file");
  abl->add_option("--out", abl_out, "output directory")->required();
  std::map<std::string, std::string> abl_flags;
  detail::add_config_flags(abl, false, abl_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (*synth) {
      if (const char* env = std::getenv("LTN_SEED"); env && *env && synth->count("--seed") == 0)
        synth_seed = detail::parse_uint("LTN_SEED", env);
      std::vector<Scene> scenes;
      SyntheticOptions opts;
      opts.frames = synth_frames;
      if (synth_dynamics == "mixed")
        scenes = mixed_synthetic_scenes(synth_seed, synth_scenes, synth_agents, opts);
      else
        scenes = generate_synthetic_scenes(synth_seed, synth_scenes, synth_agents, parse_dynamics(synth_dynamics), opts);
      fs::create_directories(synth_out);
      for (const auto& s : scenes) write_scene_file((fs::path(synth_out) / (s.name + ".txt")).string(), s);
      out << "wrote " << scenes.size() << " scenes to " << synth_out << '\n';
      return 0;
    }

    if (*train) {
      const RunConfig c = detail::resolve_config(train_config, train_flags);
      auto scenes = load_scene_paths(train_data, detail::load_options(c));
      const SceneSplit split = split_scenes(std::move(scenes), c.data.val_fraction);
      const auto tr = scene_instances(split.train, c);
      const auto va = scene_instances(split.validation, c);
      if (tr.empty() && c.train.epochs > 0) throw std::runtime_error("no training instances in the given data");
      Model m = Model::init(c.model, c.train.seed);
      const TrainReport report = fit(m, tr, va, c.train, [&](const EpochRecord& e) {
        out << "epoch " << e.epoch << " loss " << format_number(e.total) << " reconstruction "
            << format_number(e.reconstruction) << " kl " << format_number(e.kl) << " val_fde "
            << format_number(e.val_fde) << '\n';
      });
      fs::create_directories(train_out);
      save_checkpoint((fs::path(train_out) / "model.ckpt").string(), m, c);
      std::ostringstream cfg;
      write_config(cfg, c);
      write_text_file(fs::path(train_out) / "config.txt", cfg.str());
      json j = to_json(report);
      j["train_instances"] = tr.size();
      j["validation_instances"] = va.size();
      write_text_file(fs::path(train_out) / "train_report.json", j.dump(2) + "\n");
      if (report.diverged) err << "warning: " << report.divergence_message << "; kept the last finite epoch\n";
      out << "wrote " << (fs::path(train_out) / "model.ckpt").string() << '\n';
      return 0;
    }

    auto predict_set = [&](const LoadedCheckpoint& ck, const RunConfig& c, const std::vector<std::string>& data,
                           std::size_t n, std::uint64_t seed, SamplingMode mode) {
      const auto scenes = load_scene_paths(data, detail::load_options(c));
      auto instances = scene_instances(scenes, c);
      auto preds = predict_all(ck.model, instances, n, seed, mode);
      return std::pair{std::move(instances), std::move(preds)};
    };

    if (*pred) {
      const LoadedCheckpoint ck = load_checkpoint(pred_ckpt);
      RunConfig c = detail::resolve_config("", pred_flags, ck.config);
      const std::size_t n = pred_n ? pred_n : std::max(c.train.n_proposals, c.data.eval_samples);
      if (pred_mode != "latent_mode" && pred_mode != "full")
        throw std::invalid_argument("--mode must be latent_mode or full");
      const auto mode = pred_mode == "full" ? SamplingMode::full : SamplingMode::latent_mode;
      auto [instances, preds] = predict_set(ck, c, pred_data, n, pred_seed.value_or(c.train.seed), mode);
      json arr = json::array();
      for (const auto& p : preds) arr.push_back(to_json(p));
      const fs::path out_path(pred_out);
      if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
      write_text_file(out_path, json{{"units", c.data.units}, {"instances", arr}}.dump(1) + "\n");
      if (!pred_svg.empty()) {
        fs::create_directories(pred_svg);
        for (std::size_t i = 0; i < std::min(pred_svg_limit, preds.size()); ++i) {
          std::string name = instances[i].id;
          std::replace(name.begin(), name.end(), '/', '_');
          std::ostringstream svg;
          write_prediction_svg(svg, instances[i], preds[i]);
          write_text_file(fs::path(pred_svg) / (name + ".svg"), svg.str());
        }
      }
      out << "wrote " << preds.size() << " predictions to " << pred_out << '\n';
      return 0;
    }

    if (*eval) {
      if (eval_preds.empty() && eval_ckpt.empty()) throw std::invalid_argument("evaluate needs --predictions or --checkpoint");
      RunConfig c;
      std::vector<PredictionInstance> instances;
      std::vector<Prediction> preds;
      if (!eval_ckpt.empty()) {
        const LoadedCheckpoint ck = load_checkpoint(eval_ckpt);
        c = detail::resolve_config("", eval_flags, ck.config);
        std::tie(instances, preds) = predict_set(ck, c, eval_data, std::max(c.train.n_proposals, c.data.eval_samples),
                                                 eval_seed.value_or(c.train.seed), SamplingMode::latent_mode);
      } else {
        const json j = read_json_file(eval_preds);
        c = detail::resolve_config("", eval_flags);
        if (j.contains("units") && eval_flags.count("units") == 0) c.data.units = j.at("units").get<std::string>();
        instances = scene_instances(load_scene_paths(eval_data, detail::load_options(c)), c);
        for (const auto& p : j.at("instances")) preds.push_back(prediction_from_json(p));
      }
      const EvaluationSummary s = evaluate_predictions(preds, instances, c.data.eval_samples, c.data.units);
      fs::create_directories(eval_out);
      std::ostringstream csv;
      write_metrics_csv(csv, s);
      write_text_file(fs::path(eval_out) / "metrics.csv", csv.str());
      write_text_file(fs::path(eval_out) / "report.json", to_json(s).dump(2) + "\n");
      out << "instances " << s.selected.count << " ade " << format_number(s.selected.ade) << " fde "
          << format_number(s.selected.fde) << " min_ade_" << s.selected.k << ' ' << format_number(s.selected.min_ade_k)
          << " min_fde_" << s.selected.k << ' ' << format_number(s.selected.min_fde_k) << " (" << c.data.units << ")\n";
      return 0;
    }

    if (*abl) {
      const RunConfig c = detail::resolve_config(abl_config, abl_flags);
      std::vector<Scene> tr, te;
      if (abl_data.empty())
        tr = mixed_synthetic_scenes(c.train.seed, abl_scenes, abl_agents);
      else
        tr = load_scene_paths(abl_data, detail::load_options(c));
      if (abl_test.empty())
        te = mixed_synthetic_scenes(c.train.seed + 7919, abl_test_scenes, abl_agents);
      else
        te = load_scene_paths(abl_test, detail::load_options(c));
      const AblationResult r = run_cell_ablation(c, tr, te, abl_seeds);
      json runs = json::array();
      std::ostringstream csv;
      csv << "seed,decoder,fde,ade,fde_1s,fde_2s,fde_3s,fde_4s,top1_fde,min_fde_" << c.data.eval_samples << '\n';
      auto emit = [&](const AblationRun& run, const char* label) {
        const auto& ml = run.test.most_likely;
        runs.push_back({{"seed", run.seed},
                        {"decoder", label},
                        {"decoder_rounds", run.decoder_rounds},
                        {"most_likely", to_json(ml)},
                        {"selected", to_json(run.test.selected)},
                        {"best_epoch", run.train.best_epoch ? json(*run.train.best_epoch) : json(nullptr)}});
        csv << run.seed << ',' << label << ',' << format_number(ml.fde) << ',' << format_number(ml.ade);
        for (const auto& f : ml.fde_at) csv << ',' << (f ? format_number(*f) : "");
        csv << ',' << format_number(run.test.selected.fde) << ',' << format_number(run.test.selected.min_fde_k) << '\n';
      };
      for (std::size_t i = 0; i < r.mogrifier.size(); ++i) {
        emit(r.mogrifier[i], "mogrifier_gru");
        emit(r.vanilla[i], "gru");
      }
      const double mog = AblationResult::mean_of(r.mogrifier, [](const AblationRun& x) { return x.test.most_likely.fde; });
      const double van = AblationResult::mean_of(r.vanilla, [](const AblationRun& x) { return x.test.most_likely.fde; });
      fs::create_directories(abl_out);
      write_text_file(fs::path(abl_out) / "ablation.csv", csv.str());
      write_text_file(fs::path(abl_out) / "ablation.json",
                      json{{"runs", runs},
                           {"mean_fde_mogrifier_gru", mog},
                           {"mean_fde_gru", van},
                           {"constant_velocity_fde", r.mogrifier.front().test.constant_velocity.fde},
                           {"units", c.data.units}}
                              .dump(2) + "\n");
      out << "mean final FDE: mogrifier_gru " << format_number(mog) << ", gru " << format_number(van) << " ("
          << c.data.units << ")\n";
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace ltn
