// SPDX-License-Identifier: Apache-2.0
//
// Model, training and data configuration plus the flat `key = value` text
// format shared by config files, command-line flags and checkpoints.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltn/tensor.hpp"

namespace ltn {

struct ModelConfig {
  std::size_t history_hidden = 32;
  std::size_t neighbor_hidden = 8;
  std::size_t future_hidden = 32;
  std::size_t encoder_layers = 2;
  std::size_t encoder_rounds = 6;
  std::size_t attention_dim = 16;
  bool use_map = false;
  std::size_t map_cells = 16;
  std::size_t map_channels = 4;
  std::size_t map_hidden = 32;
  std::size_t latent_dim = 25;
  std::size_t latent_hidden = 32;
  std::size_t decoder_hidden = 32;
  std::size_t decoder_rounds = 6;
  std::size_t classifier_hidden = 16;
  std::size_t classifier_head_hidden = 16;
  std::size_t pred_frames = 12;

  std::size_t history_dim() const { return history_hidden + neighbor_hidden + (use_map ? map_hidden : 0); }
  std::size_t future_dim() const { return 2 * future_hidden + neighbor_hidden; }
};

struct BetaSchedule {
  enum class Kind { constant, sigmoid_anneal };
  Kind kind = Kind::sigmoid_anneal;
  double constant = 1.0;
  double start = 0.0;
  double end = 1.0;
  double midpoint_step = 200.0;
  double rate = 0.02;
};

struct TrainConfig {
  double alpha = 1.0;
  BetaSchedule beta;
  double learning_rate = 0.002;
  std::size_t batch_size = 8;
  std::size_t epochs = 10;
  std::size_t n_proposals = 20;
  double gamma = 3.0;
  std::uint64_t seed = 1;
  double grad_clip = 10.0;
  bool train_classifier = true;
  // Hard cap on optimizer steps (0 = unlimited).
  std::size_t max_steps = 0;
};

struct DataConfig {
  std::size_t obs_frames = 8;
  double dt = 0.4;
  double perception_distance = 0.0;  // 0 selects 10 m / 30 m by scene content
  std::string units = "m";
  double val_fraction = 0.1;
  std::size_t eval_samples = 20;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const unsigned long long d = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

}  // namespace detail

struct ConfigField {
  std::string key;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// Every recognized key. The CLI exposes each one as `--key`.
inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto sz = [&f](std::string key, std::string help, auto member) {
      f.push_back({key, std::move(help),
                   [member, key](RunConfig& c, const std::string& v) {
                     member(c) = static_cast<std::size_t>(detail::parse_uint(key, v));
                   },
                   [member](const RunConfig& c) { return std::to_string(member(c)); }});
    };
    auto dbl = [&f](std::string key, std::string help, auto member) {
      f.push_back({key, std::move(help),
                   [member, key](RunConfig& c, const std::string& v) { member(c) = detail::parse_double(key, v); },
                   [member](const RunConfig& c) { return detail::fmt_double(member(c)); }});
    };
    auto bln = [&f](std::string key, std::string help, auto member) {
      f.push_back({key, std::move(help),
                   [member, key](RunConfig& c, const std::string& v) { member(c) = detail::parse_bool(key, v); },
                   [member](const RunConfig& c) {
                     return std::string(member(c) ? "true" : "false");
                   }});
    };
    // model
    sz("history_hidden", "agent history LSTM width", [](auto& c) -> auto& { return c.model.history_hidden; });
    sz("neighbor_hidden", "neighbor LSTM width", [](auto& c) -> auto& { return c.model.neighbor_hidden; });
    sz("future_hidden", "future LSTM width per direction", [](auto& c) -> auto& { return c.model.future_hidden; });
    sz("encoder_layers", "stacked encoder LSTM layers", [](auto& c) -> auto& { return c.model.encoder_layers; });
    sz("encoder_rounds", "mogrifier rounds in encoder LSTMs", [](auto& c) -> auto& { return c.model.encoder_rounds; });
    sz("attention_dim", "additive attention width", [](auto& c) -> auto& { return c.model.attention_dim; });
    bln("use_map", "include the map encoding in the history tensor", [](auto& c) -> auto& { return c.model.use_map; });
    sz("map_cells", "map patch side length in cells (multiple of 4)", [](auto& c) -> auto& { return c.model.map_cells; });
    sz("map_channels", "first conv layer channels (second doubles it)", [](auto& c) -> auto& { return c.model.map_channels; });
    sz("map_hidden", "map encoding width", [](auto& c) -> auto& { return c.model.map_hidden; });
    sz("latent_dim", "number of discrete latent symbols", [](auto& c) -> auto& { return c.model.latent_dim; });
    sz("latent_hidden", "prior/posterior hidden width", [](auto& c) -> auto& { return c.model.latent_hidden; });
    sz("decoder_hidden", "decoder GRU width", [](auto& c) -> auto& { return c.model.decoder_hidden; });
    sz("decoder_rounds", "mogrifier rounds in the decoder GRU (0 = plain GRU)", [](auto& c) -> auto& { return c.model.decoder_rounds; });
    sz("classifier_hidden", "proposal GRU width", [](auto& c) -> auto& { return c.model.classifier_hidden; });
    sz("classifier_head_hidden", "scoring head width", [](auto& c) -> auto& { return c.model.classifier_head_hidden; });
    sz("pred_frames", "predicted frames", [](auto& c) -> auto& { return c.model.pred_frames; });
    // training
    dbl("alpha", "mutual information weight", [](auto& c) -> auto& { return c.train.alpha; });
    f.push_back({"beta_schedule", "constant | sigmoid",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "constant")
                     c.train.beta.kind = BetaSchedule::Kind::constant;
                   else if (v == "sigmoid")
                     c.train.beta.kind = BetaSchedule::Kind::sigmoid_anneal;
                   else
                     throw std::invalid_argument("config: beta_schedule must be 'constant' or 'sigmoid', got '" + v + "'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.beta.kind == BetaSchedule::Kind::constant ? "constant" : "sigmoid");
                 }});
    dbl("beta_constant", "beta for the constant schedule", [](auto& c) -> auto& { return c.train.beta.constant; });
    dbl("beta_start", "annealed beta at step -inf", [](auto& c) -> auto& { return c.train.beta.start; });
    dbl("beta_end", "annealed beta at step +inf", [](auto& c) -> auto& { return c.train.beta.end; });
    dbl("beta_midpoint", "annealing midpoint step", [](auto& c) -> auto& { return c.train.beta.midpoint_step; });
    dbl("beta_rate", "annealing slope", [](auto& c) -> auto& { return c.train.beta.rate; });
    dbl("learning_rate", "Adam learning rate", [](auto& c) -> auto& { return c.train.learning_rate; });
    sz("batch_size", "instances per optimizer step", [](auto& c) -> auto& { return c.train.batch_size; });
    sz("epochs", "training epochs", [](auto& c) -> auto& { return c.train.epochs; });
    sz("n_proposals", "proposals sampled per instance", [](auto& c) -> auto& { return c.train.n_proposals; });
    dbl("gamma", "proposal label threshold in meters", [](auto& c) -> auto& { return c.train.gamma; });
    f.push_back({"seed", "random seed",
                 [](RunConfig& c, const std::string& v) { c.train.seed = detail::parse_uint("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }});
    dbl("grad_clip", "global gradient norm cap", [](auto& c) -> auto& { return c.train.grad_clip; });
    bln("train_classifier", "optimize the proposal classifier", [](auto& c) -> auto& { return c.train.train_classifier; });
    sz("max_steps", "optimizer step cap (0 = none)", [](auto& c) -> auto& { return c.train.max_steps; });
    // data
    sz("obs_frames", "observed frames", [](auto& c) -> auto& { return c.data.obs_frames; });
    dbl("dt", "frame spacing in seconds", [](auto& c) -> auto& { return c.data.dt; });
    dbl("perception_distance", "neighbor radius in meters (0 = automatic)", [](auto& c) -> auto& { return c.data.perception_distance; });
    f.push_back({"units", "m | px",
                 [](RunConfig& c, const std::string& v) {
                   if (v != "m" && v != "px") throw std::invalid_argument("config: units must be 'm' or 'px', got '" + v + "'");
                   c.data.units = v;
                 },
                 [](const RunConfig& c) { return c.data.units; }});
    dbl("val_fraction", "share of scenes held out for validation", [](auto& c) -> auto& { return c.data.val_fraction; });
    sz("eval_samples", "samples per instance for min-of-k metrics", [](auto& c) -> auto& { return c.data.eval_samples; });
    return f;
  }();
  return fields;
}

inline const ConfigField& find_config_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f;
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  find_config_field(key).set(c, value);
}

/// Applies `key = value` lines; `#` starts a comment.
inline void read_config(std::istream& in, RunConfig& c) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected 'key = value'");
    set_config_value(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

inline RunConfig read_config_file(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  read_config(in, base);
  return base;
}

inline void write_config(std::ostream& out, const RunConfig& c) {
  for (const auto& f : config_fields()) out << f.key << " = " << f.get(c) << '\n';
}

inline double beta_value(std::size_t step, const BetaSchedule& s) {
  if (s.kind == BetaSchedule::Kind::constant) return s.constant;
  const double sg = sigmoid_scalar(s.rate * (static_cast<double>(step) - s.midpoint_step));
  return s.end * sg + s.start * (1.0 - sg);
}

}  // namespace ltn
