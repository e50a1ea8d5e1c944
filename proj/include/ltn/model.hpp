// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltn/classifier.hpp"
#include "ltn/config.hpp"
#include "ltn/encoders.hpp"
#include "ltn/latent.hpp"
#include "ltn/optim.hpp"
#include "ltn/random.hpp"

namespace ltn {

struct Model {
  ModelConfig config;
  EncoderParams encoder;
  LatentHeadParams prior;
  LatentHeadParams posterior;
  DecoderParams decoder;
  ClassifierParams classifier;

  static Model init(const ModelConfig& c, std::uint64_t seed) {
    Rng rng(seed);
    Model m;
    m.config = c;
    m.encoder = EncoderParams::init(rng, c);
    m.prior = LatentHeadParams::init(rng, c.history_dim(), c.latent_hidden, c.latent_dim, "prior");
    m.posterior = LatentHeadParams::init(rng, c.history_dim() + c.future_dim(), c.latent_hidden, c.latent_dim, "posterior");
    m.decoder = DecoderParams::init(rng, c.history_dim(), c.latent_dim, c.decoder_hidden, c.decoder_rounds, "decoder");
    m.classifier = ClassifierParams::init(rng, c.history_dim(), c.classifier_hidden, c.classifier_head_hidden, "classifier");
    return m;
  }

  /// Encoders, latent heads and decoder.
  ParamSet regression_parameters() const {
    ParamSet p;
    encoder.collect(p);
    prior.collect(p);
    posterior.collect(p);
    decoder.collect(p);
    return p;
  }
  ParamSet classifier_parameters() const {
    ParamSet p;
    classifier.collect(p);
    return p;
  }
  ParamSet parameters() const {
    ParamSet p = regression_parameters();
    p.extend(classifier_parameters());
    return p;
  }
};

// ---------------------------------------------------------------------------
// Inference

struct Prediction {
  std::string instance_id;
  std::size_t latent_mode = 0;
  std::vector<Vec2> most_likely;  // mean trajectory of the argmax-z component
  std::vector<TrajectoryProposal> proposals;
  std::size_t selected = 0;  // index into proposals of the top-scored one

  const TrajectoryProposal& selected_proposal() const { return proposals.at(selected); }
};

/// Mean trajectory of the most likely latent symbol.
inline std::vector<Vec2> predict_most_likely(const Model& m, const PredictionInstance& inst) {
  NoGradGuard ng;
  const HistoryEncoding h = encode_history(inst, m.encoder);
  const CategoricalLatent prior = CategoricalLatent::from_logits(prior_logits(h.v_i, m.prior).data());
  return decode_trajectory_distribution(h.v_i, prior.argmax(), m.decoder, m.config.latent_dim, m.config.pred_frames,
                                        inst.last_observed())
      .mean_positions();
}

inline Prediction predict(const Model& m, const PredictionInstance& inst, std::size_t n_proposals, std::uint64_t seed,
                          SamplingMode mode = SamplingMode::latent_mode) {
  NoGradGuard ng;
  Prediction out;
  out.instance_id = inst.id;
  const HistoryEncoding h = encode_history(inst, m.encoder);
  const CategoricalLatent prior = CategoricalLatent::from_logits(prior_logits(h.v_i, m.prior).data());
  out.latent_mode = prior.argmax();
  std::vector<std::size_t> latents;
  if (mode == SamplingMode::latent_mode) {
    latents.push_back(out.latent_mode);
  } else {
    for (std::size_t z = 0; z < m.config.latent_dim; ++z) latents.push_back(z);
  }
  const DecoderRollout r = decode_rollout(h.v_i, latents, m.decoder, m.config.latent_dim, m.config.pred_frames);
  const std::size_t mode_row = mode == SamplingMode::latent_mode ? 0 : out.latent_mode;
  out.most_likely = rollout_distribution(r, mode_row, inst.last_observed()).mean_positions();
  out.proposals = sample_proposals(prior, r, inst.last_observed(), n_proposals, mode, seed, 0);
  score_proposals(out.proposals, inst.last_observed(), h.v_i, m.classifier);
  out.selected = select_final_trajectory(out.proposals, 1).front().index;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: a text header with the run configuration, then every
// parameter as "name rank dims..." followed by hexfloat values, so a
// save/load cycle reproduces every bit.

inline constexpr const char* kCheckpointMagic = "ltn-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& out, const Model& m, const RunConfig& run) {
  RunConfig c = run;
  c.model = m.config;
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  std::ostringstream cfg;
  write_config(cfg, c);
  const std::string text = cfg.str();
  std::size_t lines = 0;
  for (char ch : text) lines += ch == '\n';
  out << "config " << lines << '\n' << text;
  const ParamSet params = m.parameters();
  out << "params " << params.size() << '\n';
  out << std::hexfloat;
  for (const auto& p : params) {
    out << p.name() << ' ' << p.shape().rank;
    for (std::size_t i = 0; i < p.shape().rank; ++i) out << ' ' << p.shape()[i];
    out << '\n';
    for (std::size_t i = 0; i < p.numel(); ++i) out << (i ? " " : "") << p[i];
    out << '\n';
  }
  out << std::defaultfloat;
}

inline void save_checkpoint(const std::string& path, const Model& m, const RunConfig& run) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  write_checkpoint(out, m, run);
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

struct LoadedCheckpoint {
  Model model;
  RunConfig config;
};

inline LoadedCheckpoint read_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic)
    throw std::runtime_error("checkpoint: not an ltn checkpoint");
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  std::string tag;
  std::size_t lines = 0;
  if (!(in >> tag >> lines) || tag != "config") throw std::runtime_error("checkpoint: missing config section");
  in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
  std::string cfg, line;
  for (std::size_t i = 0; i < lines && std::getline(in, line); ++i) cfg += line + '\n';
  LoadedCheckpoint out;
  std::istringstream cfg_in(cfg);
  read_config(cfg_in, out.config);
  out.model = Model::init(out.config.model, 0);
  std::map<std::string, Value> by_name;
  for (const auto& p : out.model.parameters()) by_name[p.name()] = p;
  std::size_t count = 0;
  if (!(in >> tag >> count) || tag != "params") throw std::runtime_error("checkpoint: missing params section");
  if (count != by_name.size())
    throw std::runtime_error("checkpoint: holds " + std::to_string(count) + " parameters, model has " +
                             std::to_string(by_name.size()));
  for (std::size_t k = 0; k < count; ++k) {
    std::string name;
    std::size_t rank = 0;
    if (!(in >> name >> rank) || rank > 3) throw std::runtime_error("checkpoint: malformed parameter header");
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint: unknown parameter '" + name + "'");
    Shape s;
    s.rank = rank;
    for (std::size_t i = 0; i < rank; ++i) in >> s.dims[i];
    if (!(s == it->second.shape()))
      throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " + s.str() + ", model expects " +
                               it->second.shape().str());
    auto data = it->second.mutable_data();
    for (auto& v : data) {
      std::string tok;
      if (!(in >> tok)) throw std::runtime_error("checkpoint: truncated values for '" + name + "'");
      v = std::strtod(tok.c_str(), nullptr);
    }
  }
  return out;
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  return read_checkpoint(in);
}

/// Copies parameter values (same architecture required).
inline std::vector<std::vector<double>> snapshot(const ParamSet& params) {
  std::vector<std::vector<double>> s;
  for (const auto& p : params) s.emplace_back(p.data().begin(), p.data().end());
  return s;
}

inline void restore(ParamSet& params, const std::vector<std::vector<double>>& s) {
  for (std::size_t k = 0; k < params.size(); ++k) std::copy(s[k].begin(), s[k].end(), params[k].mutable_data().begin());
}

}  // namespace ltn
