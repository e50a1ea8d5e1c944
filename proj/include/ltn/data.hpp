// SPDX-License-Identifier: Apache-2.0
//
// Trajectory text files (`frame agent x y`), a small multi-agent simulator
// for synthetic scenes, and extrapolation baselines.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltn/random.hpp"
#include "ltn/scene.hpp"

namespace ltn {

struct TrajectoryFileRecord {
  long frame_id = 0;
  std::int64_t agent_id = 0;
  double x = 0.0;
  double y = 0.0;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Blank lines and lines starting with '#' are ignored.
inline std::vector<TrajectoryFileRecord> read_trajectory_records(std::istream& in, const std::string& source = "<stream>") {
  std::vector<TrajectoryFileRecord> out;
  std::map<std::pair<long, std::int64_t>, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::string f, a, x, y, extra;
    if (!(ls >> f >> a >> x >> y)) throw ParseError(source, lineno, "expected 4 columns 'frame agent x y'");
    if (ls >> extra) throw ParseError(source, lineno, "unexpected trailing column '" + extra + "'");
    TrajectoryFileRecord r;
    try {
      std::size_t used = 0;
      const double fd = std::stod(f, &used);
      if (used != f.size() || fd != std::floor(fd)) throw std::invalid_argument(f);
      r.frame_id = static_cast<long>(fd);
      const double ad = std::stod(a, &used);
      if (used != a.size() || ad != std::floor(ad)) throw std::invalid_argument(a);
      r.agent_id = static_cast<std::int64_t>(ad);
      r.x = std::stod(x, &used);
      if (used != x.size()) throw std::invalid_argument(x);
      r.y = std::stod(y, &used);
      if (used != y.size()) throw std::invalid_argument(y);
    } catch (const std::exception&) {
      throw ParseError(source, lineno, "malformed record '" + line.substr(first) + "'");
    }
    if (auto [it, fresh] = seen.emplace(std::pair{r.frame_id, r.agent_id}, lineno); !fresh)
      throw ParseError(source, lineno,
                       "duplicate record for frame " + std::to_string(r.frame_id) + " agent " +
                           std::to_string(r.agent_id) + " (first on line " + std::to_string(it->second) + ")");
    out.push_back(r);
  }
  return out;
}

inline void write_trajectory_records(std::ostream& out, const std::vector<TrajectoryFileRecord>& records) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& r : records) os << r.frame_id << ' ' << r.agent_id << ' ' << r.x << ' ' << r.y << '\n';
  out << os.str();
}

/// Frame ids in the file are `frame_step` apart; scene frame indices are
/// (frame_id - first frame) / frame_step.
inline std::vector<TrajectoryFileRecord> scene_records(const Scene& scene, long frame_step = 1) {
  std::vector<TrajectoryFileRecord> out;
  auto emit = [&](const AgentTrack& t) {
    for (std::size_t i = 0; i < t.positions.size(); ++i)
      out.push_back({(t.start_frame + static_cast<long>(i)) * frame_step, t.agent_id, t.positions[i].x, t.positions[i].y});
  };
  if (!scene.robot.positions.empty()) emit(scene.robot);
  for (const auto& a : scene.agents) emit(a);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.frame_id != b.frame_id ? a.frame_id < b.frame_id : a.agent_id < b.agent_id;
  });
  return out;
}

inline void write_scene(std::ostream& out, const Scene& scene, long frame_step = 1) {
  write_trajectory_records(out, scene_records(scene, frame_step));
}

inline void write_scene_file(const std::string& path, const Scene& scene, long frame_step = 1) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_scene(out, scene, frame_step);
  if (!out) throw std::runtime_error("write failed for " + path);
}

struct LoadOptions {
  double dt = 0.4;
  std::optional<std::int64_t> robot_id;  // default: longest track, lowest id on ties
  AgentCategory category = AgentCategory::pedestrian;
};

/// Builds a scene from records. The frame step is the smallest positive
/// difference between distinct frame ids; a track with a larger jump is
/// split into separate segments that keep the agent id.
inline std::optional<Scene> assemble_scene(std::vector<TrajectoryFileRecord> records, const std::string& name,
                                           const LoadOptions& opts = {}) {
  if (records.empty()) return std::nullopt;
  std::vector<long> frames;
  for (const auto& r : records) frames.push_back(r.frame_id);
  std::sort(frames.begin(), frames.end());
  frames.erase(std::unique(frames.begin(), frames.end()), frames.end());
  long step = 0;
  for (std::size_t i = 1; i < frames.size(); ++i) {
    const long d = frames[i] - frames[i - 1];
    step = step == 0 ? d : std::min(step, d);
  }
  if (step == 0) step = 1;
  const long base = frames.front();
  for (const auto& r : records)
    if ((r.frame_id - base) % step != 0)
      throw std::runtime_error(name + ": frame " + std::to_string(r.frame_id) + " is off the " + std::to_string(step) +
                               "-frame grid");

  std::map<std::int64_t, std::vector<std::pair<long, Vec2>>> by_agent;
  for (const auto& r : records) by_agent[r.agent_id].push_back({(r.frame_id - base) / step, Vec2{r.x, r.y}});

  std::vector<AgentTrack> tracks;
  for (auto& [id, samples] : by_agent) {
    std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    AgentTrack cur;
    for (const auto& [f, p] : samples) {
      if (!cur.positions.empty() && f != cur.end_frame() + 1) {
        tracks.push_back(std::move(cur));
        cur = AgentTrack{};
      }
      if (cur.positions.empty()) {
        cur.agent_id = id;
        cur.category = opts.category;
        cur.start_frame = f;
      }
      cur.positions.push_back(p);
    }
    tracks.push_back(std::move(cur));
  }

  std::size_t robot = 0;
  if (opts.robot_id) {
    bool found = false;
    for (std::size_t i = 0; i < tracks.size(); ++i)
      if (tracks[i].agent_id == *opts.robot_id && (!found || tracks[i].positions.size() > tracks[robot].positions.size())) {
        robot = i;
        found = true;
      }
    if (!found) throw std::runtime_error(name + ": robot agent " + std::to_string(*opts.robot_id) + " not present");
  } else {
    for (std::size_t i = 1; i < tracks.size(); ++i)
      if (tracks[i].positions.size() > tracks[robot].positions.size()) robot = i;
  }

  Scene scene;
  scene.name = name;
  scene.dt = opts.dt;
  scene.robot = tracks[robot];
  for (std::size_t i = 0; i < tracks.size(); ++i)
    if (i != robot) scene.agents.push_back(std::move(tracks[i]));
  return scene;
}

inline std::vector<Scene> read_scenes(std::istream& in, const std::string& name, const LoadOptions& opts = {}) {
  std::vector<Scene> out;
  if (auto s = assemble_scene(read_trajectory_records(in, name), name, opts)) out.push_back(std::move(*s));
  return out;
}

/// One scene per file; an empty file yields none. Window lengths are
/// applied later by build_prediction_instances.
inline std::vector<Scene> load_trajectory_file(const std::string& path, const LoadOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string name = path;
  if (const auto slash = name.find_last_of('/'); slash != std::string::npos) name = name.substr(slash + 1);
  if (const auto dot = name.find_last_of('.'); dot != std::string::npos && dot > 0) name = name.substr(0, dot);
  return read_scenes(in, name, opts);
}

// ---------------------------------------------------------------------------
// Synthetic scenes

enum class Dynamics { constant_velocity, turning, social_repulsion };

inline std::string to_string(Dynamics d) {
  switch (d) {
    case Dynamics::constant_velocity: return "constant_velocity";
    case Dynamics::turning: return "turning";
    case Dynamics::social_repulsion: return "social_repulsion";
  }
  return "?";
}

inline Dynamics parse_dynamics(const std::string& s) {
  if (s == "constant_velocity" || s == "cv") return Dynamics::constant_velocity;
  if (s == "turning") return Dynamics::turning;
  if (s == "social_repulsion" || s == "social") return Dynamics::social_repulsion;
  throw std::invalid_argument("unknown dynamics '" + s + "' (constant_velocity | turning | social_repulsion)");
}

struct AgentInit {
  Vec2 position;
  Vec2 velocity;
  double yaw_rate = 0.0;  // rad/s, turning only
  Vec2 goal;              // social_repulsion only
};

struct SimulationParams {
  double dt = 0.4;
  double relaxation_time = 1.0;   // goal attraction: (v_pref * e_goal - v) / tau
  double repulsion_strength = 1.0;  // per pair: strength / distance, in m/s^2
  double repulsion_cap = 2.0;
};

/// Positions at frames 0..frames-1, frame 0 being the initial position.
inline std::vector<std::vector<Vec2>> simulate_agents(const std::vector<AgentInit>& init, std::size_t frames,
                                                      Dynamics dynamics, const SimulationParams& sp = {}) {
  const std::size_t n = init.size();
  std::vector<std::vector<Vec2>> out(n);
  std::vector<Vec2> pos(n), vel(n);
  std::vector<double> speed(n);
  for (std::size_t i = 0; i < n; ++i) {
    pos[i] = init[i].position;
    vel[i] = init[i].velocity;
    speed[i] = init[i].velocity.norm();
  }
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < n; ++i) out[i].push_back(pos[i]);
    if (f + 1 == frames) break;
    switch (dynamics) {
      case Dynamics::constant_velocity:
        for (std::size_t i = 0; i < n; ++i) pos[i] = pos[i] + vel[i] * sp.dt;
        break;
      case Dynamics::turning:
        for (std::size_t i = 0; i < n; ++i) {
          pos[i] = pos[i] + vel[i] * sp.dt;
          const double a = init[i].yaw_rate * sp.dt, c = std::cos(a), s = std::sin(a);
          vel[i] = Vec2{c * vel[i].x - s * vel[i].y, s * vel[i].x + c * vel[i].y};
        }
        break;
      case Dynamics::social_repulsion: {
        std::vector<Vec2> acc(n);
        for (std::size_t i = 0; i < n; ++i) {
          const Vec2 to_goal = init[i].goal - pos[i];
          const double dg = to_goal.norm();
          const Vec2 desired = dg > 1e-9 ? to_goal * (speed[i] / dg) : Vec2{};
          acc[i] = (desired - vel[i]) * (1.0 / sp.relaxation_time);
          for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const Vec2 away = pos[i] - pos[j];
            const double d = std::max(away.norm(), 1e-6);
            const double mag = std::min(sp.repulsion_strength / d, sp.repulsion_cap);
            acc[i] = acc[i] + away * (mag / d);
          }
        }
        for (std::size_t i = 0; i < n; ++i) {
          vel[i] = vel[i] + acc[i] * sp.dt;
          pos[i] = pos[i] + vel[i] * sp.dt;
        }
        break;
      }
    }
  }
  return out;
}

struct SyntheticOptions {
  std::size_t frames = 20;
  double arena = 8.0;  // initial positions uniform in [-arena/2, arena/2]^2
  double min_speed = 0.8;
  double max_speed = 1.6;
  double max_yaw_rate = 0.35;
  double goal_distance = 8.0;
  SimulationParams sim;
};

/// Agent 0 of every scene is the robot. Deterministic in `seed`.
inline std::vector<Scene> generate_synthetic_scenes(std::uint64_t seed, std::size_t n_scenes,
                                                    std::size_t agents_per_scene, Dynamics dynamics,
                                                    const SyntheticOptions& opts = {}) {
  if (n_scenes == 0 || agents_per_scene == 0 || opts.frames == 0)
    throw std::invalid_argument("generate_synthetic_scenes: counts must be positive");
  Rng rng(seed);
  std::vector<Scene> out;
  for (std::size_t s = 0; s < n_scenes; ++s) {
    std::vector<AgentInit> init(agents_per_scene);
    for (auto& a : init) {
      a.position = {rng.uniform(-opts.arena / 2, opts.arena / 2), rng.uniform(-opts.arena / 2, opts.arena / 2)};
      const double heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
      const double speed = rng.uniform(opts.min_speed, opts.max_speed);
      a.velocity = {speed * std::cos(heading), speed * std::sin(heading)};
      a.yaw_rate = rng.uniform(-opts.max_yaw_rate, opts.max_yaw_rate);
      const double goal_heading = heading + rng.uniform(-std::numbers::pi / 2, std::numbers::pi / 2);
      a.goal = a.position + Vec2{std::cos(goal_heading), std::sin(goal_heading)} * opts.goal_distance;
    }
    SimulationParams sp = opts.sim;
    const auto paths = simulate_agents(init, opts.frames, dynamics, sp);
    Scene scene;
    scene.name = to_string(dynamics) + "_" + std::to_string(s);
    scene.dt = sp.dt;
    for (std::size_t i = 0; i < agents_per_scene; ++i) {
      AgentTrack t;
      t.agent_id = static_cast<std::int64_t>(i);
      t.positions = paths[i];
      if (i == 0)
        scene.robot = std::move(t);
      else
        scene.agents.push_back(std::move(t));
    }
    out.push_back(std::move(scene));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Baselines

/// Extrapolates the last observed displacement.
inline std::vector<Vec2> constant_velocity_prediction(std::span<const Vec2> history, std::size_t horizon) {
  if (history.empty()) throw std::invalid_argument("constant_velocity_prediction: empty history");
  const Vec2 last = history.back();
  const Vec2 v = history.size() > 1 ? last - history[history.size() - 2] : Vec2{};
  std::vector<Vec2> out;
  for (std::size_t t = 1; t <= horizon; ++t) out.push_back(last + v * static_cast<double>(t));
  return out;
}

inline std::vector<Vec2> constant_position_prediction(std::span<const Vec2> history, std::size_t horizon) {
  if (history.empty()) throw std::invalid_argument("constant_position_prediction: empty history");
  return std::vector<Vec2>(horizon, history.back());
}

}  // namespace ltn
