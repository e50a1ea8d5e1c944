// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ltn {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double k, Vec2 a) { return {k * a.x, k * a.y}; }
  friend Vec2 operator*(Vec2 a, double k) { return {k * a.x, k * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) { return a.x == b.x && a.y == b.y; }
  double norm() const { return std::hypot(x, y); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y); }
};

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

enum class AgentCategory { pedestrian, vehicle };

/// One agent's positions at consecutive frames starting at `start_frame`.
struct AgentTrack {
  std::int64_t agent_id = 0;
  AgentCategory category = AgentCategory::pedestrian;
  long start_frame = 0;
  std::vector<Vec2> positions;

  long end_frame() const { return start_frame + static_cast<long>(positions.size()) - 1; }
  bool covers(long frame) const { return frame >= start_frame && frame <= end_frame(); }
  bool covers(long first, long last) const { return !positions.empty() && first >= start_frame && last <= end_frame(); }
  Vec2 at(long frame) const { return positions.at(static_cast<std::size_t>(frame - start_frame)); }
};

/// Binary traversability raster; cell (row, col) spans
/// [origin + col*cell_size, origin + (col+1)*cell_size) in x, likewise rows in y.
struct OccupancyGrid {
  std::size_t width = 0;
  std::size_t height = 0;
  double cell_size = 1.0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  std::vector<std::uint8_t> cells;  // row-major, 1 = traversable

  bool traversable(long row, long col) const {
    if (row < 0 || col < 0 || row >= static_cast<long>(height) || col >= static_cast<long>(width)) return false;
    return cells[static_cast<std::size_t>(row) * width + static_cast<std::size_t>(col)] != 0;
  }
};

struct Scene {
  std::string name;
  AgentTrack robot;
  std::vector<AgentTrack> agents;
  double dt = 0.4;
  std::optional<OccupancyGrid> map;

  bool has_vehicle() const {
    if (robot.category == AgentCategory::vehicle) return true;
    return std::any_of(agents.begin(), agents.end(), [](const AgentTrack& a) { return a.category == AgentCategory::vehicle; });
  }
};

/// Frames per window: `obs_frames` observed (indices 0..T_obs) followed by
/// `pred_frames` predicted.
struct Horizon {
  std::size_t obs_frames = 8;
  std::size_t pred_frames = 12;
  std::size_t window() const { return obs_frames + pred_frames; }
};

struct MapPatch {
  std::size_t cells = 0;
  std::vector<double> values;  // row-major cells x cells, 1 = traversable
  bool available = false;
};

struct PredictionInstance {
  std::string id;
  std::int64_t agent_id = 0;
  AgentCategory category = AgentCategory::pedestrian;
  long start_frame = 0;
  double dt = 0.4;
  Horizon horizon;
  std::vector<Vec2> history;                            // obs_frames positions
  std::vector<std::int64_t> neighbor_ids;               // ascending
  std::vector<std::vector<Vec2>> neighbor_histories;    // obs_frames each
  std::vector<std::vector<Vec2>> neighbor_futures;      // pred_frames each, empty at inference
  MapPatch map_patch;
  std::vector<Vec2> future;                             // pred_frames, empty at inference

  bool has_future() const { return future.size() == horizon.pred_frames; }
  Vec2 last_observed() const { return history.back(); }
};

/// 10 m for pedestrian-only scenes, 30 m once a vehicle is present.
inline double default_perception_distance(const Scene& scene) { return scene.has_vehicle() ? 30.0 : 10.0; }

/// Every other agent (robot included) within `d` meters of `target` at some
/// frame of [first, last] where both are present, ordered by agent_id.
inline std::vector<AgentTrack> select_neighbors(const Scene& scene, const AgentTrack& target, double d, long first,
                                                long last) {
  if (!(d > 0.0)) throw std::invalid_argument("select_neighbors: perception distance must be positive");
  std::vector<AgentTrack> out;
  auto consider = [&](const AgentTrack& other) {
    if (other.agent_id == target.agent_id) return;
    for (long t = first; t <= last; ++t) {
      if (!target.covers(t) || !other.covers(t)) continue;
      const Vec2 a = target.at(t), b = other.at(t);
      if (a.finite() && b.finite() && distance(a, b) <= d) {
        out.push_back(other);
        return;
      }
    }
  };
  if (!scene.robot.positions.empty()) consider(scene.robot);
  for (const auto& a : scene.agents) consider(a);
  std::sort(out.begin(), out.end(), [](const AgentTrack& a, const AgentTrack& b) { return a.agent_id < b.agent_id; });
  return out;
}

inline MapPatch extract_map_patch(const OccupancyGrid& grid, Vec2 position, std::size_t patch_cells) {
  MapPatch p;
  p.cells = patch_cells;
  p.available = true;
  p.values.assign(patch_cells * patch_cells, 0.0);
  const long col = static_cast<long>(std::floor((position.x - grid.origin_x) / grid.cell_size));
  const long row = static_cast<long>(std::floor((position.y - grid.origin_y) / grid.cell_size));
  const long r0 = row - static_cast<long>(patch_cells / 2);
  const long c0 = col - static_cast<long>(patch_cells / 2);
  for (std::size_t i = 0; i < patch_cells; ++i)
    for (std::size_t j = 0; j < patch_cells; ++j)
      p.values[i * patch_cells + j] = grid.traversable(r0 + static_cast<long>(i), c0 + static_cast<long>(j)) ? 1.0 : 0.0;
  return p;
}

/// Without a map the patch is all-traversable and flagged unavailable.
inline MapPatch extract_map_patch(const std::optional<OccupancyGrid>& grid, Vec2 position, std::size_t patch_cells) {
  if (grid) return extract_map_patch(*grid, position, patch_cells);
  MapPatch p;
  p.cells = patch_cells;
  p.values.assign(patch_cells * patch_cells, 1.0);
  p.available = false;
  return p;
}

namespace detail {
// Position at `frame`, holding the nearest available sample outside the track.
inline Vec2 held_position(const AgentTrack& t, long frame) {
  return t.at(std::clamp(frame, t.start_frame, t.end_frame()));
}

inline bool window_finite(const AgentTrack& t, long first, long last) {
  for (long f = first; f <= last; ++f)
    if (!t.at(f).finite()) return false;
  return true;
}
}  // namespace detail

struct InstanceBuild {
  std::vector<PredictionInstance> instances;
  std::size_t skipped_gaps = 0;
};

/// One instance per (agent within `d` of the robot, window start), sliding
/// one frame at a time. Windows containing non-finite samples are skipped.
inline InstanceBuild build_prediction_instances(const Scene& scene, double d, const Horizon& horizon,
                                                std::size_t map_patch_cells = 16, bool include_future = true) {
  InstanceBuild out;
  const long W = static_cast<long>(horizon.window());
  const long obs = static_cast<long>(horizon.obs_frames);
  for (const auto& agent : scene.agents) {
    if (agent.agent_id == scene.robot.agent_id || agent.positions.size() < static_cast<std::size_t>(W)) continue;
    for (long s = agent.start_frame; s + W - 1 <= agent.end_frame(); ++s) {
      const long obs_last = s + obs - 1;
      bool near_robot = false;
      for (long t = s; t <= obs_last && !near_robot; ++t)
        near_robot = scene.robot.covers(t) && agent.at(t).finite() && scene.robot.at(t).finite() &&
                     distance(agent.at(t), scene.robot.at(t)) <= d;
      if (!near_robot) continue;
      if (!detail::window_finite(agent, s, s + W - 1)) {
        ++out.skipped_gaps;
        continue;
      }
      PredictionInstance inst;
      inst.id = scene.name + "/agent" + std::to_string(agent.agent_id) + "/frame" + std::to_string(s);
      inst.agent_id = agent.agent_id;
      inst.category = agent.category;
      inst.start_frame = s;
      inst.dt = scene.dt;
      inst.horizon = horizon;
      for (long t = s; t <= obs_last; ++t) inst.history.push_back(agent.at(t));
      if (include_future)
        for (long t = obs_last + 1; t < s + W; ++t) inst.future.push_back(agent.at(t));
      for (const auto& nb : select_neighbors(scene, agent, d, s, obs_last)) {
        if (!detail::window_finite(nb, std::max(s, nb.start_frame), std::min(obs_last, nb.end_frame()))) continue;
        inst.neighbor_ids.push_back(nb.agent_id);
        std::vector<Vec2> hist;
        for (long t = s; t <= obs_last; ++t) hist.push_back(detail::held_position(nb, t));
        inst.neighbor_histories.push_back(std::move(hist));
        if (include_future) {
          std::vector<Vec2> fut;
          for (long t = obs_last + 1; t < s + W; ++t) {
            const Vec2 p = detail::held_position(nb, t);
            fut.push_back(p.finite() ? p : inst.neighbor_histories.back().back());
          }
          inst.neighbor_futures.push_back(std::move(fut));
        }
      }
      inst.map_patch = extract_map_patch(scene.map, agent.at(obs_last), map_patch_cells);
      out.instances.push_back(std::move(inst));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Occupancy grid text format: "width height cell_size origin_x origin_y",
// then `height` rows of `width` characters from {0,1}.

inline OccupancyGrid read_occupancy_grid(std::istream& in) {
  OccupancyGrid g;
  if (!(in >> g.width >> g.height >> g.cell_size >> g.origin_x >> g.origin_y))
    throw std::runtime_error("occupancy grid: malformed header");
  if (g.width == 0 || g.height == 0 || !(g.cell_size > 0.0))
    throw std::runtime_error("occupancy grid: dimensions and cell size must be positive");
  g.cells.reserve(g.width * g.height);
  std::string line;
  std::size_t row = 0;
  while (row < g.height && in >> line) {
    if (line.size() != g.width)
      throw std::runtime_error("occupancy grid: row " + std::to_string(row) + " has " + std::to_string(line.size()) +
                               " cells, expected " + std::to_string(g.width));
    for (char ch : line) {
      if (ch != '0' && ch != '1')
        throw std::runtime_error("occupancy grid: row " + std::to_string(row) + " has invalid cell '" + ch + "'");
      g.cells.push_back(ch == '1' ? 1 : 0);
    }
    ++row;
  }
  if (row != g.height) throw std::runtime_error("occupancy grid: expected " + std::to_string(g.height) + " rows");
  return g;
}

inline OccupancyGrid read_occupancy_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("occupancy grid: cannot open " + path);
  return read_occupancy_grid(in);
}

inline void write_occupancy_grid(std::ostream& out, const OccupancyGrid& g) {
  out.precision(17);
  out << g.width << ' ' << g.height << ' ' << g.cell_size << ' ' << g.origin_x << ' ' << g.origin_y << '\n';
  for (std::size_t r = 0; r < g.height; ++r) {
    for (std::size_t c = 0; c < g.width; ++c) out << (g.cells[r * g.width + c] ? '1' : '0');
    out << '\n';
  }
}

}  // namespace ltn
