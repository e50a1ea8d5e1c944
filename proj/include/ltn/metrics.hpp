// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltn/scene.hpp"

namespace ltn {

inline double ade(std::span<const Vec2> pred, std::span<const Vec2> truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw std::invalid_argument("ade: horizon mismatch (" + std::to_string(pred.size()) + " vs " +
                                std::to_string(truth.size()) + ")");
  double acc = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) acc += distance(pred[t], truth[t]);
  return acc / static_cast<double>(pred.size());
}

inline double fde(std::span<const Vec2> pred, std::span<const Vec2> truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw std::invalid_argument("fde: horizon mismatch (" + std::to_string(pred.size()) + " vs " +
                                std::to_string(truth.size()) + ")");
  return distance(pred.back(), truth.back());
}

inline constexpr std::size_t kSecondMarks = 4;

/// 1-based frame nearest to `seconds` after the last observation (half
/// frames round up), or nullopt when it lies beyond `horizon`.
inline std::optional<std::size_t> frame_at_seconds(double seconds, double dt, std::size_t horizon) {
  const auto f = static_cast<std::size_t>(std::floor(seconds / dt + 0.5));
  if (f == 0 || f > horizon) return std::nullopt;
  return f;
}

struct InstanceMetrics {
  std::string id;
  double ade = 0.0;
  double fde = 0.0;
  double min_ade_k = 0.0;
  double min_fde_k = 0.0;
  std::size_t k = 0;
  std::array<std::optional<double>, kSecondMarks> fde_at{};  // 1s..4s
};

struct MetricsReport {
  std::string units = "m";
  std::size_t count = 0;
  std::size_t k = 0;
  double ade = 0.0;
  double fde = 0.0;
  double min_ade_k = 0.0;
  double min_fde_k = 0.0;
  std::array<std::optional<double>, kSecondMarks> fde_at{};
  std::vector<InstanceMetrics> per_instance;
};

/// `single` is the designated prediction; `samples` the k-set for min-of-k.
inline InstanceMetrics compute_instance_metrics(std::string id, std::span<const Vec2> single,
                                                const std::vector<std::vector<Vec2>>& samples,
                                                std::span<const Vec2> truth, double dt) {
  if (samples.empty()) throw std::invalid_argument("compute_metrics: no samples for '" + id + "'");
  InstanceMetrics m;
  m.id = std::move(id);
  m.ade = ade(single, truth);
  m.fde = fde(single, truth);
  m.k = samples.size();
  m.min_ade_k = std::numeric_limits<double>::infinity();
  m.min_fde_k = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) {
    m.min_ade_k = std::min(m.min_ade_k, ade(s, truth));
    m.min_fde_k = std::min(m.min_fde_k, fde(s, truth));
  }
  for (std::size_t i = 0; i < kSecondMarks; ++i)
    if (auto f = frame_at_seconds(static_cast<double>(i + 1), dt, truth.size()))
      m.fde_at[i] = distance(single[*f - 1], truth[*f - 1]);
  return m;
}

/// Averages per-instance metrics; per-second FDE averages only over
/// instances whose horizon reaches that mark.
inline MetricsReport aggregate_metrics(std::vector<InstanceMetrics> per_instance, std::string units = "m") {
  MetricsReport r;
  r.units = std::move(units);
  r.count = per_instance.size();
  if (r.count == 0) return r;
  std::array<double, kSecondMarks> acc{};
  std::array<std::size_t, kSecondMarks> n{};
  r.k = per_instance.front().k;
  for (const auto& m : per_instance) {
    r.ade += m.ade;
    r.fde += m.fde;
    r.min_ade_k += m.min_ade_k;
    r.min_fde_k += m.min_fde_k;
    for (std::size_t i = 0; i < kSecondMarks; ++i)
      if (m.fde_at[i]) {
        acc[i] += *m.fde_at[i];
        ++n[i];
      }
  }
  const double c = static_cast<double>(r.count);
  r.ade /= c;
  r.fde /= c;
  r.min_ade_k /= c;
  r.min_fde_k /= c;
  for (std::size_t i = 0; i < kSecondMarks; ++i)
    if (n[i]) r.fde_at[i] = acc[i] / static_cast<double>(n[i]);
  r.per_instance = std::move(per_instance);
  return r;
}

}  // namespace ltn
