// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ltn/random.hpp"
#include "ltn/tensor.hpp"

namespace ltn {

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  // Denominator floor of the relative error, so entries whose true gradient
  // is ~0 are compared on an absolute scale.
  double floor = 1e-3;
  // 0 checks every entry; otherwise a seeded random subset per leaf.
  std::size_t max_entries_per_leaf = 0;
  std::uint64_t seed = 0;
};

struct LeafCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
  bool finite = true;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<LeafCheck> leaves;
  bool passed = true;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& l : leaves) m = std::max(m, l.max_rel_error);
    return m;
  }
  std::vector<std::string> failing() const {
    std::vector<std::string> out;
    for (const auto& l : leaves)
      if (!l.passed) out.push_back(l.name);
    return out;
  }
};

/// Compares analytic gradients of the scalar built by `f` against central
/// finite differences for every leaf in `leaves`.
inline GradCheckReport grad_check(const std::function<Value()>& f, std::vector<Value> leaves,
                                  const GradCheckOptions& opt = {}) {
  for (auto& l : leaves) l.zero_grad();
  {
    Value root = f();
    backward(root);
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& l : leaves) {
    if (l.has_grad())
      analytic.emplace_back(l.grad().begin(), l.grad().end());
    else
      analytic.emplace_back(l.numel(), 0.0);
  }

  auto eval = [&] {
    NoGradGuard ng;
    return f().item();
  };

  GradCheckReport report;
  Rng rng(opt.seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Value& leaf = leaves[li];
    LeafCheck lc;
    lc.name = leaf.name().empty() ? ("leaf#" + std::to_string(li)) : leaf.name();
    std::vector<std::size_t> idx(leaf.numel());
    std::iota(idx.begin(), idx.end(), 0);
    if (opt.max_entries_per_leaf > 0 && idx.size() > opt.max_entries_per_leaf) {
      rng.shuffle(idx);
      idx.resize(opt.max_entries_per_leaf);
    }
    auto data = leaf.mutable_data();
    for (std::size_t i : idx) {
      const double orig = data[i];
      data[i] = orig + opt.step;
      const double fp = eval();
      data[i] = orig - opt.step;
      const double fm = eval();
      data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double a = analytic[li][i];
      ++lc.entries_checked;
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        lc.finite = false;
        lc.passed = false;
        lc.worst_index = i;
        lc.max_rel_error = INFINITY;
        continue;
      }
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
      if (rel > lc.max_rel_error) {
        lc.max_rel_error = rel;
        lc.worst_index = i;
      }
    }
    lc.passed = lc.passed && lc.max_rel_error <= opt.tol;
    report.passed = report.passed && lc.passed;
    report.leaves.push_back(std::move(lc));
  }
  for (auto& l : leaves) l.zero_grad();
  return report;
}

}  // namespace ltn
