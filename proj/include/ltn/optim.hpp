// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ltn/random.hpp"
#include "ltn/tensor.hpp"

namespace ltn {

/// Ordered, named collection of trainable leaves.
class ParamSet {
 public:
  void add(Value v) {
    if (!v.defined() || !v.requires_grad())
      throw std::invalid_argument("ParamSet: value '" + (v.defined() ? v.name() : std::string()) +
                                  "' is not a trainable parameter");
    params_.push_back(std::move(v));
  }
  void extend(const ParamSet& other) {
    params_.insert(params_.end(), other.params_.begin(), other.params_.end());
  }
  std::size_t size() const { return params_.size(); }
  const Value& operator[](std::size_t i) const { return params_[i]; }
  Value& operator[](std::size_t i) { return params_[i]; }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }
  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Value> params_;
};

/// Weight matrix [out, in] drawn uniformly from [-1/sqrt(in), 1/sqrt(in)].
inline Value init_weight(Rng& rng, std::size_t out, std::size_t in, std::string name) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> v(out * in);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Value::parameter(Shape{out, in}, std::move(v), std::move(name));
}

inline Value init_bias(std::size_t n, std::string name) {
  return Value::parameter(Shape{n}, std::vector<double>(n, 0.0), std::move(name));
}

struct AdamState {
  double learning_rate = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update over `params`, then zeroes their gradients.
inline void adam_step(ParamSet& params, AdamState& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size())
    throw std::invalid_argument("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                                " parameters, got " + std::to_string(params.size()));
  for (const auto& p : params)
    if (!p.requires_grad() || !p.has_grad())
      throw std::invalid_argument("adam_step: parameter '" + p.name() + "' has no gradient");

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].mutable_data();
    auto grad = params[k].mutable_grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != data.size()) throw std::invalid_argument("adam_step: moment shape drift on '" + params[k].name() + "'");
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      data[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
      grad[i] = 0.0;
    }
  }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_grad_norm(ParamSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double k = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.mutable_grad()) g *= k;
  }
  return norm;
}

}  // namespace ltn
