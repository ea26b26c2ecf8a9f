#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wordconf/error.hpp"
#include "wordconf/tensor.hpp"

namespace wordconf {

/// A named trainable tensor. Copying a Parameter copies its values, so model
/// snapshots never alias each other.
struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool f = false) : name(std::move(n)), value(std::move(v)), frozen(f) {}
  Parameter(const Parameter& other) : name(other.name), value(other.value.detach()), frozen(other.frozen) {
    value.set_requires_grad(other.value.requires_grad());
  }
  Parameter& operator=(const Parameter& other) {
    if (this != &other) *this = Parameter(other);
    return *this;
  }
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update over every unfrozen parameter, using the
/// gradients stored on the parameter tensors. Frozen parameters are skipped.
inline void adam_step(std::span<Parameter> params, AdamState& state, double lr) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value.numel(), 0.0);
      state.second_moment.emplace_back(p.value.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ParameterError("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].value.numel()) {
      throw ShapeError("adam_step: moment buffer does not match parameter '" + params[i].name + "'");
    }
    if (!params[i].frozen && !params[i].value.has_grad()) {
      throw Error("adam_step: missing gradient for unfrozen parameter '" + params[i].name + "'");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.frozen) continue;
    auto w = p.value.mutable_data();
    const auto g = p.value.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      if (lr == 0.0) continue;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

/// Linear decay from base_lr at step 0 to exactly zero at total_steps.
struct LrSchedule {
  double base_lr;
  std::int64_t total_steps;

  LrSchedule(double base, std::int64_t total) : base_lr(base), total_steps(total) {
    if (total <= 0) throw ParameterError("LrSchedule: total_steps must be positive");
  }

  double at(std::int64_t step) const {
    const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
    return frac > 0.0 ? base_lr * frac : 0.0;
  }
};

}  // namespace wordconf
