#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "wordconf/rng.hpp"
#include "wordconf/tensor.hpp"

namespace testing {

using wordconf::Tensor;

inline Tensor random_tensor(wordconf::Rng& rng, wordconf::Shape shape, double sd = 1.0, bool requires_grad = true) {
  std::vector<double> v(wordconf::shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, sd);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Weighted sum so every output element gets a distinct upstream gradient.
inline Tensor weighted_sum(const Tensor& y, const std::vector<double>& w) {
  const Tensor flat = wordconf::reshape(y, {1, y.numel()});
  return wordconf::sum(wordconf::matmul(flat, Tensor({y.numel(), 1}, w)));
}

inline std::vector<double> random_weights(wordconf::Rng& rng, std::size_t n) {
  std::vector<double> w(n);
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return w;
}

// Largest relative error between the analytic gradient of f and a central
// difference with step h, taken per input as ||a - n|| / max(||a||, ||n||).
inline double max_grad_rel_error(std::vector<Tensor>& inputs, const std::function<Tensor(std::vector<Tensor>&)>& f, double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  f(inputs).backward();
  double worst = 0.0;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<double> numeric(t.numel());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = f(inputs).item();
      data[i] = saved - h;
      const double down = f(inputs).item();
      data[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max(std::sqrt(na), std::sqrt(nn));
    worst = std::max(worst, denom < 1e-9 ? std::sqrt(diff) : std::sqrt(diff) / denom);
  }
  return worst;
}

}  // namespace testing
