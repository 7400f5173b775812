#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "meta/tensor.hpp"

namespace meta::testing {

inline constexpr double kFiniteDifferenceStep = 1e-5;
inline constexpr double kGradientTolerance = 1e-4;
inline constexpr double kRelativeFloor = 1e-6;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Values bounded away from zero, for ops with a kink there.
inline Tensor random_nonzero(Shape shape, std::mt19937_64& rng, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sign(rng) ? dist(rng) : -dist(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelativeFloor});
}

// Largest relative error between backward() and central differences over
// every element of every input.
inline double max_gradient_error(std::vector<Tensor> inputs, const std::function<Tensor()>& loss_fn) {
  for (auto& t : inputs) t.zero_grad();
  backward(loss_fn());
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto values = t.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + kFiniteDifferenceStep;
      const double plus = loss_fn().item();
      values[i] = original - kFiniteDifferenceStep;
      const double minus = loss_fn().item();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * kFiniteDifferenceStep);
      worst = std::max(worst, relative_error(analytic[i], numeric));
    }
  }
  return worst;
}

// Contracts an arbitrary tensor to a scalar with fixed random weights so that
// every output element influences the loss differently.
inline Tensor weighted_sum(const Tensor& x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  const Tensor w = random_tensor(x.shape(), rng, false);
  return sum(mul(x, w));
}

}  // namespace meta::testing
