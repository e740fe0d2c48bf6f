#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "slimgan/tensor.hpp"

namespace slimgan {

/// Compares reverse-mode gradients of a scalar-valued graph builder against
/// central differences with step `eps`. Returns
///   max over every coordinate of |analytic − numeric| / max(floor, |analytic| + |numeric|).
/// The floor keeps coordinates whose true gradient is zero (a bias feeding a
/// batch norm) from comparing rounding noise against rounding noise; central
/// differences at eps = 1e-5 resolve gradients to roughly 1e-10.
/// `f` must be deterministic; `inputs` are leaves and get requires_grad set.
/// Two-graph form: gradients come from `f`, differences from `reference`.
/// Lets a loss with stop-gradients be checked against a reference in which
/// the stopped values are plain constants.
inline double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                         const std::function<Tensor(const std::vector<Tensor>&)>& reference,
                         std::vector<Tensor> inputs, double eps = 1e-5, double floor = 1e-6) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  f(inputs).backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) {
    analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                       : std::vector<double>(t.numel(), 0.0));
  }

  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = reference(inputs).item();
      values[i] = saved - eps;
      const double minus = reference(inputs).item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max(floor, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
                         double eps = 1e-5, double floor = 1e-6) {
  return grad_check(f, f, std::move(inputs), eps, floor);
}

}  // namespace slimgan
