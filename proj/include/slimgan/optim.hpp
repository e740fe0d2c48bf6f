#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "slimgan/slim.hpp"

namespace slimgan {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam step on a single parameter array. `step` is the
/// 1-based index of this update.
inline void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> first_moment,
                        std::span<double> second_moment, std::size_t step, const AdamOptions& opt) {
  if (grad.size() != param.size() || first_moment.size() != param.size() || second_moment.size() != param.size()) {
    throw DimensionError("adam_update: parameter, gradient and moment sizes differ");
  }
  if (step == 0) throw PreconditionError("adam_update: step counter starts at 1");
  const double correction1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    first_moment[i] = opt.beta1 * first_moment[i] + (1.0 - opt.beta1) * g;
    second_moment[i] = opt.beta2 * second_moment[i] + (1.0 - opt.beta2) * g * g;
    const double m_hat = first_moment[i] / correction1;
    const double v_hat = second_moment[i] / correction2;
    param[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
  }
}

/// Adam over a fixed list of named parameters. Parameters without a gradient
/// buffer are skipped, as are their moments.
class Adam {
 public:
  Adam(NamedTensors params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
      first_.push_back(Tensor::zeros(p.tensor.shape()));
      second_.push_back(Tensor::zeros(p.tensor.shape()));
    }
  }

  void step() {
    ++steps_;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = params_[k].tensor;
      if (!p.has_grad()) continue;
      adam_update(p.mutable_data(), p.grad(), first_.at(k).mutable_data(), second_.at(k).mutable_data(), steps_,
                  options_);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t steps() const { return steps_; }
  void set_steps(std::size_t steps) { steps_ = steps; }
  const AdamOptions& options() const { return options_; }
  const NamedTensors& params() const { return params_; }

  /// Moment arrays named "m.<param>" and "v.<param>".
  NamedTensors state_tensors() const {
    NamedTensors out;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      out.push_back({"m." + params_[k].name, first_[k]});
      out.push_back({"v." + params_[k].name, second_[k]});
    }
    return out;
  }

 private:
  NamedTensors params_;
  AdamOptions options_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::size_t steps_ = 0;
};

}  // namespace slimgan
