#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "slimgan/ops.hpp"

namespace slimgan {

enum class DistillMode { stepwise, naive, off };

inline const char* to_string(DistillMode mode) {
  switch (mode) {
    case DistillMode::stepwise: return "stepwise";
    case DistillMode::naive: return "naive";
    case DistillMode::off: return "off";
  }
  return "off";
}

inline std::optional<DistillMode> distill_mode_from_string(const std::string& s) {
  for (DistillMode m : {DistillMode::stepwise, DistillMode::naive, DistillMode::off}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

struct LossWeights {
  double lambda = 20.0;
  DistillMode distill_mode = DistillMode::stepwise;

  void validate() const {
    if (!std::isfinite(lambda) || lambda < 0.0) throw PreconditionError("lambda must be finite and non-negative");
  }
};

/// Discriminator hinge loss, written as a quantity to minimize:
/// mean(relu(1 − real)) + mean(relu(1 + fake)).
inline Tensor hinge_d_loss(const Tensor& real_logits, const Tensor& fake_logits) {
  return add(mean(relu(add_scalar(scale(real_logits, -1.0), 1.0))), mean(relu(add_scalar(fake_logits, 1.0))));
}

/// Generator hinge loss: −mean(fake logits).
inline Tensor hinge_g_loss(const Tensor& fake_logits) { return scale(mean(fake_logits), -1.0); }

namespace detail {

inline void check_distill_inputs(const std::vector<Tensor>& outputs, double lambda) {
  if (outputs.size() < 2) throw PreconditionError("distillation needs outputs from at least two widths");
  if (!std::isfinite(lambda) || lambda < 0.0) throw PreconditionError("lambda must be finite and non-negative");
  for (const auto& o : outputs) {
    if (o.shape() != outputs.front().shape()) {
      throw DimensionError("distillation outputs differ in shape: " + shape_str(o.shape()) + " vs " +
                           shape_str(outputs.front().shape()));
    }
  }
}

template <class TeacherOf>
Tensor distill(const std::vector<Tensor>& outputs, double lambda, TeacherOf teacher_of) {
  check_distill_inputs(outputs, lambda);
  const std::size_t pairs = outputs.size() - 1;
  Tensor total = mse(outputs[0], stop_gradient(outputs[teacher_of(0)]));
  for (std::size_t i = 1; i < pairs; ++i) total = add(total, mse(outputs[i], stop_gradient(outputs[teacher_of(i)])));
  return scale(total, lambda / static_cast<double>(pairs));
}

}  // namespace detail

/// (λ/(N−1)) Σ_i mse(out_i, sg(out_{i+1})) over outputs ordered narrow→wide,
/// all produced from one shared latent batch.
inline Tensor stepwise_distill_loss(const std::vector<Tensor>& outputs, double lambda) {
  return detail::distill(outputs, lambda, [](std::size_t i) { return i + 1; });
}

/// Every narrower output regresses toward sg(widest output).
inline Tensor naive_distill_loss(const std::vector<Tensor>& outputs, double lambda) {
  const std::size_t widest = outputs.size() - 1;
  return detail::distill(outputs, lambda, [widest](std::size_t) { return widest; });
}

inline Tensor distill_loss(DistillMode mode, const std::vector<Tensor>& outputs, double lambda) {
  switch (mode) {
    case DistillMode::stepwise: return stepwise_distill_loss(outputs, lambda);
    case DistillMode::naive: return naive_distill_loss(outputs, lambda);
    case DistillMode::off: break;
  }
  throw PreconditionError("distillation is off");
}

}  // namespace slimgan
