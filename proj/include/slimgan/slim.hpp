#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "slimgan/ops.hpp"

namespace slimgan {

using Rng = std::mt19937_64;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using NamedTensors = std::vector<NamedTensor>;

/// Number of channels active at multiplier `w` of a layer with `full` channels:
/// max(1, round-half-up(w · full)).
inline std::size_t active_channels(double w, std::size_t full) {
  const auto s = static_cast<std::size_t>(std::floor(w * static_cast<double>(full) + 0.5));
  return std::max<std::size_t>(1, s);
}

/// Ordered list of width multipliers w_1 < ... < w_N = 1.
class WidthConfig {
 public:
  WidthConfig() : WidthConfig(std::vector<double>{0.25, 0.5, 0.75, 1.0}) {}

  explicit WidthConfig(std::vector<double> multipliers) : multipliers_(std::move(multipliers)) {
    if (multipliers_.size() < 2) throw PreconditionError("width list needs at least two multipliers");
    validate();
  }

  /// The single-width list [1.0] used for individually trained baselines.
  static WidthConfig individual() {
    WidthConfig cfg;
    cfg.multipliers_ = {1.0};
    return cfg;
  }

  std::size_t size() const { return multipliers_.size(); }
  double operator[](std::size_t i) const { return multipliers_.at(i); }
  const std::vector<double>& multipliers() const { return multipliers_; }
  std::size_t widest() const { return multipliers_.size() - 1; }

  std::size_t channels(std::size_t width_index, std::size_t full) const {
    check_index(width_index);
    return active_channels(multipliers_[width_index], full);
  }

  void check_index(std::size_t width_index) const {
    if (width_index >= multipliers_.size()) {
      throw PreconditionError("width index " + std::to_string(width_index) + " out of range for " +
                              std::to_string(multipliers_.size()) + " widths");
    }
  }

  std::optional<std::size_t> index_of(double w) const {
    for (std::size_t i = 0; i < multipliers_.size(); ++i) {
      if (std::abs(multipliers_[i] - w) < 1e-9) return i;
    }
    return std::nullopt;
  }

  friend bool operator==(const WidthConfig&, const WidthConfig&) = default;

 private:
  void validate() const {
    for (std::size_t i = 0; i < multipliers_.size(); ++i) {
      const double w = multipliers_[i];
      if (!(w > 0.0 && w <= 1.0)) throw PreconditionError("width multiplier outside (0, 1]: " + std::to_string(w));
      if (i > 0 && !(w > multipliers_[i - 1])) throw PreconditionError("width multipliers must strictly increase");
    }
    if (multipliers_.back() != 1.0) throw PreconditionError("the last width multiplier must be 1.0");
  }

  std::vector<double> multipliers_;
};

namespace detail {

inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng, bool requires_grad) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

inline Tensor random_unit_vector(std::size_t n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> values(n);
  double norm = 0.0;
  for (double& v : values) {
    v = dist(rng);
    norm += v * v;
  }
  norm = std::max(std::sqrt(norm), 1e-12);
  for (double& v : values) v /= norm;
  return Tensor({n}, std::move(values));
}

inline void normalize_in_place(std::vector<double>& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::max(std::sqrt(norm), 1e-12);
  for (double& x : v) x /= norm;
}

}  // namespace detail

/// Divides a [rows×cols] weight by its leading singular value estimate
/// σ̂ = uᵀWv. With `update_state` one power-iteration step refreshes `u`
/// first. u and v are constants for differentiation; σ̂ stays a function of W.
/// σ̂ is floored at 1e-12.
inline Tensor spectral_normalize(const Tensor& weight, Tensor& u, bool update_state) {
  if (weight.ndim() != 2 || u.ndim() != 1 || u.dim(0) != weight.dim(0)) {
    throw DimensionError("spectral_normalize: weight " + shape_str(weight.shape()) + " with state " +
                         shape_str(u.shape()));
  }
  const std::size_t rows = weight.dim(0), cols = weight.dim(1);
  const auto w = weight.data();
  std::vector<double> uv(u.data().begin(), u.data().end());
  std::vector<double> v(cols, 0.0);
  const auto refresh_v = [&] {
    std::fill(v.begin(), v.end(), 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) v[c] += w[r * cols + c] * uv[r];
    detail::normalize_in_place(v);
  };
  refresh_v();
  if (update_state) {
    std::fill(uv.begin(), uv.end(), 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) uv[r] += w[r * cols + c] * v[c];
    detail::normalize_in_place(uv);
    std::copy(uv.begin(), uv.end(), u.mutable_data().begin());
  }

  std::vector<double> outer(rows * cols);
  double sigma = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      outer[r * cols + c] = uv[r] * v[c];
      sigma += w[r * cols + c] * outer[r * cols + c];
    }
  if (sigma < 1e-12) return mul(weight, Tensor::scalar(1.0 / 1e-12));
  const Tensor sigma_t = sum(mul(weight, Tensor({rows, cols}, std::move(outer))));
  return mul(weight, pow_scalar(sigma_t, -1.0));
}

/// Which sides of a layer follow the width multiplier.
struct SlimSides {
  bool input = true;
  bool output = true;
};

/// Dense layer whose narrower widths read leading prefixes of one full-width
/// weight [out×in] and bias [out]. `out_group` > 1 treats every output
/// channel as a contiguous block of rows (dense-to-feature-map layers).
class SlimLinear {
 public:
  SlimLinear(std::size_t in_channels, std::size_t out_channels, SlimSides sides, WidthConfig widths, Rng& rng,
             std::size_t out_group = 1)
      : in_channels_(in_channels),
        out_channels_(out_channels),
        out_group_(out_group),
        sides_(sides),
        widths_(std::move(widths)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels));
    weight_ = detail::uniform_tensor({out_channels * out_group, in_channels}, bound, rng, true);
    bias_ = detail::uniform_tensor({out_channels * out_group}, bound, rng, true);
  }

  std::size_t in_features(std::size_t width_index) const {
    return sides_.input ? widths_.channels(width_index, in_channels_) : in_channels_;
  }
  std::size_t out_channels(std::size_t width_index) const {
    return sides_.output ? widths_.channels(width_index, out_channels_) : out_channels_;
  }
  std::size_t out_features(std::size_t width_index) const { return out_channels(width_index) * out_group_; }

  void enable_spectral_norm(Rng& rng) {
    sn_u_.clear();
    const std::size_t states = slimmed() ? widths_.size() : 1;
    for (std::size_t i = 0; i < states; ++i) sn_u_.push_back(detail::random_unit_vector(out_features(i), rng));
  }
  bool spectral_norm() const { return !sn_u_.empty(); }

  Tensor forward(const Tensor& x, std::size_t width_index, bool training = true) {
    widths_.check_index(width_index);
    const std::size_t in = in_features(width_index), out = out_features(width_index);
    if (x.ndim() != 2 || x.dim(1) != in) {
      throw DimensionError("slim linear at width index " + std::to_string(width_index) + " expects [B×" +
                           std::to_string(in) + "], got " + shape_str(x.shape()));
    }
    Tensor w = slice_prefix(weight_, {out, in});
    if (spectral_norm()) w = spectral_normalize(w, sn_u_[slimmed() ? width_index : 0], training);
    return linear(x, w, slice_prefix(bias_, {out}));
  }

  /// Scalars read by a forward pass at `width_index`.
  std::size_t parameter_count(std::size_t width_index) const {
    return out_features(width_index) * (in_features(width_index) + 1);
  }
  std::size_t parameter_count() const { return weight_.numel() + bias_.numel(); }

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  const SlimSides& sides() const { return sides_; }

  void collect(const std::string& prefix, NamedTensors& params, NamedTensors& buffers) const {
    params.push_back({prefix + ".weight", weight_});
    params.push_back({prefix + ".bias", bias_});
    for (std::size_t i = 0; i < sn_u_.size(); ++i) buffers.push_back({prefix + ".sn_u." + std::to_string(i), sn_u_[i]});
  }

 private:
  bool slimmed() const { return sides_.input || sides_.output; }

  std::size_t in_channels_;
  std::size_t out_channels_;
  std::size_t out_group_;
  SlimSides sides_;
  WidthConfig widths_;
  Tensor weight_;
  Tensor bias_;
  std::vector<Tensor> sn_u_;
};

/// 2-D convolution with prefix-sliced kernel [Cout×Cin×k×k] and bias [Cout].
class SlimConv {
 public:
  SlimConv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size, std::size_t stride,
           std::size_t pad, SlimSides sides, WidthConfig widths, Rng& rng)
      : in_channels_(in_channels),
        out_channels_(out_channels),
        kernel_size_(kernel_size),
        stride_(stride),
        pad_(pad),
        sides_(sides),
        widths_(std::move(widths)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel_size * kernel_size));
    kernel_ = detail::uniform_tensor({out_channels, in_channels, kernel_size, kernel_size}, bound, rng, true);
    bias_ = detail::uniform_tensor({out_channels}, bound, rng, true);
  }

  std::size_t in_channels(std::size_t width_index) const {
    return sides_.input ? widths_.channels(width_index, in_channels_) : in_channels_;
  }
  std::size_t out_channels(std::size_t width_index) const {
    return sides_.output ? widths_.channels(width_index, out_channels_) : out_channels_;
  }

  void enable_spectral_norm(Rng& rng) {
    sn_u_.clear();
    const std::size_t states = slimmed() ? widths_.size() : 1;
    for (std::size_t i = 0; i < states; ++i) sn_u_.push_back(detail::random_unit_vector(out_channels(i), rng));
  }
  bool spectral_norm() const { return !sn_u_.empty(); }

  Tensor forward(const Tensor& x, std::size_t width_index, bool training = true) {
    widths_.check_index(width_index);
    const std::size_t in = in_channels(width_index), out = out_channels(width_index);
    if (x.ndim() != 4 || x.dim(1) != in) {
      throw DimensionError("slim conv at width index " + std::to_string(width_index) + " expects " +
                           std::to_string(in) + " input channels, got " + shape_str(x.shape()));
    }
    Tensor k = slice_prefix(kernel_, {out, in, kernel_size_, kernel_size_});
    if (spectral_norm()) {
      Tensor flat = reshape(k, {out, in * kernel_size_ * kernel_size_});
      flat = spectral_normalize(flat, sn_u_[slimmed() ? width_index : 0], training);
      k = reshape(flat, {out, in, kernel_size_, kernel_size_});
    }
    return add(conv2d(x, k, stride_, pad_), slice_prefix(bias_, {out}));
  }

  std::size_t parameter_count(std::size_t width_index) const {
    return out_channels(width_index) * (in_channels(width_index) * kernel_size_ * kernel_size_ + 1);
  }
  std::size_t parameter_count() const { return kernel_.numel() + bias_.numel(); }

  Tensor& kernel() { return kernel_; }
  Tensor& bias() { return bias_; }
  const Tensor& kernel() const { return kernel_; }
  const Tensor& bias() const { return bias_; }

  void collect(const std::string& prefix, NamedTensors& params, NamedTensors& buffers) const {
    params.push_back({prefix + ".kernel", kernel_});
    params.push_back({prefix + ".bias", bias_});
    for (std::size_t i = 0; i < sn_u_.size(); ++i) buffers.push_back({prefix + ".sn_u." + std::to_string(i), sn_u_[i]});
  }

 private:
  bool slimmed() const { return sides_.input || sides_.output; }

  std::size_t in_channels_;
  std::size_t out_channels_;
  std::size_t kernel_size_;
  std::size_t stride_;
  std::size_t pad_;
  SlimSides sides_;
  WidthConfig widths_;
  Tensor kernel_;
  Tensor bias_;
  std::vector<Tensor> sn_u_;
};

enum class NormMode { none, sbn, cbn_naive, scbn };

inline const char* to_string(NormMode mode) {
  switch (mode) {
    case NormMode::none: return "none";
    case NormMode::sbn: return "sbn";
    case NormMode::cbn_naive: return "cbn_naive";
    case NormMode::scbn: return "scbn";
  }
  return "none";
}

inline std::optional<NormMode> norm_mode_from_string(const std::string& s) {
  for (NormMode m : {NormMode::none, NormMode::sbn, NormMode::cbn_naive, NormMode::scbn}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

struct NormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
  // Normalize each class group of a batch with its own statistics during
  // training. Running statistics stay per width.
  bool per_class_stats = false;
};

/// Per-sample class indices. Either one entry per batch row or a single entry
/// applied to the whole batch.
using Labels = std::vector<std::size_t>;

/// Batch normalization with switchable (per-width), naive conditional
/// (per width × class) or sliceable conditional (per width + per class,
/// sliced to the active channels) affine banks.
///
///   sbn:        y = γ_w ⊙ x̂ + β_w
///   cbn_naive:  y = γ_{w,c} ⊙ x̂ + β_{w,c}
///   scbn:       y = γ_w ⊙ γ_c[:s] ⊙ x̂ + β_w + β_c[:s]
///
/// x̂ is the batch-normalized input in training mode and the running-stat
/// normalized input otherwise. Running mean/var are kept per width index.
class NormBank {
 public:
  NormBank(NormMode mode, std::size_t channels, WidthConfig widths, std::size_t num_classes = 0,
           NormOptions options = {})
      : mode_(mode), channels_(channels), num_classes_(num_classes), widths_(std::move(widths)), options_(options) {
    if (mode_ == NormMode::none) throw PreconditionError("NormBank needs a normalization mode");
    const bool conditional = mode_ == NormMode::cbn_naive || mode_ == NormMode::scbn;
    if (conditional && num_classes_ == 0) throw PreconditionError("conditional normalization needs num_classes >= 1");
    if (!conditional) num_classes_ = 0;
    for (std::size_t i = 0; i < widths_.size(); ++i) {
      const std::size_t s = widths_.channels(i, channels_);
      running_mean_.push_back(Tensor::zeros({s}));
      running_var_.push_back(Tensor::ones({s}));
      if (mode_ == NormMode::cbn_naive) {
        gamma_.push_back(Tensor::ones({num_classes_, s}, true));
        beta_.push_back(Tensor::zeros({num_classes_, s}, true));
      } else {
        gamma_.push_back(Tensor::ones({s}, true));
        beta_.push_back(Tensor::zeros({s}, true));
      }
    }
    if (mode_ == NormMode::scbn) {
      class_gamma_ = Tensor::ones({num_classes_, channels_}, true);
      class_beta_ = Tensor::zeros({num_classes_, channels_}, true);
    }
  }

  NormMode mode() const { return mode_; }
  std::size_t num_classes() const { return num_classes_; }
  bool conditional() const { return num_classes_ > 0; }

  /// (γ, β) pairs: N for sbn, N·C for cbn_naive, N + C for scbn.
  std::size_t bank_count() const {
    switch (mode_) {
      case NormMode::sbn: return widths_.size();
      case NormMode::cbn_naive: return widths_.size() * num_classes_;
      case NormMode::scbn: return widths_.size() + num_classes_;
      case NormMode::none: break;
    }
    return 0;
  }

  std::size_t learnable_scalar_count() const {
    std::size_t total = 0;
    for (const auto& g : gamma_) total += 2 * g.numel();
    if (mode_ == NormMode::scbn) total += class_gamma_.numel() + class_beta_.numel();
    return total;
  }

  /// Learnable scalars reachable at `width_index`, all classes included.
  std::size_t parameter_count(std::size_t width_index) const {
    const std::size_t s = widths_.channels(width_index, channels_);
    switch (mode_) {
      case NormMode::sbn: return 2 * s;
      case NormMode::cbn_naive: return 2 * s * num_classes_;
      case NormMode::scbn: return 2 * s + 2 * s * num_classes_;
      case NormMode::none: break;
    }
    return 0;
  }

  Tensor forward(const Tensor& x, std::size_t width_index, const Labels& labels, bool training) {
    widths_.check_index(width_index);
    const std::size_t s = widths_.channels(width_index, channels_);
    if (x.ndim() < 2 || x.dim(1) != s) {
      throw DimensionError("norm at width index " + std::to_string(width_index) + " expects " + std::to_string(s) +
                           " channels, got " + shape_str(x.shape()));
    }
    const std::size_t batch = x.dim(0);
    const Labels rows = conditional() ? expand_labels(labels, batch) : Labels{};
    if (!conditional() && !labels.empty()) throw PreconditionError("unconditional normalization got class labels");

    const Tensor normalized = training ? normalize_batch(x, width_index, rows) : normalize_running(x, width_index);

    switch (mode_) {
      case NormMode::sbn: return add(mul(normalized, gamma_[width_index]), beta_[width_index]);
      case NormMode::cbn_naive:
        return add(mul(normalized, per_row(index_rows(gamma_[width_index], rows), x)),
                   per_row(index_rows(beta_[width_index], rows), x));
      case NormMode::scbn: {
        const Tensor cg = per_row(index_rows(slice_prefix(class_gamma_, {num_classes_, s}), rows), x);
        const Tensor cb = per_row(index_rows(slice_prefix(class_beta_, {num_classes_, s}), rows), x);
        return add(add(mul(mul(normalized, gamma_[width_index]), cg), beta_[width_index]), cb);
      }
      case NormMode::none: break;
    }
    return normalized;
  }

  Tensor forward(const Tensor& x, std::size_t width_index, bool training) {
    return forward(x, width_index, Labels{}, training);
  }

  Tensor& running_mean(std::size_t width_index) { return running_mean_.at(width_index); }
  Tensor& running_var(std::size_t width_index) { return running_var_.at(width_index); }
  Tensor& gamma(std::size_t width_index) { return gamma_.at(width_index); }
  Tensor& beta(std::size_t width_index) { return beta_.at(width_index); }
  Tensor& class_gamma() { return class_gamma_; }
  Tensor& class_beta() { return class_beta_; }

  void collect(const std::string& prefix, NamedTensors& params, NamedTensors& buffers) const {
    for (std::size_t i = 0; i < widths_.size(); ++i) {
      params.push_back({prefix + ".gamma." + std::to_string(i), gamma_[i]});
      params.push_back({prefix + ".beta." + std::to_string(i), beta_[i]});
    }
    if (mode_ == NormMode::scbn) {
      params.push_back({prefix + ".class_gamma", class_gamma_});
      params.push_back({prefix + ".class_beta", class_beta_});
    }
    for (std::size_t i = 0; i < widths_.size(); ++i) {
      buffers.push_back({prefix + ".running_mean." + std::to_string(i), running_mean_[i]});
      buffers.push_back({prefix + ".running_var." + std::to_string(i), running_var_[i]});
    }
  }

 private:
  Labels expand_labels(const Labels& labels, std::size_t batch) const {
    if (labels.empty()) throw PreconditionError("conditional normalization needs class labels");
    if (labels.size() != 1 && labels.size() != batch) {
      throw PreconditionError("expected 1 or " + std::to_string(batch) + " labels, got " +
                              std::to_string(labels.size()));
    }
    for (std::size_t c : labels) {
      if (c >= num_classes_) {
        throw PreconditionError("class index " + std::to_string(c) + " out of range for " +
                                std::to_string(num_classes_) + " classes");
      }
    }
    return labels.size() == batch ? labels : Labels(batch, labels.front());
  }

  // [B×s] per-sample affine rows, spread over spatial axes for feature maps.
  static Tensor per_row(const Tensor& rows, const Tensor& like) {
    return like.ndim() == 4 ? broadcast_spatial(rows, like.dim(2), like.dim(3)) : rows;
  }

  Tensor standardize(const Tensor& x, const Tensor& mu, const Tensor& var) const {
    return mul(sub(x, mu), pow_scalar(add_scalar(var, options_.eps), -0.5));
  }

  Tensor normalize_batch(const Tensor& x, std::size_t width_index, const Labels& rows) {
    auto [mu, var] = batch_stats(x);
    update_running(width_index, mu, var);
    if (!options_.per_class_stats || rows.empty()) return standardize(x, mu, var);

    // Normalize each class group separately, then restore the batch order.
    std::vector<Labels> groups(num_classes_);
    for (std::size_t r = 0; r < rows.size(); ++r) groups[rows[r]].push_back(r);
    std::vector<Tensor> parts;
    Labels order;
    for (const auto& g : groups) {
      if (g.empty()) continue;
      const Tensor xg = index_rows(x, g);
      auto [gm, gv] = batch_stats(xg);
      parts.push_back(standardize(xg, gm, gv));
      order.insert(order.end(), g.begin(), g.end());
    }
    Labels inverse(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) inverse[order[k]] = k;
    return index_rows(concat_rows(parts), inverse);
  }

  Tensor normalize_running(const Tensor& x, std::size_t width_index) const {
    return standardize(x, running_mean_[width_index].clone(), running_var_[width_index].clone());
  }

  void update_running(std::size_t width_index, const Tensor& mu, const Tensor& var) {
    const double m = options_.momentum;
    auto rm = running_mean_[width_index].mutable_data();
    auto rv = running_var_[width_index].mutable_data();
    for (std::size_t c = 0; c < rm.size(); ++c) {
      rm[c] = (1.0 - m) * rm[c] + m * mu.at(c);
      rv[c] = (1.0 - m) * rv[c] + m * var.at(c);
    }
  }

  NormMode mode_;
  std::size_t channels_;
  std::size_t num_classes_;
  WidthConfig widths_;
  NormOptions options_;
  std::vector<Tensor> gamma_;
  std::vector<Tensor> beta_;
  Tensor class_gamma_;
  Tensor class_beta_;
  std::vector<Tensor> running_mean_;
  std::vector<Tensor> running_var_;
};

}  // namespace slimgan
