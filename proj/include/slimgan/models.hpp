#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "slimgan/slim.hpp"

namespace slimgan {

enum class Arch { mlp, conv };
enum class OutputActivation { none, tanh };

/// Slimmable generator layout. For `mlp` every hidden entry is a dense layer.
/// For `conv` the first hidden entry is a dense projection to a
/// hidden[0]×base×base map, every further entry (and the output layer) is a
/// 2× nearest upsample followed by a 3×3 convolution.
struct GeneratorSpec {
  Arch arch = Arch::mlp;
  std::size_t latent_dim = 8;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t out_channels = 2;
  std::size_t base_size = 4;
  double leaky_slope = 0.2;  // 0 gives plain ReLU
  NormMode norm = NormMode::none;
  OutputActivation output = OutputActivation::none;
  std::size_t num_classes = 0;
  bool per_class_stats = false;

  static GeneratorSpec mlp2d() { return {}; }

  static GeneratorSpec tinyconv() {
    GeneratorSpec s;
    s.arch = Arch::conv;
    s.latent_dim = 32;
    s.hidden = {64, 32};
    s.out_channels = 1;
    s.base_size = 4;
    s.leaky_slope = 0.0;
    s.norm = NormMode::sbn;
    s.output = OutputActivation::tanh;
    return s;
  }

  /// Per-sample output extents.
  Shape sample_shape() const {
    if (arch == Arch::mlp) return {out_channels};
    std::size_t side = base_size;
    for (std::size_t i = 0; i < hidden.size(); ++i) side *= 2;
    return {out_channels, side, side};
  }
};

namespace detail {

inline Tensor activate(const Tensor& x, double slope) { return slope == 0.0 ? relu(x) : leaky_relu(x, slope); }

inline void check_labels(const Labels& labels, std::size_t num_classes, const char* who) {
  if (num_classes == 0 && !labels.empty()) throw PreconditionError(std::string(who) + ": unconditional model got a class index");
  if (num_classes > 0 && labels.empty()) throw PreconditionError(std::string(who) + ": conditional model needs a class index");
}

}  // namespace detail

/// One parameter set executable at every width of a WidthConfig. The latent
/// input and the output channels never slim; every hidden extent follows
/// active_channels.
class Generator {
 public:
  Generator(GeneratorSpec spec, WidthConfig widths, Rng& rng) : spec_(std::move(spec)), widths_(std::move(widths)) {
    if (spec_.hidden.empty()) throw PreconditionError("generator needs at least one hidden layer");
    const bool conditional_norm = spec_.norm == NormMode::cbn_naive || spec_.norm == NormMode::scbn;
    if (spec_.num_classes > 0 && !conditional_norm) {
      throw PreconditionError("a class-conditional generator needs cbn_naive or scbn normalization");
    }
    if (spec_.num_classes == 0 && conditional_norm) {
      throw PreconditionError("conditional normalization needs num_classes > 0");
    }
    const std::size_t depth = spec_.hidden.size();
    if (spec_.arch == Arch::mlp) {
      std::size_t in = spec_.latent_dim;
      for (std::size_t j = 0; j < depth; ++j) {
        dense_.emplace_back(in, spec_.hidden[j], SlimSides{j > 0, true}, widths_, rng);
        in = spec_.hidden[j];
      }
      dense_.emplace_back(in, spec_.out_channels, SlimSides{true, false}, widths_, rng);
    } else {
      const std::size_t area = spec_.base_size * spec_.base_size;
      dense_.emplace_back(spec_.latent_dim, spec_.hidden[0], SlimSides{false, true}, widths_, rng, area);
      for (std::size_t j = 1; j < depth; ++j) {
        convs_.emplace_back(spec_.hidden[j - 1], spec_.hidden[j], 3, 1, 1, SlimSides{true, true}, widths_, rng);
      }
      convs_.emplace_back(spec_.hidden.back(), spec_.out_channels, 3, 1, 1, SlimSides{true, false}, widths_, rng);
    }
    if (spec_.norm != NormMode::none) {
      NormOptions options;
      options.per_class_stats = spec_.per_class_stats;
      for (std::size_t j = 0; j < depth; ++j) {
        norms_.emplace_back(spec_.norm, spec_.hidden[j], widths_, spec_.num_classes, options);
      }
    }
  }

  const GeneratorSpec& spec() const { return spec_; }
  const WidthConfig& widths() const { return widths_; }
  std::size_t num_classes() const { return spec_.num_classes; }

  /// z [B×latent_dim] -> [B×out] (mlp) or [B×out×S×S] (conv), for any width.
  Tensor forward(const Tensor& z, std::size_t width_index, const Labels& labels = {}, bool training = true) {
    widths_.check_index(width_index);
    detail::check_labels(labels, spec_.num_classes, "generator");
    if (z.ndim() != 2 || z.dim(1) != spec_.latent_dim) {
      throw DimensionError("generator expects latents [B×" + std::to_string(spec_.latent_dim) + "], got " +
                           shape_str(z.shape()));
    }
    const std::size_t depth = spec_.hidden.size();
    const auto hidden_block = [&](Tensor h, std::size_t j) {
      if (!norms_.empty()) h = norms_[j].forward(h, width_index, labels, training);
      return detail::activate(h, spec_.leaky_slope);
    };

    Tensor h;
    if (spec_.arch == Arch::mlp) {
      h = z;
      for (std::size_t j = 0; j < depth; ++j) h = hidden_block(dense_[j].forward(h, width_index), j);
      h = dense_.back().forward(h, width_index);
    } else {
      const std::size_t base = spec_.base_size;
      h = dense_[0].forward(z, width_index);
      h = reshape(h, {z.dim(0), dense_[0].out_channels(width_index), base, base});
      h = hidden_block(h, 0);
      for (std::size_t j = 1; j < depth; ++j) {
        h = hidden_block(convs_[j - 1].forward(upsample_nearest(h, 2), width_index), j);
      }
      h = convs_.back().forward(upsample_nearest(h, 2), width_index);
    }
    return spec_.output == OutputActivation::tanh ? slimgan::tanh(h) : h;
  }

  NamedTensors parameters() const {
    NamedTensors params, buffers;
    collect(params, buffers);
    return params;
  }
  NamedTensors buffers() const {
    NamedTensors params, buffers;
    collect(params, buffers);
    return buffers;
  }

  /// Scalars read by a width-`i` forward (all classes' banks included).
  std::size_t parameter_count(std::size_t width_index) const {
    std::size_t n = 0;
    for (const auto& l : dense_) n += l.parameter_count(width_index);
    for (const auto& l : convs_) n += l.parameter_count(width_index);
    for (const auto& b : norms_) n += b.parameter_count(width_index);
    return n;
  }
  /// Unique stored learnable scalars.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  std::vector<SlimLinear>& dense_layers() { return dense_; }
  std::vector<SlimConv>& conv_layers() { return convs_; }
  std::vector<NormBank>& norm_banks() { return norms_; }

 private:
  void collect(NamedTensors& params, NamedTensors& buffers) const {
    for (std::size_t j = 0; j < dense_.size(); ++j) dense_[j].collect("dense." + std::to_string(j), params, buffers);
    for (std::size_t j = 0; j < convs_.size(); ++j) convs_[j].collect("conv." + std::to_string(j), params, buffers);
    for (std::size_t j = 0; j < norms_.size(); ++j) norms_[j].collect("norm." + std::to_string(j), params, buffers);
  }

  GeneratorSpec spec_;
  WidthConfig widths_;
  std::vector<SlimLinear> dense_;
  std::vector<SlimConv> convs_;
  std::vector<NormBank> norms_;
};

enum class HeadMode { per_width, single };

/// Multi-head discriminator: `shared_layers` leading layers form a trunk used
/// by every head; the remaining hidden layers and the final scalar output are
/// private to each head. `single` uses one head for every width. `slimmable`
/// instead slims a single discriminator along with the width index.
struct DiscriminatorSpec {
  Arch arch = Arch::mlp;
  std::size_t in_channels = 2;
  std::vector<std::size_t> hidden{64, 64};
  std::optional<std::size_t> shared_layers;  // default: every hidden layer
  HeadMode heads = HeadMode::per_width;
  bool slimmable = false;
  bool spectral_norm = true;
  bool projection = false;
  bool shared_projection = false;
  std::size_t num_classes = 0;
  double leaky_slope = 0.2;

  static DiscriminatorSpec mlp2d() { return {}; }

  static DiscriminatorSpec tinyconv() {
    DiscriminatorSpec s;
    s.arch = Arch::conv;
    s.in_channels = 1;
    s.hidden = {32, 64};
    return s;
  }

  std::size_t shared_count() const { return std::min(shared_layers.value_or(hidden.size()), hidden.size()); }
};

class Discriminator {
 public:
  Discriminator(DiscriminatorSpec spec, WidthConfig widths, Rng& rng) : spec_(std::move(spec)), widths_(std::move(widths)) {
    if (spec_.hidden.empty()) throw PreconditionError("discriminator needs at least one hidden layer");
    if (spec_.projection && spec_.num_classes == 0) throw PreconditionError("projection needs num_classes > 0");
    const std::size_t depth = spec_.hidden.size();
    const std::size_t shared = spec_.slimmable ? depth : spec_.shared_count();
    head_count_ = (spec_.slimmable || spec_.heads == HeadMode::single) ? 1 : widths_.size();

    for (std::size_t j = 0; j < shared; ++j) trunk_.push_back(make_layer(j, rng));
    heads_.resize(head_count_);
    for (auto& head : heads_) {
      for (std::size_t j = shared; j < depth; ++j) head.layers.push_back(make_layer(j, rng));
      head.out.emplace(spec_.hidden.back(), 1, SlimSides{spec_.slimmable, false}, widths_, rng);
      if (spec_.spectral_norm) head.out->enable_spectral_norm(rng);
    }
    if (spec_.projection) {
      const std::size_t tables = spec_.shared_projection ? 1 : head_count_;
      const double bound = 1.0 / std::sqrt(static_cast<double>(spec_.hidden.back()));
      for (std::size_t t = 0; t < tables; ++t) {
        embeddings_.push_back(detail::uniform_tensor({spec_.num_classes, spec_.hidden.back()}, bound, rng, true));
      }
    }
  }

  const DiscriminatorSpec& spec() const { return spec_; }
  std::size_t head_count() const { return head_count_; }
  std::size_t head_for(std::size_t width_index) const { return head_count_ == 1 ? 0 : width_index; }

  /// Logits [B×1] of D_{w_i}. Labels are required exactly when projection is on.
  Tensor forward(const Tensor& x, std::size_t width_index, const Labels& labels = {}, bool training = true) {
    widths_.check_index(width_index);
    detail::check_labels(labels, spec_.projection ? spec_.num_classes : 0, "discriminator");
    Head& head = heads_[head_for(width_index)];
    Tensor h = x;
    for (auto& layer : trunk_) h = detail::activate(run(layer, h, width_index, training), spec_.leaky_slope);
    for (auto& layer : head.layers) h = detail::activate(run(layer, h, width_index, training), spec_.leaky_slope);
    const Tensor features = spec_.arch == Arch::conv ? sum_spatial(h) : h;
    Tensor logits = head.out->forward(features, width_index, training);
    if (spec_.projection) {
      const Labels rows = labels.size() == 1 ? Labels(x.dim(0), labels.front()) : labels;
      if (rows.size() != x.dim(0)) throw PreconditionError("discriminator: label count does not match the batch");
      for (std::size_t c : rows) {
        if (c >= spec_.num_classes) throw PreconditionError("discriminator: class index out of range");
      }
      const Tensor& table = embeddings_[spec_.shared_projection ? 0 : head_for(width_index)];
      const Tensor embed = index_rows(slice_prefix(table, {spec_.num_classes, features.dim(1)}), rows);
      logits = add(logits, row_sum(mul(embed, features)));
    }
    return logits;
  }

  NamedTensors parameters() const {
    NamedTensors params, buffers;
    collect(params, buffers);
    return params;
  }
  NamedTensors buffers() const {
    NamedTensors params, buffers;
    collect(params, buffers);
    return buffers;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  Tensor& embedding(std::size_t table) { return embeddings_.at(table); }

 private:
  using Layer = std::variant<SlimLinear, SlimConv>;
  struct Head {
    std::vector<Layer> layers;
    std::optional<SlimLinear> out;
  };

  Layer make_layer(std::size_t j, Rng& rng) {
    const std::size_t in = j == 0 ? spec_.in_channels : spec_.hidden[j - 1];
    const SlimSides sides{spec_.slimmable && j > 0, spec_.slimmable};
    if (spec_.arch == Arch::mlp) {
      SlimLinear layer(in, spec_.hidden[j], sides, widths_, rng);
      if (spec_.spectral_norm) layer.enable_spectral_norm(rng);
      return layer;
    }
    SlimConv layer(in, spec_.hidden[j], 3, 2, 1, sides, widths_, rng);
    if (spec_.spectral_norm) layer.enable_spectral_norm(rng);
    return layer;
  }

  static Tensor run(Layer& layer, const Tensor& x, std::size_t width_index, bool training) {
    return std::visit([&](auto& l) { return l.forward(x, width_index, training); }, layer);
  }

  void collect(NamedTensors& params, NamedTensors& buffers) const {
    const auto visit_collect = [&](const Layer& layer, const std::string& prefix) {
      std::visit([&](const auto& l) { l.collect(prefix, params, buffers); }, layer);
    };
    for (std::size_t j = 0; j < trunk_.size(); ++j) visit_collect(trunk_[j], "trunk." + std::to_string(j));
    for (std::size_t h = 0; h < heads_.size(); ++h) {
      const std::string prefix = "head." + std::to_string(h);
      for (std::size_t j = 0; j < heads_[h].layers.size(); ++j) {
        visit_collect(heads_[h].layers[j], prefix + ".layer." + std::to_string(j));
      }
      heads_[h].out->collect(prefix + ".out", params, buffers);
    }
    for (std::size_t t = 0; t < embeddings_.size(); ++t) params.push_back({"embed." + std::to_string(t), embeddings_[t]});
  }

  DiscriminatorSpec spec_;
  WidthConfig widths_;
  std::size_t head_count_ = 1;
  std::vector<Layer> trunk_;
  std::vector<Head> heads_;
  std::vector<Tensor> embeddings_;
};

struct ParameterCounts {
  std::vector<std::size_t> by_width;
  std::size_t total = 0;
};

inline ParameterCounts count_parameters(const Generator& g) {
  ParameterCounts counts;
  for (std::size_t i = 0; i < g.widths().size(); ++i) counts.by_width.push_back(g.parameter_count(i));
  counts.total = g.parameter_count();
  return counts;
}

/// Seedable source of i.i.d. standard normal latents (and uniform class labels).
class LatentSampler {
 public:
  LatentSampler(std::size_t latent_dim, std::uint64_t seed) : latent_dim_(latent_dim), engine_(seed) {}

  Tensor sample(std::size_t batch) {
    std::vector<double> values(batch * latent_dim_);
    for (double& v : values) v = normal_(engine_);
    return Tensor({batch, latent_dim_}, std::move(values));
  }

  Labels sample_labels(std::size_t batch, std::size_t num_classes) {
    if (num_classes == 0) return {};
    std::uniform_int_distribution<std::size_t> dist(0, num_classes - 1);
    Labels labels(batch);
    for (auto& c : labels) c = dist(engine_);
    return labels;
  }

  std::size_t latent_dim() const { return latent_dim_; }

  std::string state() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
  }
  void restore(const std::string& state) {
    std::istringstream is(state);
    is >> engine_ >> normal_;
    if (!is) throw FormatError("malformed latent sampler state");
  }

 private:
  std::size_t latent_dim_;
  Rng engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace slimgan
