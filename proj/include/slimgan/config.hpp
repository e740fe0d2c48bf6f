#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slimgan/data.hpp"
#include "slimgan/losses.hpp"
#include "slimgan/models.hpp"
#include "slimgan/optim.hpp"

namespace slimgan {

inline constexpr int kConfigSchemaVersion = 1;

struct DatasetConfig {
  DatasetKind kind = DatasetKind::ring2d;
  std::size_t samples = 8192;
  double stddev = 0.05;
  std::size_t modes = 8;      // ring2d
  double radius = 2.0;        // ring2d
  std::size_t side = 3;       // grid2d
  double spacing = 2.0;       // grid2d
  std::size_t classes = 4;    // tinyimg
  std::size_t image_size = 16;  // tinyimg

  Dataset make(std::uint64_t seed) const {
    switch (kind) {
      case DatasetKind::ring2d: return make_ring2d(modes, radius, stddev, samples, seed);
      case DatasetKind::grid2d: return make_grid2d(side, spacing, stddev, samples, seed);
      case DatasetKind::tinyimg: return make_tinyimg(classes, image_size, samples, seed, stddev);
    }
    throw PreconditionError("unknown dataset kind");
  }
};

inline GeneratorSpec with_norm(GeneratorSpec spec, NormMode norm) {
  spec.norm = norm;
  return spec;
}

/// Everything a training run depends on. Serialized as one JSON document.
struct TrainConfig {
  std::size_t iterations = 2000;  // generator updates T
  std::size_t d_steps = 1;        // discriminator updates per generator update K
  std::size_t batch_size = 64;
  AdamOptions adam{};
  LossWeights loss{};
  std::vector<double> widths{0.25, 0.5, 0.75, 1.0};
  bool narrow_adversarial = true;  // false: hinge G loss only for the widest width
  bool conditional = false;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  DatasetConfig dataset{};
  std::string generator_preset = "mlp2d";
  GeneratorSpec generator = with_norm(GeneratorSpec::mlp2d(), NormMode::sbn);
  std::string discriminator_preset = "mlp2d";
  DiscriminatorSpec discriminator = DiscriminatorSpec::mlp2d();

  WidthConfig width_config() const {
    if (widths.size() == 1 && widths.front() == 1.0) return WidthConfig::individual();
    return WidthConfig(widths);
  }

  std::size_t num_classes() const {
    if (!conditional) return 0;
    switch (dataset.kind) {
      case DatasetKind::ring2d: return dataset.modes;
      case DatasetKind::grid2d: return dataset.side * dataset.side;
      case DatasetKind::tinyimg: return dataset.classes;
    }
    return 0;
  }

  /// Generator/discriminator specs with the dataset-derived extents filled in.
  GeneratorSpec resolved_generator() const {
    GeneratorSpec g = generator;
    g.out_channels = dataset.kind == DatasetKind::tinyimg ? 1 : 2;
    g.num_classes = num_classes();
    return g;
  }
  DiscriminatorSpec resolved_discriminator() const {
    DiscriminatorSpec d = discriminator;
    d.in_channels = dataset.kind == DatasetKind::tinyimg ? 1 : 2;
    d.num_classes = num_classes();
    d.projection = conditional;
    return d;
  }

  void validate() const;
};

namespace detail {

// Reads keys from one JSON object and rejects any key it was not asked about.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected a JSON object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(field(key), "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
          throw ConfigError(field(key), "expected a non-negative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(field(key), "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(field(key), "expected a string");
      }
      out = v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(field(key), e.what());
    }
  }

  const nlohmann::json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key), "unknown key");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline GeneratorSpec generator_preset(const std::string& name, const std::string& field) {
  if (name == "mlp2d") return GeneratorSpec::mlp2d();
  if (name == "tinyconv") return GeneratorSpec::tinyconv();
  throw ConfigError(field, "unknown generator preset '" + name + "' (expected mlp2d or tinyconv)");
}

inline DiscriminatorSpec discriminator_preset(const std::string& name, const std::string& field) {
  if (name == "mlp2d") return DiscriminatorSpec::mlp2d();
  if (name == "tinyconv") return DiscriminatorSpec::tinyconv();
  throw ConfigError(field, "unknown discriminator preset '" + name + "' (expected mlp2d or tinyconv)");
}

inline void read_dataset(const nlohmann::json& j, DatasetConfig& d) {
  ObjectReader r(j, "dataset");
  std::string kind = to_string(d.kind);
  r.get("kind", kind);
  if (kind == "ring2d") d.kind = DatasetKind::ring2d;
  else if (kind == "grid2d") d.kind = DatasetKind::grid2d;
  else if (kind == "tinyimg") d.kind = DatasetKind::tinyimg;
  else throw ConfigError("dataset.kind", "unknown dataset '" + kind + "' (expected ring2d, grid2d or tinyimg)");
  r.get("samples", d.samples);
  r.get("std", d.stddev);
  r.get("modes", d.modes);
  r.get("radius", d.radius);
  r.get("side", d.side);
  r.get("spacing", d.spacing);
  r.get("classes", d.classes);
  r.get("image_size", d.image_size);
  r.finish();
}

inline void read_generator(const nlohmann::json& j, TrainConfig& cfg) {
  ObjectReader r(j, "generator");
  r.get("preset", cfg.generator_preset);
  GeneratorSpec g = generator_preset(cfg.generator_preset, "generator.preset");
  r.get("latent_dim", g.latent_dim);
  r.get("hidden", g.hidden);
  r.get("base_size", g.base_size);
  r.get("leaky_slope", g.leaky_slope);
  // Training configs normalize with per-width banks unless told otherwise.
  std::string norm = to_string(NormMode::sbn);
  r.get("norm", norm);
  const auto mode = norm_mode_from_string(norm);
  if (!mode) throw ConfigError("generator.norm", "unknown mode '" + norm + "' (expected none, sbn, cbn_naive, scbn)");
  g.norm = *mode;
  std::string output = g.output == OutputActivation::tanh ? "tanh" : "none";
  r.get("output", output);
  if (output != "tanh" && output != "none") throw ConfigError("generator.output", "expected tanh or none");
  g.output = output == "tanh" ? OutputActivation::tanh : OutputActivation::none;
  r.get("per_class_stats", g.per_class_stats);
  r.finish();
  cfg.generator = g;
}

inline void read_discriminator(const nlohmann::json& j, TrainConfig& cfg) {
  ObjectReader r(j, "discriminator");
  r.get("preset", cfg.discriminator_preset);
  DiscriminatorSpec d = discriminator_preset(cfg.discriminator_preset, "discriminator.preset");
  r.get("hidden", d.hidden);
  std::size_t shared = d.shared_count();
  if (r.child("shared_layers")) {
    r.get("shared_layers", shared);
    d.shared_layers = shared;
  }
  std::string heads = d.heads == HeadMode::single ? "single" : "per_width";
  r.get("heads", heads);
  if (heads != "single" && heads != "per_width") throw ConfigError("discriminator.heads", "expected per_width or single");
  d.heads = heads == "single" ? HeadMode::single : HeadMode::per_width;
  r.get("slimmable", d.slimmable);
  r.get("spectral_norm", d.spectral_norm);
  r.get("shared_projection", d.shared_projection);
  r.get("leaky_slope", d.leaky_slope);
  r.finish();
  cfg.discriminator = d;
}

}  // namespace detail

inline void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations", "must be >= 1");
  if (d_steps < 1) throw ConfigError("d_steps", "must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size", "must be >= 2 (batch statistics)");
  if (!(adam.lr > 0.0)) throw ConfigError("lr", "must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("beta1", "must be in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("beta2", "must be in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("adam_eps", "must be positive");
  try {
    loss.validate();
  } catch (const PreconditionError& e) {
    throw ConfigError("lambda", e.what());
  }
  try {
    (void)width_config();
  } catch (const PreconditionError& e) {
    throw ConfigError("widths", e.what());
  }
  if (widths.size() < 2 && loss.distill_mode != DistillMode::off) {
    throw ConfigError("distill_mode", "distillation needs at least two widths");
  }
  if (dataset.samples < batch_size) throw ConfigError("dataset.samples", "must be >= batch_size");
  if (!(dataset.stddev >= 0.0)) throw ConfigError("dataset.std", "must be non-negative");
  const bool image = dataset.kind == DatasetKind::tinyimg;
  if (image != (generator.arch == Arch::conv)) {
    throw ConfigError("generator.preset", "tinyimg needs the tinyconv preset; 2-D datasets need mlp2d");
  }
  if (image != (discriminator.arch == Arch::conv)) {
    throw ConfigError("discriminator.preset", "tinyimg needs the tinyconv preset; 2-D datasets need mlp2d");
  }
  if (image && generator.sample_shape().back() != dataset.image_size) {
    throw ConfigError("dataset.image_size", "does not match the generator output size");
  }
  if (generator.hidden.empty()) throw ConfigError("generator.hidden", "needs at least one layer");
  if (discriminator.hidden.empty()) throw ConfigError("discriminator.hidden", "needs at least one layer");
  for (std::size_t c : generator.hidden) {
    if (c == 0) throw ConfigError("generator.hidden", "channel counts must be positive");
  }
  for (std::size_t c : discriminator.hidden) {
    if (c == 0) throw ConfigError("discriminator.hidden", "channel counts must be positive");
  }
  const bool conditional_norm = generator.norm == NormMode::cbn_naive || generator.norm == NormMode::scbn;
  if (conditional && !conditional_norm) throw ConfigError("generator.norm", "a conditional run needs cbn_naive or scbn");
  if (!conditional && conditional_norm) throw ConfigError("generator.norm", "cbn_naive/scbn need \"conditional\": true");
}

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["iterations"] = c.iterations;
  j["d_steps"] = c.d_steps;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.adam.lr;
  j["beta1"] = c.adam.beta1;
  j["beta2"] = c.adam.beta2;
  j["adam_eps"] = c.adam.eps;
  j["lambda"] = c.loss.lambda;
  j["distill_mode"] = to_string(c.loss.distill_mode);
  j["widths"] = c.widths;
  j["narrow_adversarial"] = c.narrow_adversarial;
  j["conditional"] = c.conditional;
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["dataset"] = {{"kind", to_string(c.dataset.kind)}, {"samples", c.dataset.samples}, {"std", c.dataset.stddev},
                  {"modes", c.dataset.modes},          {"radius", c.dataset.radius},   {"side", c.dataset.side},
                  {"spacing", c.dataset.spacing},      {"classes", c.dataset.classes}, {"image_size", c.dataset.image_size}};
  const auto& g = c.generator;
  j["generator"] = {{"preset", c.generator_preset},
                    {"latent_dim", g.latent_dim},
                    {"hidden", g.hidden},
                    {"base_size", g.base_size},
                    {"leaky_slope", g.leaky_slope},
                    {"norm", to_string(g.norm)},
                    {"output", g.output == OutputActivation::tanh ? "tanh" : "none"},
                    {"per_class_stats", g.per_class_stats}};
  const auto& d = c.discriminator;
  j["discriminator"] = {{"preset", c.discriminator_preset},
                        {"hidden", d.hidden},
                        {"shared_layers", d.shared_count()},
                        {"heads", d.heads == HeadMode::single ? "single" : "per_width"},
                        {"slimmable", d.slimmable},
                        {"spectral_norm", d.spectral_norm},
                        {"shared_projection", d.shared_projection},
                        {"leaky_slope", d.leaky_slope}};
  return j;
}

/// Strict parse: unknown keys and ill-typed values raise ConfigError naming the field.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  detail::ObjectReader r(j, "");
  int version = kConfigSchemaVersion;
  r.get("schema_version", version);
  if (version != kConfigSchemaVersion) {
    throw ConfigError("schema_version", "unsupported version " + std::to_string(version));
  }
  r.get("iterations", c.iterations);
  r.get("d_steps", c.d_steps);
  r.get("batch_size", c.batch_size);
  r.get("lr", c.adam.lr);
  r.get("beta1", c.adam.beta1);
  r.get("beta2", c.adam.beta2);
  r.get("adam_eps", c.adam.eps);
  r.get("lambda", c.loss.lambda);
  std::string mode = to_string(c.loss.distill_mode);
  r.get("distill_mode", mode);
  const auto dm = distill_mode_from_string(mode);
  if (!dm) throw ConfigError("distill_mode", "unknown mode '" + mode + "' (expected stepwise, naive, off)");
  c.loss.distill_mode = *dm;
  r.get("widths", c.widths);
  r.get("narrow_adversarial", c.narrow_adversarial);
  r.get("conditional", c.conditional);
  r.get("seed", c.seed);
  r.get("checkpoint_every", c.checkpoint_every);
  if (const auto* d = r.child("dataset")) detail::read_dataset(*d, c.dataset);
  if (const auto* g = r.child("generator")) detail::read_generator(*g, c);
  if (const auto* d = r.child("discriminator")) detail::read_discriminator(*d, c);
  r.finish();
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return train_config_from_json(j);
}

}  // namespace slimgan
