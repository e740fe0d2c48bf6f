#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slimgan/config.hpp"

namespace slimgan {

/// Named framework variants for side-by-side comparison. Every variant starts
/// from the base config and changes only discriminator layout, distillation
/// mode and adversarial masking.
inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> names{"slimmable_g", "shared_d",      "same_d",     "slimmable_d",
                                              "distill_only", "naive_distill", "slimgan",    "individual"};
  return names;
}

inline bool is_ablation_variant(const std::string& name) {
  for (const auto& v : ablation_variants()) {
    if (v == name) return true;
  }
  return false;
}

/// Config of one slimmable variant ("individual" is handled by individual_configs).
inline TrainConfig apply_variant(TrainConfig cfg, const std::string& variant) {
  auto& d = cfg.discriminator;
  d.heads = HeadMode::per_width;
  d.slimmable = false;
  cfg.narrow_adversarial = true;
  if (variant == "slimmable_g") {
    d.shared_layers = 0;
    cfg.loss.distill_mode = DistillMode::off;
  } else if (variant == "shared_d") {
    cfg.loss.distill_mode = DistillMode::off;
  } else if (variant == "same_d") {
    d.heads = HeadMode::single;
    cfg.loss.distill_mode = DistillMode::off;
  } else if (variant == "slimmable_d") {
    d.slimmable = true;
    cfg.loss.distill_mode = DistillMode::off;
  } else if (variant == "distill_only") {
    cfg.loss.distill_mode = DistillMode::stepwise;
    cfg.narrow_adversarial = false;
  } else if (variant == "naive_distill") {
    cfg.loss.distill_mode = DistillMode::naive;
  } else if (variant == "slimgan") {
    cfg.loss.distill_mode = DistillMode::stepwise;
  } else {
    throw ConfigError("variant", "unknown ablation variant '" + variant + "'");
  }
  cfg.validate();
  return cfg;
}

/// One single-width config per multiplier of `base`: the generator's hidden
/// extents are the active channel counts of that width; the discriminator is
/// unchanged.
inline std::vector<TrainConfig> individual_configs(const TrainConfig& base) {
  std::vector<TrainConfig> out;
  const WidthConfig widths = base.width_config();
  for (double w : widths.multipliers()) {
    TrainConfig cfg = base;
    cfg.widths = {1.0};
    cfg.loss.distill_mode = DistillMode::off;
    cfg.narrow_adversarial = true;
    cfg.discriminator.heads = HeadMode::per_width;
    cfg.discriminator.slimmable = false;
    for (auto& h : cfg.generator.hidden) h = active_channels(w, h);
    cfg.validate();
    out.push_back(cfg);
  }
  return out;
}

/// Flags that distinguish the variants, recorded in run manifests.
inline nlohmann::json variant_flags(const TrainConfig& cfg) {
  const auto& d = cfg.discriminator;
  return {{"heads", d.heads == HeadMode::single ? "single" : "per_width"},
          {"shared_layers", d.slimmable ? d.hidden.size() : d.shared_count()},
          {"slimmable_discriminator", d.slimmable},
          {"distill_mode", to_string(cfg.loss.distill_mode)},
          {"lambda", cfg.loss.lambda},
          {"narrow_adversarial", cfg.narrow_adversarial},
          {"widths", cfg.widths}};
}

}  // namespace slimgan
