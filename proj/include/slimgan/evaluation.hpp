#pragma once

#include <cstdint>
#include <filesystem>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slimgan/config.hpp"
#include "slimgan/metrics.hpp"

namespace slimgan {

struct EvalConfig {
  std::size_t samples = 2000;     // generated samples per width
  std::size_t ic_samples = 2000;  // shared latents for the IC matrix
  std::uint64_t seed = 0;
  std::optional<double> capture_radius;  // default: 3 × dataset std
  std::size_t is_splits = 10;
  std::string features = "auto";    // auto | identity | random_net | classifier
  std::string classifier = "auto";  // auto | nearest_mode | mlp | none

  double radius_for(const DatasetConfig& d) const { return capture_radius.value_or(3.0 * d.stddev); }
};

inline EvalConfig eval_config_from_json(const nlohmann::json& j) {
  EvalConfig c;
  detail::ObjectReader r(j, "");
  int version = kConfigSchemaVersion;
  r.get("schema_version", version);
  if (version != kConfigSchemaVersion) throw ConfigError("schema_version", "unsupported version " + std::to_string(version));
  r.get("samples", c.samples);
  r.get("ic_samples", c.ic_samples);
  r.get("seed", c.seed);
  if (r.child("capture_radius")) {
    double radius = 0.0;
    r.get("capture_radius", radius);
    if (!(radius > 0.0)) throw ConfigError("capture_radius", "must be positive");
    c.capture_radius = radius;
  }
  r.get("is_splits", c.is_splits);
  r.get("features", c.features);
  r.get("classifier", c.classifier);
  r.finish();
  if (c.samples < 2) throw ConfigError("samples", "must be >= 2");
  if (c.ic_samples < 1) throw ConfigError("ic_samples", "must be >= 1");
  if (c.is_splits < 1 || c.is_splits > c.samples) throw ConfigError("is_splits", "must be in [1, samples]");
  const auto one_of = [](const std::string& v, std::initializer_list<const char*> options) {
    for (const char* o : options) {
      if (v == o) return true;
    }
    return false;
  };
  if (!one_of(c.features, {"auto", "identity", "random_net", "classifier"})) {
    throw ConfigError("features", "expected auto, identity, random_net or classifier");
  }
  if (!one_of(c.classifier, {"auto", "nearest_mode", "mlp", "none"})) {
    throw ConfigError("classifier", "expected auto, nearest_mode, mlp or none");
  }
  return c;
}

inline EvalConfig load_eval_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  try {
    return eval_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
}

inline nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

/// Evaluation report of a generator against the dataset it was trained on.
inline nlohmann::json evaluate(Generator& g, const Dataset& ds, const DatasetConfig& data_cfg, const EvalConfig& cfg) {
  const bool planar = ds.sample_shape == Shape{2};
  const double radius = cfg.radius_for(data_cfg);
  const std::size_t widths = g.widths().size();

  std::optional<MlpClassifier> trained;
  const auto need_trained = [&] {
    if (!trained) {
      MlpClassifier::Options o;
      o.seed = cfg.seed;
      trained.emplace(ds.sample_numel(), ds.num_classes, o);
      trained->fit(ds);
    }
    return *trained;
  };

  std::string feature_kind = cfg.features == "auto" ? (planar ? "identity" : "random_net") : cfg.features;
  FeatureExtractor phi;
  if (feature_kind == "identity") phi = identity_features(ds.sample_numel());
  else if (feature_kind == "random_net") phi = random_net_features(ds.sample_shape, cfg.seed);
  else phi = need_trained().penultimate();

  std::string classifier_kind = cfg.classifier == "auto" ? (planar ? "nearest_mode" : "mlp") : cfg.classifier;
  std::optional<Classifier> cls;
  if (classifier_kind == "nearest_mode") {
    if (!planar) throw ConfigError("classifier", "nearest_mode needs a 2-D dataset");
    cls = nearest_mode_classifier(ds.centers, radius);
  } else if (classifier_kind == "mlp") {
    cls = need_trained().classifier();
  }

  nlohmann::json report;
  report["widths"] = g.widths().multipliers();
  report["features"] = phi.kind;
  report["classifier"] = cls ? cls->kind : "none";
  report["samples"] = cfg.samples;
  report["seed"] = cfg.seed;

  const GaussianFit real = fit_gaussian(phi(ds.all()));
  nlohmann::json frechet = nlohmann::json::array(), scores = nlohmann::json::array(),
                 coverage = nlohmann::json::array(), class_rates = nlohmann::json::array();
  for (std::size_t i = 0; i < widths; ++i) {
    const Tensor x = generate(g, i, cfg.samples, cfg.seed);
    frechet.push_back(frechet_distance(real, fit_gaussian(phi(x))));
    if (cls) {
      const auto s = inception_score((*cls)(x), cfg.is_splits);
      scores.push_back({{"mean", s.mean}, {"std", s.std}});
    }
    if (planar) {
      const auto mc = mode_coverage(to_matrix(x), ds.centers, radius);
      coverage.push_back({{"modes_hit", mc.modes_hit},
                          {"modes", ds.centers.size()},
                          {"high_quality_fraction", mc.high_quality_fraction}});
      if (g.num_classes() > 0) {
        class_rates.push_back(class_hit_rates(g, i, ds.centers, radius, cfg.samples / g.num_classes() + 1, cfg.seed));
      }
    }
  }
  report["frechet"] = frechet;
  report["inception_score"] = cls ? scores : nlohmann::json(nullptr);
  if (planar) {
    report["capture_radius"] = radius;
    report["mode_coverage"] = coverage;
  }
  if (!class_rates.empty()) report["class_hit_rates"] = class_rates;
  if (widths >= 2) {
    const auto ic = mean_ic(g, phi, cfg.ic_samples, cfg.seed + 1);
    report["ic_matrix"] = matrix_json(ic.ic);
    report["mic"] = ic.mic;
  } else {
    report["ic_matrix"] = matrix_json(Matrix::Zero(1, 1));
    report["mic"] = nullptr;
  }
  const auto counts = count_parameters(g);
  report["parameters"] = {{"by_width", counts.by_width}, {"total", counts.total}};
  return report;
}

/// Writes 2-D samples as CSV with a header row.
inline void write_samples_csv(std::ostream& out, const Tensor& x) {
  const Matrix m = to_matrix(x);
  for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << "x" << c;
  out << '\n';
  char buf[32];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
}

/// Binary PGM (P5) grid of single-channel images in [−1, 1], `columns` per row.
inline void write_pgm_grid(std::ostream& out, const Tensor& images, std::size_t columns = 8) {
  if (images.ndim() != 4 || images.dim(1) != 1) throw DimensionError("PGM grid needs B×1×H×W images");
  const std::size_t n = images.dim(0), h = images.dim(2), w = images.dim(3);
  columns = std::max<std::size_t>(1, std::min(columns, n));
  const std::size_t rows = (n + columns - 1) / columns;
  const std::size_t gh = rows * (h + 1) + 1, gw = columns * (w + 1) + 1;
  std::vector<unsigned char> pixels(gh * gw, 0);
  const auto v = images.data();
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t oy = 1 + (k / columns) * (h + 1), ox = 1 + (k % columns) * (w + 1);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double p = std::clamp((v[(k * h + y) * w + x] + 1.0) * 0.5, 0.0, 1.0);
        pixels[(oy + y) * gw + ox + x] = static_cast<unsigned char>(std::lround(p * 255.0));
      }
  }
  out << "P5\n" << gw << ' ' << gh << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

}  // namespace slimgan
