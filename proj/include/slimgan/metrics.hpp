#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "slimgan/data.hpp"
#include "slimgan/models.hpp"
#include "slimgan/optim.hpp"

namespace slimgan {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Row-major [B×...] tensor flattened to a B×(numel/B) matrix.
inline Matrix to_matrix(const Tensor& t) {
  if (t.ndim() < 1) throw DimensionError("to_matrix: scalar input");
  const std::size_t rows = t.dim(0), cols = t.numel() / rows;
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const auto v = t.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[r * cols + c];
  return m;
}

struct GaussianFit {
  Vector mean;
  Matrix cov;
  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

/// Sample mean and unbiased (1/(n−1)) covariance of the rows of `features`.
inline GaussianFit fit_gaussian(const Matrix& features) {
  if (features.rows() < 2) throw PreconditionError("fit_gaussian needs at least two samples");
  if (!features.allFinite()) throw PreconditionError("fit_gaussian: non-finite features");
  GaussianFit fit;
  fit.mean = features.colwise().mean().transpose();
  const Matrix centered = features.rowwise() - fit.mean.transpose();
  fit.cov = (centered.transpose() * centered) / static_cast<double>(features.rows() - 1);
  fit.cov = 0.5 * (fit.cov + fit.cov.transpose());
  return fit;
}

namespace detail {

// Square root of a symmetric PSD matrix; negative eigenvalues from rounding clamp to 0.
inline Matrix sqrt_psd(const Matrix& a) {
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  const Vector roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

/// ‖μ_a − μ_b‖² + tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2}), clamped at 0.
///
/// tr((Σ_a Σ_b)^{1/2}) is evaluated as tr((Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}); the
/// two matrices share eigenvalues and the latter is symmetric, so both square
/// roots come from symmetric eigendecompositions.
inline double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
  if (a.dim() != b.dim() || a.cov.rows() != b.cov.rows()) {
    throw DimensionError("frechet_distance: fits have dimensions " + std::to_string(a.dim()) + " and " +
                         std::to_string(b.dim()));
  }
  if (!a.mean.allFinite() || !b.mean.allFinite() || !a.cov.allFinite() || !b.cov.allFinite()) {
    throw PreconditionError("frechet_distance: non-finite input");
  }
  const Matrix root_a = detail::sqrt_psd(a.cov);
  const Matrix inner = root_a * b.cov * root_a;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  return std::max(0.0, d);
}

/// Frozen map from samples to feature vectors.
struct FeatureExtractor {
  std::string kind;
  std::size_t dim = 0;
  std::function<Matrix(const Tensor&)> map;

  Matrix operator()(const Tensor& x) const {
    NoGradGuard no_grad;
    return map(x);
  }
};

inline FeatureExtractor identity_features(std::size_t dim) {
  return {"identity", dim, [](const Tensor& x) { return to_matrix(x); }};
}

/// Seeded random network with frozen weights: two 3×3 stride-2 convolutions
/// with sum pooling for image samples, two dense layers for vectors.
inline FeatureExtractor random_net_features(const Shape& sample_shape, std::uint64_t seed, std::size_t width = 16) {
  Rng rng(seed);
  if (sample_shape.size() == 3) {
    const std::size_t cin = sample_shape[0];
    auto k1 = detail::uniform_tensor({width / 2, cin, 3, 3}, 1.0 / std::sqrt(9.0 * static_cast<double>(cin)), rng, false);
    auto k2 = detail::uniform_tensor({width, width / 2, 3, 3}, 1.0 / std::sqrt(9.0 * static_cast<double>(width / 2)), rng,
                                     false);
    return {"random_net", width, [k1, k2](const Tensor& x) {
              const Tensor h = leaky_relu(conv2d(x, k1, 2, 1), 0.2);
              return to_matrix(sum_spatial(leaky_relu(conv2d(h, k2, 2, 1), 0.2)));
            }};
  }
  const std::size_t in = shape_numel(sample_shape);
  auto w1 = detail::uniform_tensor({width, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng, false);
  auto w2 = detail::uniform_tensor({width, width}, 1.0 / std::sqrt(static_cast<double>(width)), rng, false);
  return {"random_net", width, [w1, w2, in](const Tensor& x) {
            const Tensor flat = reshape(x, {x.dim(0), in});
            return to_matrix(leaky_relu(linear(leaky_relu(linear(flat, w1), 0.2), w2), 0.2));
          }};
}

/// Map from samples to class probabilities (rows on the simplex).
struct Classifier {
  std::string kind;
  std::size_t classes = 0;
  std::function<Matrix(const Tensor&)> probabilities;

  Matrix operator()(const Tensor& x) const {
    NoGradGuard no_grad;
    return probabilities(x);
  }
};

/// Soft nearest-centre assignment p(k|x) ∝ exp(−‖x − c_k‖² / (2σ²)) for 2-D mixtures.
inline Classifier nearest_mode_classifier(std::vector<Point2> centers, double sigma) {
  if (centers.empty() || !(sigma > 0.0)) throw PreconditionError("nearest_mode_classifier needs centres and sigma > 0");
  const std::size_t k = centers.size();
  return {"nearest_mode", k, [centers = std::move(centers), sigma](const Tensor& x) {
            const Matrix pts = to_matrix(x);
            Matrix p(pts.rows(), static_cast<Eigen::Index>(centers.size()));
            for (Eigen::Index r = 0; r < pts.rows(); ++r) {
              Vector logits(static_cast<Eigen::Index>(centers.size()));
              for (std::size_t c = 0; c < centers.size(); ++c) {
                const double dx = pts(r, 0) - centers[c][0], dy = pts(r, 1) - centers[c][1];
                logits(static_cast<Eigen::Index>(c)) = -(dx * dx + dy * dy) / (2.0 * sigma * sigma);
              }
              const Vector e = (logits.array() - logits.maxCoeff()).exp();
              p.row(r) = (e / e.sum()).transpose();
            }
            return p;
          }};
}

/// Two-layer MLP classifier trained with cross-entropy on a labelled dataset.
class MlpClassifier {
 public:
  struct Options {
    std::size_t hidden = 64;
    std::size_t epochs = 5;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    std::uint64_t seed = 0;
  };

  MlpClassifier(std::size_t in_features, std::size_t classes, Options options)
      : in_(in_features), classes_(classes), options_(options) {
    Rng rng(options_.seed);
    const double b1 = 1.0 / std::sqrt(static_cast<double>(in_features));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(options_.hidden));
    w1_ = detail::uniform_tensor({options_.hidden, in_features}, b1, rng, true);
    c1_ = detail::uniform_tensor({options_.hidden}, b1, rng, true);
    w2_ = detail::uniform_tensor({classes, options_.hidden}, b2, rng, true);
    c2_ = detail::uniform_tensor({classes}, b2, rng, true);
  }

  /// Trains on every sample of `ds` for the configured number of epochs.
  void fit(const Dataset& ds) {
    if (ds.num_classes != classes_ || ds.sample_numel() != in_) throw PreconditionError("classifier/dataset mismatch");
    AdamOptions adam;
    adam.lr = options_.lr;
    adam.beta1 = 0.9;
    Adam opt({{"w1", w1_}, {"c1", c1_}, {"w2", w2_}, {"c2", c2_}}, adam);
    BatchIterator it(ds, std::min(options_.batch_size, ds.size()), options_.seed + 1);
    const std::size_t steps = options_.epochs * it.batches_per_epoch();
    for (std::size_t s = 0; s < steps; ++s) {
      const Batch batch = it.next();
      opt.zero_grad();
      cross_entropy(logits(batch.x), batch.labels).backward();
      opt.step();
    }
  }

  Tensor hidden(const Tensor& x) const {
    return leaky_relu(linear(reshape(x, {x.dim(0), in_}), w1_, c1_), 0.2);
  }
  Tensor logits(const Tensor& x) const { return linear(hidden(x), w2_, c2_); }

  double accuracy(const Tensor& x, const Labels& labels) const {
    NoGradGuard no_grad;
    const Matrix p = to_matrix(logits(x));
    std::size_t correct = 0;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      Eigen::Index arg = 0;
      p.row(r).maxCoeff(&arg);
      correct += static_cast<std::size_t>(arg) == labels[static_cast<std::size_t>(r)];
    }
    return static_cast<double>(correct) / static_cast<double>(p.rows());
  }

  Classifier classifier() const {
    return {"mlp", classes_, [self = *this](const Tensor& x) { return to_matrix(exp(log_softmax(self.logits(x)))); }};
  }
  FeatureExtractor penultimate() const {
    return {"classifier_penultimate", options_.hidden, [self = *this](const Tensor& x) { return to_matrix(self.hidden(x)); }};
  }

 private:
  std::size_t in_;
  std::size_t classes_;
  Options options_;
  Tensor w1_, c1_, w2_, c2_;
};

struct ScoreSummary {
  double mean = 0.0;
  double std = 0.0;
};

/// exp(mean_x KL(p(y|x) ‖ p(y))) per split, p(y) the split's marginal;
/// mean and population standard deviation over splits.
inline ScoreSummary inception_score(const Matrix& probabilities, std::size_t splits = 10) {
  const auto n = static_cast<std::size_t>(probabilities.rows());
  if (splits == 0 || n < splits) throw PreconditionError("inception_score: need at least one sample per split");
  for (Eigen::Index r = 0; r < probabilities.rows(); ++r) {
    if ((probabilities.row(r).array() < 0.0).any() || std::abs(probabilities.row(r).sum() - 1.0) > 1e-6) {
      throw PreconditionError("inception_score: row " + std::to_string(r) + " is not a probability vector");
    }
  }
  const auto xlogy = [](double x, double y) { return x > 0.0 ? x * std::log(x / y) : 0.0; };
  std::vector<double> scores;
  for (std::size_t s = 0; s < splits; ++s) {
    const std::size_t begin = s * n / splits, end = (s + 1) * n / splits;
    const auto block = probabilities.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
    const Vector marginal = block.colwise().mean().transpose();
    double kl = 0.0;
    for (Eigen::Index r = 0; r < block.rows(); ++r)
      for (Eigen::Index c = 0; c < block.cols(); ++c) kl += xlogy(block(r, c), marginal(c));
    scores.push_back(std::exp(kl / static_cast<double>(block.rows())));
  }
  ScoreSummary out;
  for (double v : scores) out.mean += v / static_cast<double>(scores.size());
  for (double v : scores) out.std += (v - out.mean) * (v - out.mean) / static_cast<double>(scores.size());
  out.std = std::sqrt(out.std);
  return out;
}

/// n samples from G at `width_index` with inference-mode normalization.
/// Latents (and labels, when `labels` is empty for a conditional G) come from
/// a sampler seeded with `seed`, so equal seeds give equal latents at every width.
inline Tensor generate(Generator& g, std::size_t width_index, std::size_t n, std::uint64_t seed, Labels labels = {}) {
  NoGradGuard no_grad;
  LatentSampler sampler(g.spec().latent_dim, seed);
  const Tensor z = sampler.sample(n);
  if (g.num_classes() > 0 && labels.empty()) labels = sampler.sample_labels(n, g.num_classes());
  return g.forward(z, width_index, labels, false);
}

/// Mean over n shared latents of ‖Φ(G_i(z)) − Φ(G_j(z))‖².
inline double inception_consistency(Generator& g, std::size_t i, std::size_t j, const FeatureExtractor& phi,
                                    std::size_t n, std::uint64_t seed) {
  g.widths().check_index(i);
  g.widths().check_index(j);
  if (n == 0) throw PreconditionError("inception_consistency needs n >= 1");
  const Matrix a = phi(generate(g, i, n, seed));
  const Matrix b = phi(generate(g, j, n, seed));
  return (a - b).rowwise().squaredNorm().mean();
}

struct ConsistencyReport {
  Matrix ic;  // N×N, zero diagonal
  double mic = 0.0;
};

/// IC over every ordered width pair and their average.
inline ConsistencyReport mean_ic(Generator& g, const FeatureExtractor& phi, std::size_t n, std::uint64_t seed) {
  const std::size_t widths = g.widths().size();
  if (widths < 2) throw PreconditionError("mean_ic needs at least two widths");
  std::vector<Matrix> features;
  for (std::size_t i = 0; i < widths; ++i) features.push_back(phi(generate(g, i, n, seed)));
  ConsistencyReport out;
  out.ic = Matrix::Zero(static_cast<Eigen::Index>(widths), static_cast<Eigen::Index>(widths));
  double total = 0.0;
  for (std::size_t i = 0; i < widths; ++i)
    for (std::size_t j = 0; j < widths; ++j) {
      if (i == j) continue;
      const double v = (features[i] - features[j]).rowwise().squaredNorm().mean();
      out.ic(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      total += v;
    }
  out.mic = total / static_cast<double>(widths * (widths - 1));
  return out;
}

struct ModeCoverage {
  std::size_t modes_hit = 0;
  double high_quality_fraction = 0.0;
  std::vector<std::size_t> counts;  // samples captured per mode
};

/// A mode counts as hit when at least max(1, n/(10·M)) samples lie within
/// `radius` of its centre.
inline ModeCoverage mode_coverage(const Matrix& samples, const std::vector<Point2>& centers, double radius) {
  if (samples.cols() != 2) throw DimensionError("mode_coverage expects 2-D samples");
  if (centers.empty()) throw PreconditionError("mode_coverage needs at least one centre");
  ModeCoverage out;
  out.counts.assign(centers.size(), 0);
  std::size_t captured = 0;
  const double r2 = radius * radius;
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    bool any = false;
    for (std::size_t c = 0; c < centers.size(); ++c) {
      const double dx = samples(r, 0) - centers[c][0], dy = samples(r, 1) - centers[c][1];
      if (dx * dx + dy * dy <= r2) {
        ++out.counts[c];
        any = true;
      }
    }
    captured += any;
  }
  const auto n = static_cast<std::size_t>(samples.rows());
  const std::size_t threshold = std::max<std::size_t>(1, n / (10 * centers.size()));
  for (std::size_t count : out.counts) out.modes_hit += count >= threshold;
  out.high_quality_fraction = n == 0 ? 0.0 : static_cast<double>(captured) / static_cast<double>(n);
  return out;
}

/// Share of samples generated for class c that land within `radius` of centre c, per class.
inline std::vector<double> class_hit_rates(Generator& g, std::size_t width_index, const std::vector<Point2>& centers,
                                           double radius, std::size_t per_class, std::uint64_t seed) {
  if (g.num_classes() != centers.size()) throw PreconditionError("class_hit_rates: class count does not match centres");
  std::vector<double> rates;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const Matrix x = to_matrix(generate(g, width_index, per_class, seed + c, Labels(per_class, c)));
    std::size_t hit = 0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double dx = x(r, 0) - centers[c][0], dy = x(r, 1) - centers[c][1];
      hit += dx * dx + dy * dy <= radius * radius;
    }
    rates.push_back(static_cast<double>(hit) / static_cast<double>(per_class));
  }
  return rates;
}

}  // namespace slimgan
