#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "slimgan/slim.hpp"

namespace slimgan {

enum class DatasetKind { ring2d, grid2d, tinyimg };

inline const char* to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::ring2d: return "ring2d";
    case DatasetKind::grid2d: return "grid2d";
    case DatasetKind::tinyimg: return "tinyimg";
  }
  return "ring2d";
}

using Point2 = std::array<double, 2>;

/// Immutable in-memory sample set. Every sample carries the index of the
/// mixture component (or pattern class) that produced it.
struct Dataset {
  DatasetKind kind = DatasetKind::ring2d;
  Shape sample_shape;
  std::vector<double> samples;  // row-major, size() × numel(sample_shape)
  Labels labels;
  std::size_t num_classes = 0;
  std::vector<Point2> centers;  // mixture means of the 2-D datasets
  std::uint64_t seed = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_numel() const { return shape_numel(sample_shape); }

  Tensor rows(const std::vector<std::size_t>& indices) const {
    const std::size_t d = sample_numel();
    std::vector<double> out(indices.size() * d);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      std::copy_n(samples.begin() + static_cast<std::ptrdiff_t>(indices[i] * d), d,
                  out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    Shape shape{indices.size()};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    return Tensor(std::move(shape), std::move(out));
  }

  Tensor all() const {
    std::vector<std::size_t> idx(size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return rows(idx);
  }
};

namespace detail {

// Mixture samples with labels assigned round-robin so every component holds
// floor(n / modes) or ceil(n / modes) points.
inline Dataset mixture2d(DatasetKind kind, std::vector<Point2> centers, double stddev, std::size_t n,
                         std::uint64_t seed) {
  if (centers.empty()) throw PreconditionError("mixture needs at least one mode");
  if (n == 0) throw PreconditionError("dataset needs at least one sample");
  if (stddev < 0.0) throw PreconditionError("standard deviation must be non-negative");
  Dataset ds;
  ds.kind = kind;
  ds.sample_shape = {2};
  ds.num_classes = centers.size();
  ds.seed = seed;
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  ds.samples.resize(2 * n);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % centers.size();
    ds.labels[i] = k;
    ds.samples[2 * i] = centers[k][0] + stddev * noise(rng);
    ds.samples[2 * i + 1] = centers[k][1] + stddev * noise(rng);
  }
  ds.centers = std::move(centers);
  return ds;
}

}  // namespace detail

/// Gaussian mixture with `n_modes` components at angles 2πk/n_modes on a
/// circle of `radius`.
inline Dataset make_ring2d(std::size_t n_modes = 8, double radius = 2.0, double stddev = 0.05, std::size_t n = 8192,
                           std::uint64_t seed = 0) {
  std::vector<Point2> centers;
  for (std::size_t k = 0; k < n_modes; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_modes);
    centers.push_back({radius * std::cos(angle), radius * std::sin(angle)});
  }
  return detail::mixture2d(DatasetKind::ring2d, std::move(centers), stddev, n, seed);
}

/// side×side Gaussian mixture on a grid centred at the origin; label = mode index.
inline Dataset make_grid2d(std::size_t side = 3, double spacing = 2.0, double stddev = 0.05, std::size_t n = 8192,
                           std::uint64_t seed = 0) {
  std::vector<Point2> centers;
  const double offset = 0.5 * static_cast<double>(side - 1);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      centers.push_back({(static_cast<double>(c) - offset) * spacing, (static_cast<double>(r) - offset) * spacing});
    }
  return detail::mixture2d(DatasetKind::grid2d, std::move(centers), stddev, n, seed);
}

/// Single-channel image_size² images in [−1, 1]: per class an oriented
/// grating (angle πk/C, 2 or 3 cycles per image) plus Gaussian pixel noise.
inline Dataset make_tinyimg(std::size_t n_classes = 4, std::size_t image_size = 16, std::size_t n = 2048,
                            std::uint64_t seed = 0, double noise_std = 0.1) {
  if (n_classes == 0 || image_size == 0 || n == 0) throw PreconditionError("tinyimg needs positive sizes");
  Dataset ds;
  ds.kind = DatasetKind::tinyimg;
  ds.sample_shape = {1, image_size, image_size};
  ds.num_classes = n_classes;
  ds.seed = seed;
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, noise_std);
  const std::size_t area = image_size * image_size;
  ds.samples.resize(n * area);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % n_classes;
    ds.labels[i] = k;
    const double angle = std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_classes);
    const double cycles = 2.0 + static_cast<double>(k % 2);
    for (std::size_t y = 0; y < image_size; ++y)
      for (std::size_t x = 0; x < image_size; ++x) {
        const double u = static_cast<double>(x) / static_cast<double>(image_size);
        const double v = static_cast<double>(y) / static_cast<double>(image_size);
        const double phase = 2.0 * std::numbers::pi * cycles * (u * std::cos(angle) + v * std::sin(angle));
        ds.samples[i * area + y * image_size + x] = std::clamp(0.8 * std::cos(phase) + noise(rng), -1.0, 1.0);
      }
  }
  return ds;
}

struct Batch {
  Tensor x;
  Labels labels;
};

/// Shuffled mini-batches without replacement; reshuffles at every epoch. The
/// last batch of an epoch holds the remainder when size() is not a multiple
/// of the batch size.
class BatchIterator {
 public:
  BatchIterator(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed)
      : dataset_(&dataset), batch_size_(batch_size), engine_(seed) {
    if (batch_size == 0 || batch_size > dataset.size()) {
      throw PreconditionError("batch size " + std::to_string(batch_size) + " must be in [1, " +
                              std::to_string(dataset.size()) + "]");
    }
    order_.resize(dataset.size());
    reshuffle();
  }

  Batch next() {
    if (position_ >= order_.size()) {
      reshuffle();
      ++epoch_;
    }
    const std::size_t end = std::min(order_.size(), position_ + batch_size_);
    std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(position_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    position_ = end;
    Batch batch{dataset_->rows(idx), {}};
    batch.labels.reserve(idx.size());
    for (std::size_t i : idx) batch.labels.push_back(dataset_->labels[i]);
    return batch;
  }

  std::size_t epoch() const { return epoch_; }
  std::size_t batches_per_epoch() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

  struct State {
    std::string engine;
    std::vector<std::size_t> order;
    std::size_t position = 0;
    std::size_t epoch = 0;
  };

  State state() const {
    std::ostringstream os;
    os << engine_;
    return {os.str(), order_, position_, epoch_};
  }

  void restore(const State& s) {
    if (s.order.size() != order_.size()) throw FormatError("batch iterator state does not match the dataset size");
    std::istringstream is(s.engine);
    is >> engine_;
    if (!is) throw FormatError("malformed batch iterator state");
    order_ = s.order;
    position_ = s.position;
    epoch_ = s.epoch;
  }

 private:
  void reshuffle() {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    std::shuffle(order_.begin(), order_.end(), engine_);
    position_ = 0;
  }

  const Dataset* dataset_;
  std::size_t batch_size_;
  Rng engine_;
  std::vector<std::size_t> order_;
  std::size_t position_ = 0;
  std::size_t epoch_ = 0;
};

}  // namespace slimgan
