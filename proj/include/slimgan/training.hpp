#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slimgan/checkpoint.hpp"
#include "slimgan/config.hpp"
#include "slimgan/losses.hpp"
#include "slimgan/models.hpp"
#include "slimgan/optim.hpp"

namespace slimgan {

/// Independent 64-bit seed for the stream `tag` of a run seeded with `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32), tag};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

namespace seed_stream {
inline constexpr std::uint32_t init = 1;
inline constexpr std::uint32_t dataset = 2;
inline constexpr std::uint32_t batches = 3;
inline constexpr std::uint32_t latents = 4;
}  // namespace seed_stream

/// One row of the metrics log: losses of one generator iteration. D losses are
/// averaged over the K discriminator phases.
struct MetricsRow {
  std::size_t iteration = 0;
  std::vector<double> d_loss;
  std::vector<double> g_loss;
  double distill_loss = 0.0;
};

inline std::string metrics_header(std::size_t widths) {
  std::string h = "iteration";
  for (std::size_t i = 0; i < widths; ++i) h += ",d_loss_" + std::to_string(i);
  for (std::size_t i = 0; i < widths; ++i) h += ",g_loss_" + std::to_string(i);
  return h + ",distill_loss";
}

inline std::string format_metrics_row(const MetricsRow& row) {
  char buf[40];
  std::string line = std::to_string(row.iteration);
  const auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    line += buf;
  };
  for (double v : row.d_loss) put(v);
  for (double v : row.g_loss) put(v);
  put(row.distill_loss);
  return line;
}

inline constexpr const char* kCheckpointFormat = "slimgan-checkpoint";

/// State of one training run: models, optimizers, data stream and latent
/// stream. Every iteration runs K discriminator phases and one generator
/// phase, each ending in a single optimizer step.
class Trainer {
 public:
  explicit Trainer(TrainConfig config)
      : config_(std::move(config)),
        widths_((config_.validate(), config_.width_config())),
        dataset_(std::make_unique<Dataset>(config_.dataset.make(derive_seed(config_.seed, seed_stream::dataset)))),
        batches_(*dataset_, config_.batch_size, derive_seed(config_.seed, seed_stream::batches)),
        latents_(config_.generator.latent_dim, derive_seed(config_.seed, seed_stream::latents)) {
    Rng init(derive_seed(config_.seed, seed_stream::init));
    generator_ = std::make_unique<Generator>(config_.resolved_generator(), widths_, init);
    discriminator_ = std::make_unique<Discriminator>(config_.resolved_discriminator(), widths_, init);
    opt_g_ = std::make_unique<Adam>(generator_->parameters(), config_.adam);
    opt_d_ = std::make_unique<Adam>(discriminator_->parameters(), config_.adam);
  }

  const TrainConfig& config() const { return config_; }
  const WidthConfig& widths() const { return widths_; }
  const Dataset& dataset() const { return *dataset_; }
  Generator& generator() { return *generator_; }
  Discriminator& discriminator() { return *discriminator_; }
  const Generator& generator() const { return *generator_; }
  const Discriminator& discriminator() const { return *discriminator_; }
  Adam& generator_optimizer() { return *opt_g_; }
  Adam& discriminator_optimizer() { return *opt_d_; }
  std::size_t iteration() const { return iteration_; }
  std::size_t num_classes() const { return config_.num_classes(); }

  /// One discriminator phase on one real batch. Returns the per-width D losses.
  std::vector<double> train_discriminator_step() {
    const Batch real = batches_.next();
    const std::size_t b = config_.batch_size;
    const Labels real_labels = conditional() ? real.labels : Labels{};
    set_trainable(generator_->parameters(), false);
    set_trainable(discriminator_->parameters(), true);
    opt_d_->zero_grad();
    std::vector<double> losses;
    for (std::size_t i = 0; i < widths_.size(); ++i) {
      const Tensor z = latents_.sample(b);
      const Labels fake_labels = latents_.sample_labels(b, num_classes());
      Tensor fake;
      {
        NoGradGuard no_grad;
        fake = generator_->forward(z, i, fake_labels, true);
      }
      Labels labels = real_labels;
      labels.insert(labels.end(), fake_labels.begin(), fake_labels.end());
      const Tensor logits = discriminator_->forward(concat_rows({real.x, fake}), i, labels, true);
      const Tensor loss = hinge_d_loss(index_rows(logits, range(0, real.x.dim(0))),
                                       index_rows(logits, range(real.x.dim(0), real.x.dim(0) + b)));
      check_finite(loss, "discriminator loss at width index " + std::to_string(i));
      loss.backward();
      losses.push_back(loss.item());
    }
    opt_d_->step();
    set_trainable(generator_->parameters(), true);
    return losses;
  }

  struct GeneratorLosses {
    std::vector<double> adversarial;
    double distill = 0.0;
  };

  /// One generator phase: fresh latents per width for the adversarial terms and
  /// one shared latent batch for distillation.
  GeneratorLosses train_generator_step() {
    const std::size_t b = config_.batch_size;
    set_trainable(discriminator_->parameters(), false);
    set_trainable(generator_->parameters(), true);
    opt_g_->zero_grad();
    GeneratorLosses out;
    for (std::size_t i = 0; i < widths_.size(); ++i) {
      const Tensor z = latents_.sample(b);
      const Labels labels = latents_.sample_labels(b, num_classes());
      const Tensor fake = generator_->forward(z, i, labels, true);
      const Tensor loss = hinge_g_loss(discriminator_->forward(fake, i, labels, true));
      check_finite(loss, "generator loss at width index " + std::to_string(i));
      if (adversarial_for(i)) loss.backward();
      out.adversarial.push_back(loss.item());
    }
    const Tensor z_shared = latents_.sample(b);
    const Labels shared_labels = latents_.sample_labels(b, num_classes());
    if (distilling()) {
      std::vector<Tensor> outputs;
      for (std::size_t i = 0; i < widths_.size(); ++i) {
        outputs.push_back(generator_->forward(z_shared, i, shared_labels, true));
      }
      const Tensor loss = distill_loss(config_.loss.distill_mode, outputs, config_.loss.lambda);
      check_finite(loss, "distillation loss");
      loss.backward();
      out.distill = loss.item();
    }
    opt_g_->step();
    set_trainable(discriminator_->parameters(), true);
    return out;
  }

  MetricsRow iterate() {
    MetricsRow row;
    row.d_loss.assign(widths_.size(), 0.0);
    for (std::size_t k = 0; k < config_.d_steps; ++k) {
      const auto d = train_discriminator_step();
      for (std::size_t i = 0; i < d.size(); ++i) row.d_loss[i] += d[i] / static_cast<double>(config_.d_steps);
    }
    auto g = train_generator_step();
    row.g_loss = std::move(g.adversarial);
    row.distill_loss = g.distill;
    row.iteration = ++iteration_;
    return row;
  }

  bool finished() const { return iteration_ >= config_.iterations; }

  Checkpoint checkpoint() const {
    Checkpoint c;
    const auto data = batches_.state();
    c.manifest = {{"format", kCheckpointFormat},
                  {"iteration", iteration_},
                  {"config", to_json(config_)},
                  {"widths", widths_.multipliers()},
                  {"num_classes", num_classes()},
                  {"seed", config_.seed},
                  {"optimizer_steps", {{"generator", opt_g_->steps()}, {"discriminator", opt_d_->steps()}}},
                  {"rng",
                   {{"latent", latents_.state()},
                    {"batches",
                     {{"engine", data.engine}, {"order", data.order}, {"position", data.position}, {"epoch", data.epoch}}}}}};
    store_tensors(c, "G.param.", generator_->parameters());
    store_tensors(c, "G.buffer.", generator_->buffers());
    store_tensors(c, "D.param.", discriminator_->parameters());
    store_tensors(c, "D.buffer.", discriminator_->buffers());
    store_tensors(c, "optG.", opt_g_->state_tensors());
    store_tensors(c, "optD.", opt_d_->state_tensors());
    return c;
  }

  /// Rebuilds a trainer from a checkpoint written by `checkpoint()`.
  static Trainer from_checkpoint(const Checkpoint& c) {
    if (c.manifest.value("format", std::string()) != kCheckpointFormat) {
      throw FormatError("container is not a training checkpoint");
    }
    TrainConfig config;
    try {
      config = train_config_from_json(c.manifest.at("config"));
    } catch (const ConfigError& e) {
      throw FormatError(std::string("checkpoint holds an invalid config: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
    }
    Trainer t(std::move(config));
    t.restore(c);
    return t;
  }

  void restore(const Checkpoint& c) {
    try {
      const auto& m = c.manifest;
      if (m.at("widths").get<std::vector<double>>() != widths_.multipliers()) {
        throw FormatError("checkpoint width list does not match the config");
      }
      load_tensors(c, "G.param.", generator_->parameters());
      load_tensors(c, "G.buffer.", generator_->buffers());
      load_tensors(c, "D.param.", discriminator_->parameters());
      load_tensors(c, "D.buffer.", discriminator_->buffers());
      load_tensors(c, "optG.", opt_g_->state_tensors());
      load_tensors(c, "optD.", opt_d_->state_tensors());
      opt_g_->set_steps(m.at("optimizer_steps").at("generator"));
      opt_d_->set_steps(m.at("optimizer_steps").at("discriminator"));
      latents_.restore(m.at("rng").at("latent"));
      const auto& data = m.at("rng").at("batches");
      batches_.restore({data.at("engine"), data.at("order").get<std::vector<std::size_t>>(), data.at("position"),
                        data.at("epoch")});
      iteration_ = m.at("iteration");
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
    }
  }

 private:
  bool conditional() const { return num_classes() > 0; }
  bool adversarial_for(std::size_t i) const { return config_.narrow_adversarial || i == widths_.widest(); }
  bool distilling() const {
    return config_.loss.distill_mode != DistillMode::off && widths_.size() >= 2 && config_.loss.lambda > 0.0;
  }

  static std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
    std::vector<std::size_t> r;
    for (std::size_t i = begin; i < end; ++i) r.push_back(i);
    return r;
  }

  static void set_trainable(NamedTensors params, bool flag) {
    for (auto& p : params) p.tensor.set_requires_grad(flag);
  }

  void check_finite(const Tensor& loss, const std::string& what) const {
    if (!std::isfinite(loss.item())) {
      throw NonFiniteLossError(what + " is not finite at iteration " + std::to_string(iteration_ + 1));
    }
  }

  TrainConfig config_;
  WidthConfig widths_;
  std::unique_ptr<Dataset> dataset_;
  BatchIterator batches_;
  LatentSampler latents_;
  std::unique_ptr<Generator> generator_;
  std::unique_ptr<Discriminator> discriminator_;
  std::unique_ptr<Adam> opt_g_;
  std::unique_ptr<Adam> opt_d_;
  std::size_t iteration_ = 0;
};

struct TrainCallbacks {
  std::function<void(const MetricsRow&)> on_row;
  std::function<void(const Checkpoint&)> on_checkpoint;  // every checkpoint_every iterations
  std::function<void(const Checkpoint&)> on_abort;       // diagnostic state before rethrowing
};

/// Runs `trainer` until its configured iteration count and returns the final checkpoint.
inline Checkpoint run_training(Trainer& trainer, const TrainCallbacks& callbacks = {}) {
  const std::size_t every = trainer.config().checkpoint_every;
  while (!trainer.finished()) {
    MetricsRow row;
    try {
      row = trainer.iterate();
    } catch (const NonFiniteLossError&) {
      if (callbacks.on_abort) callbacks.on_abort(trainer.checkpoint());
      throw;
    }
    if (callbacks.on_row) callbacks.on_row(row);
    if (every > 0 && row.iteration % every == 0 && !trainer.finished() && callbacks.on_checkpoint) {
      callbacks.on_checkpoint(trainer.checkpoint());
    }
  }
  return trainer.checkpoint();
}

inline Checkpoint train(const TrainConfig& config, const TrainCallbacks& callbacks = {}) {
  Trainer trainer(config);
  return run_training(trainer, callbacks);
}

/// Writes the metrics header followed by every row to `out`.
inline TrainCallbacks csv_logger(std::ostream& out, std::size_t widths) {
  out << metrics_header(widths) << '\n';
  TrainCallbacks cb;
  cb.on_row = [&out](const MetricsRow& row) { out << format_metrics_row(row) << '\n'; };
  return cb;
}

}  // namespace slimgan
