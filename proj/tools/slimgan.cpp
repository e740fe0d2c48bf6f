// Command-line driver: train, sample, eval, ablate.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "slimgan/slimgan.hpp"

#ifndef SLIMGAN_VERSION
#define SLIMGAN_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace slimgan;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// An output directory may be created, or reused when empty; anything else needs --force.
void prepare_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw UsageError(dir.string() + " is not empty; pass --force to overwrite");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

void prepare_file(const fs::path& file, bool force) {
  if (fs::exists(file) && !force) throw UsageError(file.string() + " exists; pass --force to overwrite");
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

json seeds_json(std::uint64_t seed) {
  return {{"seed", seed},
          {"init", derive_seed(seed, seed_stream::init)},
          {"dataset", derive_seed(seed, seed_stream::dataset)},
          {"batches", derive_seed(seed, seed_stream::batches)},
          {"latents", derive_seed(seed, seed_stream::latents)}};
}

std::string checkpoint_name(std::size_t iteration) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iter_%08zu.ckpt", iteration);
  return buf;
}

// Trains into `dir` and returns the final checkpoint path. Throws
// NonFiniteLossError after writing abort.ckpt.
fs::path train_into(Trainer& trainer, const fs::path& dir, const json& extra_manifest) {
  const auto& cfg = trainer.config();
  fs::create_directories(dir / "checkpoints");
  json manifest = {{"version", SLIMGAN_VERSION},
                   {"started", utc_now()},
                   {"config", to_json(cfg)},
                   {"seeds", seeds_json(cfg.seed)},
                   {"start_iteration", trainer.iteration()},
                   {"flags", variant_flags(cfg)},
                   {"layout",
                    {{"metrics", "metrics.csv"},
                     {"checkpoints", "checkpoints/"},
                     {"final", "final.ckpt"},
                     {"abort", "abort.ckpt"},
                     {"completion", "done.json"}}}};
  manifest.update(extra_manifest);
  write_json(dir / "manifest.json", manifest);

  std::ofstream csv(dir / "metrics.csv");
  if (!csv) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
  TrainCallbacks cb = csv_logger(csv, trainer.widths().size());
  cb.on_checkpoint = [&](const Checkpoint& c) {
    save_checkpoint(c, dir / "checkpoints" / checkpoint_name(c.manifest.at("iteration")));
  };
  cb.on_abort = [&](const Checkpoint& c) {
    csv.flush();
    save_checkpoint(c, dir / "abort.ckpt");
    write_json(dir / "done.json", {{"finished", utc_now()}, {"status", "aborted"}, {"iteration", trainer.iteration()}});
  };
  const Checkpoint final_ckpt = run_training(trainer, cb);
  csv.flush();
  save_checkpoint(final_ckpt, dir / "final.ckpt");
  write_json(dir / "done.json", {{"finished", utc_now()}, {"status", "completed"}, {"iteration", trainer.iteration()}});
  return dir / "final.ckpt";
}

json evaluate_checkpoint(const Checkpoint& ckpt, const EvalConfig& eval) {
  Trainer trainer = Trainer::from_checkpoint(ckpt);
  json report = evaluate(trainer.generator(), trainer.dataset(), trainer.config().dataset, eval);
  report["iteration"] = trainer.iteration();
  return report;
}

int cmd_train(const std::string& config_path, const fs::path& out, const std::string& resume, bool force) {
  std::optional<Trainer> trainer;
  json extra = {{"config_path", config_path}};
  const TrainConfig cfg = load_train_config(config_path);
  if (!resume.empty()) {
    trainer.emplace(Trainer::from_checkpoint(load_checkpoint(resume)));
    if (to_json(trainer->config()) != to_json(cfg)) {
      throw ConfigError("<file>", "config does not match the checkpoint being resumed");
    }
    extra["resumed_from"] = resume;
  } else {
    trainer.emplace(cfg);
  }
  prepare_dir(out, force);
  train_into(*trainer, out, extra);
  std::cout << "trained " << trainer->iteration() << " iterations -> " << (out / "final.ckpt").string() << '\n';
  return kOk;
}

int cmd_sample(const std::string& ckpt_path, double width, std::optional<std::size_t> cls, std::size_t n,
               std::uint64_t seed, const fs::path& out, bool force) {
  Trainer trainer = Trainer::from_checkpoint(load_checkpoint(ckpt_path));
  const auto index = trainer.widths().index_of(width);
  if (!index) {
    std::ostringstream os;
    os << "width " << width << " is not one of the trained widths:";
    for (double w : trainer.widths().multipliers()) os << ' ' << w;
    throw UsageError(os.str());
  }
  const std::size_t classes = trainer.num_classes();
  if (classes > 0 && !cls) throw UsageError("conditional checkpoint: --class is required (0.." + std::to_string(classes - 1) + ")");
  if (classes == 0 && cls) throw UsageError("unconditional checkpoint: --class is not accepted");
  if (cls && *cls >= classes) throw UsageError("--class must be in 0.." + std::to_string(classes - 1));
  if (n == 0) throw UsageError("--n must be positive");
  const Tensor x = generate(trainer.generator(), *index, n, seed, cls ? Labels(n, *cls) : Labels{});
  prepare_file(out, force);
  std::ofstream file(out, std::ios::binary);
  if (!file) throw std::runtime_error("cannot write " + out.string());
  if (x.ndim() == 2) write_samples_csv(file, x);
  else write_pgm_grid(file, x);
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& config_path, const fs::path& out, bool force) {
  const EvalConfig eval = config_path.empty() ? EvalConfig{} : load_eval_config(config_path);
  const json report = evaluate_checkpoint(load_checkpoint(ckpt_path), eval);
  prepare_file(out, force);
  write_json(out, report);
  return kOk;
}

int cmd_ablate(const std::string& config_path, const std::string& variant, const std::string& eval_path,
               const fs::path& out, bool force) {
  const TrainConfig base = load_train_config(config_path);
  const EvalConfig eval = eval_path.empty() ? EvalConfig{} : load_eval_config(eval_path);
  std::vector<std::string> variants;
  if (variant == "all") variants = ablation_variants();
  else if (is_ablation_variant(variant)) variants = {variant};
  else {
    std::string valid;
    for (const auto& v : ablation_variants()) valid += " " + v;
    throw UsageError("unknown variant '" + variant + "'; expected all or one of:" + valid);
  }
  prepare_dir(out, force);
  json summary = json::object();
  for (const auto& name : variants) {
    const fs::path dir = out / name;
    std::cout << "variant " << name << '\n';
    if (name == "individual") {
      json reports = json::array();
      json frechet = json::array();
      for (const TrainConfig& cfg : individual_configs(base)) {
        const double w = static_cast<double>(cfg.generator.hidden.front()) / static_cast<double>(base.generator.hidden.front());
        std::ostringstream sub;
        sub << "hidden_" << cfg.generator.hidden.front();
        Trainer trainer(cfg);
        const fs::path final_path = train_into(trainer, dir / sub.str(), {{"variant", name}, {"width", w}});
        json report = evaluate_checkpoint(load_checkpoint(final_path), eval);
        write_json(dir / sub.str() / "report.json", report);
        frechet.push_back(report["frechet"][0]);
        reports.push_back(report);
      }
      const json combined = {{"variant", name}, {"widths", base.widths}, {"frechet", frechet}, {"runs", reports}};
      write_json(dir / "report.json", combined);
      summary[name] = {{"frechet", frechet}, {"mic", nullptr}};
      continue;
    }
    Trainer trainer(apply_variant(base, name));
    const fs::path final_path = train_into(trainer, dir, {{"variant", name}});
    const json report = evaluate_checkpoint(load_checkpoint(final_path), eval);
    write_json(dir / "report.json", report);
    summary[name] = {{"frechet", report["frechet"]}, {"mic", report["mic"]}};
  }
  write_json(out / "summary.json", summary);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slimmable GAN training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SLIMGAN_VERSION);

  std::string config, out, resume, ckpt, variant = "all", eval_config;
  bool force = false;
  double width = 1.0;
  std::optional<std::size_t> cls;
  std::size_t n = 256;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "Train a slimmable generator");
  train->add_option("--config", config, "Training config (JSON)")->required();
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");
  train->add_flag("--force", force, "Overwrite a non-empty output directory");

  auto* sample = app.add_subcommand("sample", "Draw samples at one width");
  sample->add_option("--ckpt", ckpt, "Checkpoint")->required();
  sample->add_option("--width", width, "Width multiplier")->required();
  sample->add_option("--class", cls, "Class index (conditional checkpoints)");
  sample->add_option("--n", n, "Number of samples");
  sample->add_option("--seed", seed, "Latent seed");
  sample->add_option("--out", out, "Output file (CSV for 2-D samples, PGM for images)")->required();
  sample->add_flag("--force", force, "Overwrite an existing file");

  auto* eval = app.add_subcommand("eval", "Write an evaluation report");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval->add_option("--config", config, "Evaluation config (JSON)");
  eval->add_option("--out", out, "Report file (JSON)")->required();
  eval->add_flag("--force", force, "Overwrite an existing file");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate framework variants");
  ablate->add_option("--config", config, "Base training config (JSON)")->required();
  ablate->add_option("--variant", variant, "Variant name or 'all'");
  ablate->add_option("--eval-config", eval_config, "Evaluation config (JSON)");
  ablate->add_option("--out", out, "Output directory")->required();
  ablate->add_flag("--force", force, "Overwrite a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (*train) return cmd_train(config, out, resume, force);
    if (*sample) return cmd_sample(ckpt, width, cls, n, seed, out, force);
    if (*eval) return cmd_eval(ckpt, config, out, force);
    if (*ablate) return cmd_ablate(config, variant, eval_config, out, force);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsageError;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const NonFiniteLossError& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}
