#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_support.hpp"

using namespace slimgan;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(SLIMGAN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_config(const fs::path& p, nlohmann::json j) {
  std::ofstream(p) << j.dump(2);
}

nlohmann::json tiny_json(std::size_t iterations = 4) {
  nlohmann::json j = to_json(slimgan::testing::tiny_config());
  j["iterations"] = iterations;
  return j;
}

class Cli : public ::testing::Test {
 protected:
  slimgan::testing::TempDir dir{"cli"};
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_F(Cli, VersionAndHelpExitZero) {
  EXPECT_EQ(run("--version"), 0);
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("train --help"), 0);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("train --out " + path("x")), 2);
  write_config(dir / "bad.json", {{"iterationz", 3}});
  EXPECT_EQ(run("train --config " + path("bad.json") + " --out " + path("bad_run")), 2);
  EXPECT_EQ(run("train --config " + path("missing.json") + " --out " + path("m")), 2);
}

TEST_F(Cli, TrainWritesTheRunLayout) {
  write_config(dir / "cfg.json", tiny_json());
  ASSERT_EQ(run("train --config " + path("cfg.json") + " --out " + path("run")), 0);
  for (const char* f : {"manifest.json", "metrics.csv", "final.ckpt", "done.json"}) EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  const auto manifest = nlohmann::json::parse(read_text(dir / "run" / "manifest.json"));
  EXPECT_EQ(manifest["config"], tiny_json());
  EXPECT_EQ(manifest["seeds"]["latents"], derive_seed(7, seed_stream::latents));
  EXPECT_EQ(nlohmann::json::parse(read_text(dir / "run" / "done.json"))["status"], "completed");

  // Same config, fresh directory: identical metrics and checkpoint bytes.
  ASSERT_EQ(run("train --config " + path("cfg.json") + " --out " + path("again")), 0);
  EXPECT_EQ(read_text(dir / "run" / "metrics.csv"), read_text(dir / "again" / "metrics.csv"));
  EXPECT_EQ(read_text(dir / "run" / "final.ckpt"), read_text(dir / "again" / "final.ckpt"));

  // A non-empty output directory needs --force.
  EXPECT_EQ(run("train --config " + path("cfg.json") + " --out " + path("run")), 2);
  EXPECT_EQ(run("train --config " + path("cfg.json") + " --out " + path("run") + " --force"), 0);
}

TEST_F(Cli, ResumeContinuesTheMetricStream) {
  nlohmann::json cfg = tiny_json(4);
  cfg["checkpoint_every"] = 2;
  write_config(dir / "cfg.json", cfg);
  ASSERT_EQ(run("train --config " + path("cfg.json") + " --out " + path("full")), 0);
  const fs::path mid = dir / "full" / "checkpoints" / "iter_00000002.ckpt";
  ASSERT_TRUE(fs::exists(mid));
  ASSERT_EQ(run("train --config " + path("cfg.json") + " --out " + path("tail") + " --resume " + mid.string()), 0);
  EXPECT_EQ(read_text(dir / "full" / "final.ckpt"), read_text(dir / "tail" / "final.ckpt"));
  std::istringstream full(read_text(dir / "full" / "metrics.csv")), tail(read_text(dir / "tail" / "metrics.csv"));
  std::vector<std::string> a, b;
  for (std::string line; std::getline(full, line);) a.push_back(line);
  for (std::string line; std::getline(tail, line);) b.push_back(line);
  ASSERT_EQ(a.size(), 5u);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[1], a[3]);
  EXPECT_EQ(b[2], a[4]);

  // Resuming under a different config is refused.
  cfg["lambda"] = 5.0;
  write_config(dir / "other.json", cfg);
  EXPECT_EQ(run("train --config " + path("other.json") + " --out " + path("x") + " --resume " + mid.string()), 2);
}

TEST_F(Cli, SampleAndEval) {
  write_config(dir / "cfg.json", tiny_json(2));
  ASSERT_EQ(run("train --config " + path("cfg.json") + " --out " + path("run")), 0);
  const std::string ckpt = path("run/final.ckpt");

  ASSERT_EQ(run("sample --ckpt " + ckpt + " --width 0.5 --n 10 --out " + path("s.csv")), 0);
  std::istringstream csv(read_text(dir / "s.csv"));
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "x0,x1");
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  EXPECT_EQ(rows, 10u);

  EXPECT_EQ(run("sample --ckpt " + ckpt + " --width 0.6 --out " + path("t.csv")), 2);
  EXPECT_EQ(run("sample --ckpt " + ckpt + " --width 0.5 --class 1 --out " + path("t.csv")), 2);
  EXPECT_EQ(run("sample --ckpt " + ckpt + " --width 0.5 --out " + path("s.csv")), 2);
  EXPECT_EQ(run("sample --ckpt " + path("nothing.ckpt") + " --width 0.5 --out " + path("u.csv")), 1);

  write_config(dir / "eval.json", {{"samples", 200}, {"ic_samples", 50}});
  ASSERT_EQ(run("eval --ckpt " + ckpt + " --config " + path("eval.json") + " --out " + path("report.json")), 0);
  const auto report = nlohmann::json::parse(read_text(dir / "report.json"));
  EXPECT_EQ(report["frechet"].size(), 4u);
  EXPECT_EQ(report["iteration"], 2);
  EXPECT_TRUE(report.contains("mic"));

  std::ofstream(dir / "junk.ckpt") << "garbage";
  EXPECT_EQ(run("eval --ckpt " + path("junk.ckpt") + " --out " + path("r2.json")), 1);
}

TEST_F(Cli, ConditionalSamplingNeedsAClass) {
  nlohmann::json cfg = tiny_json(2);
  cfg["conditional"] = true;
  cfg["dataset"]["kind"] = "grid2d";
  cfg["generator"]["norm"] = "scbn";
  write_config(dir / "cfg.json", cfg);
  ASSERT_EQ(run("train --config " + path("cfg.json") + " --out " + path("run")), 0);
  const std::string ckpt = path("run/final.ckpt");
  EXPECT_EQ(run("sample --ckpt " + ckpt + " --width 1 --out " + path("a.csv")), 2);
  EXPECT_EQ(run("sample --ckpt " + ckpt + " --width 1 --class 9 --out " + path("a.csv")), 2);
  EXPECT_EQ(run("sample --ckpt " + ckpt + " --width 1 --class 4 --out " + path("a.csv")), 0);
}

TEST_F(Cli, AblateOneVariant) {
  write_config(dir / "cfg.json", tiny_json(2));
  write_config(dir / "eval.json", {{"samples", 100}, {"ic_samples", 20}});
  EXPECT_EQ(run("ablate --config " + path("cfg.json") + " --variant nope --out " + path("abl")), 2);
  ASSERT_EQ(run("ablate --config " + path("cfg.json") + " --variant same_d --eval-config " + path("eval.json") +
                " --out " + path("abl")),
            0);
  const auto summary = nlohmann::json::parse(read_text(dir / "abl" / "summary.json"));
  EXPECT_TRUE(summary.contains("same_d"));
  const auto manifest = nlohmann::json::parse(read_text(dir / "abl" / "same_d" / "manifest.json"));
  EXPECT_EQ(manifest["flags"]["heads"], "single");
}

TEST_F(Cli, NonFiniteTrainingExitsOneWithAbortDump) {
  nlohmann::json cfg = tiny_json(50);
  cfg["lr"] = 1e300;
  write_config(dir / "cfg.json", cfg);
  const int code = run("train --config " + path("cfg.json") + " --out " + path("run"));
  ASSERT_EQ(code, 1);
  EXPECT_TRUE(fs::exists(dir / "run" / "abort.ckpt"));
  EXPECT_EQ(nlohmann::json::parse(read_text(dir / "run" / "done.json"))["status"], "aborted");
}
