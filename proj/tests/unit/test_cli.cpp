#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cicl/trainer.hpp"
#include "commands.hpp"
#include "manifest.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cicl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = cicl::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cicl_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json tiny_doc() {
  return json::parse(R"({
    "model": {"layers": 1, "d_model": 16, "heads": 2, "mlp_hidden": 32},
    "spec": {"mode": "curriculum", "m": 4, "n": 4, "pairs": 12},
    "split": {"p": 13, "train_fraction": 0.8, "seed": 7},
    "batch": 8, "total_sequences": 32, "seed": 3, "log_every": 1,
    "analysis": {"eval_sequences": 20, "probe_sequences": 30, "probe_iterations": 30}
  })");
}

fs::path write_config(const fs::path& dir, const json& doc) {
  const auto p = dir / "config_in.json";
  std::ofstream(p) << doc.dump(2);
  return p;
}

TEST(CliGen, DeterministicOutputs) {
  const auto dir = scratch("gen");
  const auto cfg = write_config(dir, tiny_doc());
  ASSERT_EQ(cli({"gen", "--config", cfg.string(), "--out", (dir / "a").string(), "--count", "16", "-q"}).code, 0);
  ASSERT_EQ(cli({"gen", "--config", cfg.string(), "--out", (dir / "b").string(), "--count", "16", "-q"}).code, 0);
  for (const char* f : {"config.json", "split.json", "train_sequences.tsv", "eval_sequences.tsv"}) {
    ASSERT_TRUE(fs::exists(dir / "a" / f)) << f;
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  std::ifstream in(dir / "a" / "train_sequences.tsv");
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 16);
}

TEST(CliGen, BlockBoundsForLargeModulus) {
  const auto dir = scratch("bounds");
  auto doc = tiny_doc();
  doc["spec"] = {{"mode", "curriculum"}, {"m", 10}, {"n", 4}, {"pairs", 24}};
  doc["split"] = {{"p", 59}, {"train_fraction", 0.8}, {"seed", 7}};
  const auto cfg = write_config(dir, doc);
  ASSERT_EQ(cli({"gen", "--config", cfg.string(), "--out", dir.string(), "--count", "8", "-q"}).code, 0);
  std::ifstream in(dir / "train_sequences.tsv");
  std::string header, line;
  std::getline(in, header);
  int n = 0;
  while (std::getline(in, line)) {
    const auto seq = cicl::parse_dump_record(line);
    EXPECT_EQ(seq.tokens.size(), 48u);
    EXPECT_EQ(seq.block_bounds, (std::vector<int>{20, 40}));
    ++n;
  }
  EXPECT_EQ(n, 8);
}

TEST(CliGen, InconsistentSpecIsAConfigError) {
  const auto dir = scratch("badspec");
  auto doc = tiny_doc();
  doc["spec"] = {{"mode", "curriculum"}, {"m", 8}, {"n", 6}, {"pairs", 24}};
  const auto cfg = write_config(dir, doc);
  const auto r = cli({"gen", "--config", cfg.string(), "--out", dir.string(), "-q"});
  EXPECT_EQ(r.code, 3);
  const auto e = json::parse(r.err);
  EXPECT_EQ(e["error"]["type"], "config_error");
  EXPECT_EQ(e["error"]["path"], "spec");
  EXPECT_FALSE(fs::exists(dir / "split.json"));
}

TEST(CliTrain, MissingSplitFileFailsBeforeTraining) {
  const auto dir = scratch("nosplit");
  auto doc = tiny_doc();
  doc["split"] = "does_not_exist.json";
  const auto cfg = write_config(dir, doc);
  const auto r = cli({"train", "--config", cfg.string(), "--out", (dir / "run").string(), "-q"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("split"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "run" / "metrics.csv"));
  EXPECT_FALSE(fs::exists(dir / "run" / "checkpoints"));
}

TEST(CliTrain, SplitFileFromGenIsAccepted) {
  const auto dir = scratch("splitfile");
  const auto cfg = write_config(dir, tiny_doc());
  ASSERT_EQ(cli({"gen", "--config", cfg.string(), "--out", dir.string(), "--count", "2", "-q"}).code, 0);
  auto doc = tiny_doc();
  doc["split"] = "split.json";
  const auto cfg2 = write_config(dir, doc);
  EXPECT_EQ(cli({"train", "--config", cfg2.string(), "--out", (dir / "run").string(), "-q",
                 "--set", "total_sequences=8"}).code,
            0);
}

class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = scratch("run");
    const auto cfg = write_config(dir_, tiny_doc());
    const auto r = cli({"train", "--config", cfg.string(), "--out", (dir_ / "run").string(), "-q"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static fs::path run() { return dir_ / "run"; }
  static inline fs::path dir_;
};

TEST_F(CliRun, MetricsColumnCount) {
  std::ifstream in(run() / "metrics.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  const auto cols = [](const std::string& s) { return std::count(s.begin(), s.end(), ',') + 1; };
  EXPECT_EQ(cols(header), 3 + 12 + 1);
  EXPECT_EQ(cols(row), cols(header));
  EXPECT_EQ(cicl::read_metrics(run() / "metrics.csv").size(), 4u);
}

TEST_F(CliRun, OracleEvalHasNoErrors) {
  const auto out = dir_ / "oracle";
  ASSERT_EQ(cli({"eval", "--oracle", "--config", (run() / "config.json").string(), "--out", out.string(), "-q"}).code, 0);
  std::ifstream in(out / "errors.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "shot,block,errors,eval_size,accuracy");
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string shot, block, errors;
    std::getline(ss, shot, ',');
    std::getline(ss, block, ',');
    std::getline(ss, errors, ',');
    EXPECT_EQ(errors, "0") << line;
    ++rows;
  }
  EXPECT_EQ(rows, 12);
}

TEST_F(CliRun, EvalFromCheckpoint) {
  const auto r = cli({"eval", "--out", run().string(), "-q"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(run() / "errors.csv"));
  EXPECT_TRUE(fs::exists(run() / "last_error_histogram.csv"));
  const auto summary = json::parse(slurp(run() / "eval_summary.json"));
  EXPECT_TRUE(summary.contains("composite_errors"));
}

TEST_F(CliRun, ProbeEmitsOneJsonPerTarget) {
  ASSERT_EQ(cli({"probe", "--out", run().string(), "-q"}).code, 0);
  for (const char* k : {"y", "inner", "base_b", "task_a_output"}) {
    const auto p = run() / (std::string("probe_") + k + ".json");
    ASSERT_TRUE(fs::exists(p)) << k;
    EXPECT_EQ(json::parse(slurp(p))["target"], k);
  }
  EXPECT_TRUE(fs::exists(run() / "probe_grid.svg"));
}

TEST_F(CliRun, MismatchWritesProfile) {
  ASSERT_EQ(cli({"mismatch", "--out", run().string(), "-q"}).code, 0);
  EXPECT_TRUE(fs::exists(run() / "mismatch_errors.csv"));
}

TEST_F(CliRun, PlotAndManifest) {
  ASSERT_EQ(cli({"plot", "--out", run().string(), "--window", "3", "--order", "1", "-q"}).code, 0);
  EXPECT_TRUE(fs::exists(run() / "loss_curves.svg"));
  EXPECT_TRUE(cicl::cli::RunManifest::verify(run()).empty());
  const auto m = json::parse(slurp(run() / "manifest.json"));
  EXPECT_TRUE(m["artifacts"].contains("metrics.csv"));
  EXPECT_TRUE(m["artifacts"].contains("loss_curves.svg"));
  std::ofstream(run() / "loss_curves.svg", std::ios::app) << "tampered";
  EXPECT_EQ(cicl::cli::RunManifest::verify(run()), (std::vector<std::string>{"loss_curves.svg"}));
}

TEST_F(CliRun, CheckpointConfigMismatch) {
  const auto r = cli({"eval", "--out", run().string(), "--set", "model.d_model=32", "-q"});
  EXPECT_EQ(r.code, 4);
  EXPECT_EQ(json::parse(r.err)["error"]["type"], "checkpoint_error");
}

TEST(CliAttention, DefaultConfigGivesSixtyFourMaps) {
  const auto dir = scratch("attention");
  auto doc = tiny_doc();
  doc["model"] = json::object();
  doc["spec"] = {{"mode", "curriculum"}, {"m", 8}, {"n", 8}, {"pairs", 24}};
  doc["split"] = {{"p", 59}, {"train_fraction", 0.8}, {"seed", 7}};
  const auto cfg = write_config(dir, doc);
  const auto r = cli({"attention", "--oracle", "--config", cfg.string(), "--out", dir.string(), "-q"});
  ASSERT_EQ(r.code, 0) << r.err;
  int svgs = 0;
  for (const auto& e : fs::directory_iterator(dir / "attention")) svgs += e.path().extension() == ".svg";
  EXPECT_EQ(svgs, 64);
  EXPECT_TRUE(fs::exists(dir / "attention" / "layer7_head7.svg"));
  EXPECT_TRUE(fs::exists(dir / "attention" / "block_aggregate.csv"));
}

TEST(CliPlot, EmptyMetricsIsAnError) {
  const auto dir = scratch("plot");
  const auto cfg = write_config(dir, tiny_doc());
  ASSERT_EQ(cli({"gen", "--config", cfg.string(), "--out", dir.string(), "--count", "1", "-q"}).code, 0);
  std::ofstream(dir / "metrics.csv") << cicl::metrics_header(12) << '\n';
  const auto r = cli({"plot", "--out", dir.string(), "-q"});
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(fs::exists(dir / "loss_curves.svg"));
}

TEST(CliUsage, UnknownSubcommandAndMissingConfig) {
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  const auto dir = scratch("usage");
  const auto r = cli({"gen", "--config", (dir / "nope.json").string(), "--out", dir.string()});
  EXPECT_EQ(r.code, 3);
}

}  // namespace
