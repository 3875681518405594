#pragma once

// JSON configuration: one document drives task generation, training and
// analysis. Field errors carry the dotted path of the offending entry.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cicl/model.hpp"
#include "cicl/taskgen.hpp"

namespace cicl {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::invalid_argument(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AnalysisConfig {
  int eval_sequences = 2000;
  int probe_sequences = 1000;
  double probe_train_fraction = 0.8;
  int probe_iterations = 2000;
  double probe_l2 = 1e-4;
  bool include_layer0 = true;
  bool mismatch_differ_in_both = true;
  int savgol_window = 51;
  int savgol_order = 3;
  std::uint64_t seed = 1234;
  int chunk = 64;
};

struct TrainConfig {
  ModelConfig model;
  CurriculumSpec spec;
  PairSplit split{Modulus(59), {}, {}, 0};
  double lr = 7.5e-4;
  int batch = 512;
  std::int64_t total_sequences = 2'000'000;
  std::int64_t checkpoint_every = 0;  // 0: derive 50 evenly spaced checkpoints
  std::uint64_t seed = 0;
  int log_every = 100;
  int heldout_batch = 256;
  AdamConfig adam;
  AnalysisConfig analysis;

  std::int64_t total_steps() const { return total_sequences / batch; }
  std::int64_t checkpoint_interval() const;
  void validate() const;
};

/// Parses a config document. `base_dir` resolves a split given as a file path.
TrainConfig config_from_json(const nlohmann::json& doc,
                             const std::filesystem::path& base_dir = {});
/// Canonical form with the split stored inline.
nlohmann::json config_to_json(const TrainConfig& config);

/// Reads a config file and applies `key.path=value` overrides before parsing.
TrainConfig load_config(const std::filesystem::path& path,
                        const std::vector<std::string>& overrides = {});

nlohmann::json split_to_json(const PairSplit& split);
PairSplit split_from_json(const nlohmann::json& doc, const std::string& path = "split");

/// Applies `key=value` with a dotted key; the value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace cicl
