#pragma once

// Subcommands of the `cicl` tool. Each returns normally on success and throws
// on failure; main() turns exceptions into an error object on stderr.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cicl::cli {

struct CommonOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  std::vector<std::string> sets;
  /// Defaults to <out>/checkpoints/final.ckpt for the analysis commands.
  std::optional<std::filesystem::path> checkpoint;
  /// Sequence layout for analysis; defaults to the config's regime.
  std::optional<std::string> mode;
  bool quiet = false;
};

struct GenOptions : CommonOptions {
  int count = 256;
};

struct TrainOptions : CommonOptions {
  std::optional<std::filesystem::path> resume;
  std::optional<std::int64_t> stop_at;
};

struct EvalOptions : CommonOptions {
  bool oracle = false;
};

struct PlotOptions : CommonOptions {
  std::optional<int> window;
  std::optional<int> order;
};

void cmd_gen(const GenOptions& options);
void cmd_train(const TrainOptions& options);
void cmd_eval(const EvalOptions& options);
void cmd_probe(const EvalOptions& options);
void cmd_attention(const EvalOptions& options);
void cmd_mismatch(const EvalOptions& options);
void cmd_plot(const PlotOptions& options);

/// Machine-readable description of an exception: {"error": {type, message, ...}}.
nlohmann::json error_json(const std::exception& e);
/// Process exit code for an exception type.
int exit_code_for(const std::exception& e);

/// Parses argv and dispatches; returns the exit code. Errors go to `err` as JSON.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cicl::cli
