#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cicl/checkpoint.hpp"
#include "cicl/config.hpp"
#include "cicl/model.hpp"
#include "cicl/optim.hpp"
#include "cicl/taskgen.hpp"

namespace cicl {

/// Independent sub-seed for a named stream (splitmix64 of base and stream id).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Training error that records the step at which it happened.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::int64_t step, const std::string& message)
      : std::runtime_error("step " + std::to_string(step) + ": " + message), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

/// Flattened next-token batch: targets[i] = tokens[i+1] within a sequence
/// (-1 at the last position), weights shifted the same way.
struct TokenBatch {
  int batch = 0;
  int seq_len = 0;
  std::vector<int> tokens;
  std::vector<int> targets;
  std::vector<double> weights;
};

TokenBatch pack_batch(const std::vector<SequencePack>& seqs);

struct StepResult {
  double loss = 0.0;
  /// Unweighted mean loss of each y prediction, one entry per exemplar.
  std::vector<double> shot_loss;
};

/// Forward, weighted cross-entropy, backward and one Adam update.
template <typename Scalar>
StepResult train_step(Transformer<Scalar>& model, nn::AdamState<Scalar>& adam,
                      const std::vector<SequencePack>& batch);

/// Same loss accounting as train_step, without touching the parameters.
template <typename Scalar>
StepResult evaluate_loss(const Transformer<Scalar>& model, const std::vector<SequencePack>& batch);

struct MetricsRow {
  std::int64_t step = 0;
  std::int64_t seq_seen = 0;
  double total_loss = 0.0;
  std::vector<double> shot_loss;
  double wall_ms = 0.0;
};

/// Append-only CSV: step,seq_seen,total_loss,shot_00..shot_NN,wall_ms.
std::string metrics_header(int pairs);
std::string format_metrics_row(const MetricsRow& row);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);
/// Keeps the header and the rows with step <= max_step.
void truncate_metrics(const std::filesystem::path& path, std::int64_t max_step);

/// Fixed held-out batch built from eval pairs: curriculum sequences for the
/// curriculum regime, double-exponential vanilla sequences otherwise.
std::vector<SequencePack> heldout_batch(const TrainConfig& config);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  /// Stop (after checkpointing) once this step is reached; simulates an interruption.
  std::optional<std::int64_t> stop_at_step;
  std::function<void(const MetricsRow& train, const MetricsRow& heldout)> on_log;
};

struct TrainResult {
  std::int64_t final_step = 0;
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics_path;
  std::filesystem::path heldout_metrics_path;
};

/// Runs training to config.total_steps() (or stop_at_step), logging to
/// out_dir/metrics.csv and out_dir/metrics_heldout.csv and writing
/// checkpoints under out_dir/checkpoints/.
TrainResult train_loop(const TrainConfig& config, const TrainOptions& options);

}  // namespace cicl
