#pragma once

// Checkpoint file layout:
//   8-byte magic "CICLCKPT"
//   u64 little-endian length of the JSON header
//   JSON header {format_version, step, dtype, config, rng, adam, manifest}
//   raw little-endian arrays, in manifest order (parameters, then Adam moments)

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "cicl/config.hpp"
#include "cicl/model.hpp"
#include "cicl/optim.hpp"

namespace cicl {

inline constexpr char kCheckpointMagic[9] = "CICLCKPT";
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
struct TrainingState {
  TrainConfig config;
  std::unique_ptr<Transformer<Scalar>> model;
  nn::AdamState<Scalar> adam;
  std::int64_t step = 0;
  std::string stream_rng;

  /// Fresh model and optimizer for `config` (weights seeded by config.seed).
  static TrainingState initial(const TrainConfig& config);
};

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const TrainingState<Scalar>& state);

/// Loads a checkpoint whose dtype matches Scalar. When `expected` is given the
/// stored model configuration must equal it.
template <typename Scalar>
TrainingState<Scalar> load_checkpoint(const std::filesystem::path& path,
                                      const ModelConfig* expected = nullptr);

/// Reads only the JSON header (validates magic and version).
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

/// Loads a checkpoint of either precision as an analysis-ready model.
std::unique_ptr<SequenceModel> load_model(const std::filesystem::path& path,
                                          const ModelConfig* expected = nullptr);

extern template struct TrainingState<float>;
extern template struct TrainingState<double>;

}  // namespace cicl
