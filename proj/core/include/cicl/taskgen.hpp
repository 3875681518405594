#pragma once

// Sequence construction for curriculum, vanilla and mismatch contexts.
//
// A sequence of `pairs` exemplars is laid out as x1 y1 x2 y2 ... and
// loss_weight[i] is the weight of predicting tokens[i] from the prefix
// tokens[0..i). Only y positions carry weight unless loss_on_x is set.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cicl/modmath.hpp"

namespace cicl {

using Rng = std::mt19937_64;

enum class SequenceMode {
  curriculum,
  vanilla_double,
  vanilla_single_a,
  vanilla_single_b,
  mismatch,
};

std::string to_string(SequenceMode mode);
SequenceMode parse_sequence_mode(const std::string& name);

struct CurriculumSpec {
  int m = 8;
  int n = 8;
  SequenceMode mode = SequenceMode::curriculum;
  int pairs = 24;
  bool loss_on_x = false;

  int tokens() const { return 2 * pairs; }
  /// Throws std::invalid_argument when the block layout is inconsistent.
  void validate() const;
};

using RootPair = std::pair<std::int64_t, std::int64_t>;

struct PairSplit {
  Modulus p;
  std::vector<RootPair> train_pairs;
  std::vector<RootPair> eval_pairs;
  std::uint64_t seed = 0;
};

/// Per-exemplar probe targets, computed from the parameters of the block the
/// exemplar belongs to.
struct ProbeTarget {
  int y = 0;
  int inner = 0;          // a^x mod (p-1)
  int task_a_output = 0;  // a^x mod p
  int base_b = 0;
  int block_id = 0;
};

struct SequencePack {
  SequenceMode mode = SequenceMode::curriculum;
  TaskParams params;
  std::optional<TaskParams> mismatch_params;
  int m = 0;
  int n = 0;
  std::vector<int> tokens;
  std::vector<double> loss_weight;
  /// Token indices where a new task block starts (excluding 0).
  std::vector<int> block_bounds;
  std::vector<ProbeTarget> probe_targets;

  int pairs() const { return static_cast<int>(tokens.size() / 2); }
  int x_at(int shot) const { return tokens[2 * shot]; }
  int y_at(int shot) const { return tokens[2 * shot + 1]; }
};

PairSplit split_pairs(Modulus p, double train_fraction, std::uint64_t seed);

/// Checks the partition and coverage invariants; throws std::invalid_argument.
void validate_split(const PairSplit& split);

SequencePack build_curriculum_sequence(const TaskParams& params,
                                       const CurriculumSpec& spec, Rng& rng);

enum class VanillaKind { double_exp, single_a, single_b };

SequencePack build_vanilla_sequence(const TaskParams& params, VanillaKind kind,
                                    int pairs, Rng& rng,
                                    bool loss_on_x = false);

SequencePack build_mismatch_sequence(const TaskParams& curr,
                                     const TaskParams& comp,
                                     const CurriculumSpec& spec, Rng& rng);

enum class Regime { curriculum, vanilla, mismatch };

/// Regime implied by a sequence mode: any vanilla_* mode trains on the mixed
/// single/double vanilla stream.
Regime regime_of(SequenceMode mode);

/// Endless deterministic stream of training batches drawn from train pairs.
class BatchStream {
 public:
  BatchStream(PairSplit split, CurriculumSpec spec, int batch_size,
              std::uint64_t rng_seed);

  std::vector<SequencePack> next_batch();
  SequencePack next_sequence();

  const PairSplit& split() const { return split_; }
  const CurriculumSpec& spec() const { return spec_; }
  int batch_size() const { return batch_size_; }

  /// Textual engine state, for checkpointing.
  std::string rng_state() const;
  void set_rng_state(const std::string& state);

 private:
  PairSplit split_;
  CurriculumSpec spec_;
  int batch_size_;
  Rng rng_;
};

/// Draws a composite-block parameter pair for a mismatch sequence.
/// With `differ_in_both` the pair shares no coordinate with `curr`.
TaskParams draw_mismatch_params(const TaskParams& curr,
                                const std::vector<RootPair>& candidates,
                                bool differ_in_both, Rng& rng);

/// Tab-separated dump: mode, p, a, b, a', b', m, n, tokens, weights.
void write_dump_header(std::ostream& os);
void write_dump_record(std::ostream& os, const SequencePack& seq);
/// Parses one dump record (not the header). Probe targets are recomputed.
SequencePack parse_dump_record(const std::string& line);

/// Recomputes every y token from the oracles; false on any mismatch.
bool labels_match_oracle(const SequencePack& seq);

}  // namespace cicl
