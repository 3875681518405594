#pragma once

// Behavioral evaluation and internals of a frozen model: per-shot error
// counts, last-error histograms, mismatch tests, residual-stream activations
// and averaged attention maps.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "cicl/config.hpp"
#include "cicl/model.hpp"
#include "cicl/taskgen.hpp"

namespace cicl {

/// Logits whose argmax at every row is the next input token. Lets the
/// evaluation harness be checked against labels fed in directly.
class OracleStub final : public SequenceModel {
 public:
  OracleStub(int vocab, int max_seq, int layers = 1, int heads = 1, int d_model = 4);
  int vocab() const override { return vocab_; }
  int layers() const override { return layers_; }
  int heads() const override { return heads_; }
  int d_model() const override { return d_model_; }
  int max_seq() const override { return max_seq_; }
  ForwardTrace trace(std::span<const int> tokens, int batch, int seq_len,
                     bool internals) const override;

 private:
  int vocab_, max_seq_, layers_, heads_, d_model_;
};

/// Sequences for evaluation, drawn from eval pairs only.
/// `mode` curriculum/vanilla_* build that kind; mismatch is built by mismatch_eval.
std::vector<SequencePack> make_eval_set(const PairSplit& split, const CurriculumSpec& spec,
                                        SequenceMode mode, int count, std::uint64_t seed);

/// Index of the first composite shot (2m for blocked layouts, 0 for
/// vanilla_double) or nullopt when the sequence has no composite block.
std::optional<int> composite_first_shot(const SequencePack& seq);

/// correct[s][k]: argmax of the logits at the x-token of pair k equals y_k.
std::vector<std::vector<std::uint8_t>> shot_correctness(const SequenceModel& model,
                                                        const std::vector<SequencePack>& seqs,
                                                        int chunk = 64);

struct ErrorProfile {
  std::vector<std::int64_t> errors;  // one count per shot
  std::int64_t eval_size = 0;
  int composite_first = 0;  // first composite shot
  int composite_len = 0;
  std::vector<int> block_bounds;  // token indices

  int shots() const { return static_cast<int>(errors.size()); }
  double accuracy(int shot) const;
  std::int64_t composite_errors() const;
};

/// Error counts per shot. All sequences must share one layout.
ErrorProfile per_shot_errors(const SequenceModel& model, const std::vector<SequencePack>& seqs,
                             int chunk = 64);
ErrorProfile error_profile(const std::vector<std::vector<std::uint8_t>>& correct,
                           const std::vector<SequencePack>& seqs);

struct LastErrorHistogram {
  int composite_first = 0;
  std::vector<std::int64_t> counts;  // per composite shot
  std::int64_t no_error = 0;

  std::int64_t total() const;
};

LastErrorHistogram last_error_histogram(const SequenceModel& model,
                                        const std::vector<SequencePack>& seqs, int chunk = 64);
LastErrorHistogram last_error_histogram(const std::vector<std::vector<std::uint8_t>>& correct,
                                        const std::vector<SequencePack>& seqs);

/// Curriculum blocks built from eval pairs, composite block from a different pair.
std::vector<SequencePack> make_mismatch_set(const PairSplit& split, const CurriculumSpec& spec,
                                            int count, bool differ_in_both, std::uint64_t seed);

/// Error profile of the composite block under mismatched parameters.
ErrorProfile mismatch_eval(const SequenceModel& model, const std::vector<SequencePack>& seqs,
                           int chunk = 64);

void write_error_csv(std::ostream& os, const ErrorProfile& profile);
void write_histogram_csv(std::ostream& os, const LastErrorHistogram& hist);

enum class ProbeKind { y, inner, base_b, task_a_output };
std::string to_string(ProbeKind kind);
inline constexpr ProbeKind kAllProbeKinds[] = {ProbeKind::y, ProbeKind::inner, ProbeKind::base_b,
                                               ProbeKind::task_a_output};

/// Residual-stream vectors at the x-token of every pair.
struct Activations {
  std::vector<int> layers;                          // 0 = embeddings
  std::vector<nn::RowMatrix<double>> features;      // per layer, [seqs*pairs x d], seq-major
  int sequences = 0;
  int pairs = 0;

  std::vector<int> targets(const std::vector<SequencePack>& seqs, ProbeKind kind) const;
};

Activations collect_activations(const SequenceModel& model, const std::vector<SequencePack>& seqs,
                                const std::vector<int>& layers, int chunk = 64);

struct AttentionSummary {
  int layers = 0;
  int heads = 0;
  int seq_len = 0;
  std::vector<int> block_bounds;
  std::vector<nn::RowMatrix<double>> mean;       // layers*heads maps of [T x T]
  std::vector<nn::RowMatrix<double>> aggregate;  // layers*heads of [blocks x blocks]

  const nn::RowMatrix<double>& map(int layer, int head) const;
  const nn::RowMatrix<double>& block_map(int layer, int head) const;
};

/// Mean attention per head with compensated summation; the block aggregate
/// averages, over query positions of block i, the mass placed on block j.
AttentionSummary average_attention(const SequenceModel& model,
                                   const std::vector<SequencePack>& seqs, int chunk = 64);

void write_matrix_csv(std::ostream& os, const nn::RowMatrix<double>& m);
void write_block_aggregate_csv(std::ostream& os, const AttentionSummary& summary);

/// First step whose value is below `threshold`, if any.
std::optional<std::int64_t> first_crossing_step(const std::vector<std::int64_t>& steps,
                                                const std::vector<double>& values,
                                                double threshold);

}  // namespace cicl
