#pragma once

// Linear probes: multinomial logistic regression on frozen residual-stream
// features, fit per (layer, shot) cell, with a shuffled-label control.

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "cicl/analysis.hpp"

namespace cicl {

struct ProbeOptions {
  double train_fraction = 0.8;
  int iterations = 2000;
  double l2 = 1e-4;
  std::uint64_t seed = 1234;
};

struct ProbeFit {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  /// Accuracy of always predicting the most frequent test label.
  double chance = 0.0;
  int classes = 0;
  int n_train = 0;
  int n_test = 0;
  int iterations_run = 0;
};

/// Fits on the rows with train_mask set and scores the rest. Features are
/// standardized with training statistics; the bias is not penalized.
ProbeFit fit_linear_probe(const nn::RowMatrix<double>& features, std::span<const int> targets,
                          std::span<const std::uint8_t> train_mask, const ProbeOptions& options);

/// Random train/test split of `n` rows in the given proportion.
std::vector<std::uint8_t> probe_split(int n, double train_fraction, std::uint64_t seed);

/// Convenience overload that draws the split from options.
ProbeFit fit_linear_probe(const nn::RowMatrix<double>& features, std::span<const int> targets,
                          const ProbeOptions& options);

struct ProbeReport {
  ProbeKind target = ProbeKind::y;
  std::vector<int> layers;
  std::vector<int> shots;
  std::vector<std::vector<double>> accuracy;  // [layer][shot]
  std::vector<std::vector<double>> control;   // shuffled training labels
  std::vector<std::vector<double>> chance;
  int n_train = 0;
  int n_test = 0;
  std::vector<int> block_bounds;

  double at(int layer, int shot) const;
  double control_at(int layer, int shot) const;
};

/// One report per target kind over every (layer, shot) cell. Sequences are
/// split once, so every cell uses the same train/test sequences.
std::vector<ProbeReport> probe_grid(const Activations& act, const std::vector<SequencePack>& seqs,
                                    std::span<const ProbeKind> kinds, const ProbeOptions& options);

nlohmann::json probe_report_to_json(const ProbeReport& report);
ProbeReport probe_report_from_json(const nlohmann::json& doc);

}  // namespace cicl
