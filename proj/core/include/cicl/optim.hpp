#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cicl/tensor.hpp"

namespace cicl::nn {

inline constexpr double kDefaultLearningRate = 7.5e-4;

template <typename Scalar>
struct AdamState {
  std::vector<Tensor<Scalar>> first_moment;
  std::vector<Tensor<Scalar>> second_moment;
  std::int64_t step = 0;
  double lr = kDefaultLearningRate;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Zero moments shaped like `params`.
  static AdamState for_params(const ParamStore<Scalar>& params, double lr);
};

/// One bias-corrected Adam update; gradients are zeroed afterwards.
/// Throws NonFiniteError (leaving parameters untouched) on a non-finite gradient.
template <typename Scalar>
void adam_step(ParamStore<Scalar>& params, AdamState<Scalar>& state);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  std::size_t samples_per_tensor = 200;
  std::uint64_t seed = 0;
  /// Gradients whose analytic and numeric magnitudes are both below this
  /// floor are compared absolutely; the relative error divides by
  /// max(|analytic|, |numeric|, floor).
  double magnitude_floor = 1e-6;
};

/// Compares analytic gradients against central finite differences.
/// `closure(true)` must return the loss and accumulate gradients into
/// `params`; `closure(false)` returns the loss only.
GradCheckReport grad_check(const std::function<double(bool)>& closure,
                           ParamStore<double>& params, const GradCheckOptions& options);

}  // namespace cicl::nn
