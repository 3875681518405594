#include "cicl/savgol.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <stdexcept>

namespace cicl {

namespace {

/// Weights w such that sum_j w_j * y[lo + j] is the value at `at` of the
/// degree-`order` least-squares fit over points lo..hi.
Eigen::VectorXd fit_weights(int lo, int hi, int at, int order) {
  const int len = hi - lo + 1;
  const double scale = std::max(1, std::max(at - lo, hi - at));
  Eigen::MatrixXd v(len, order + 1);
  for (int j = 0; j < len; ++j) {
    const double u = (lo + j - at) / scale;
    double pw = 1.0;
    for (int c = 0; c <= order; ++c) {
      v(j, c) = pw;
      pw *= u;
    }
  }
  // The fitted value at u = 0 is the constant coefficient: row 0 of pinv(V).
  const Eigen::MatrixXd pinv =
      v.colPivHouseholderQr().solve(Eigen::MatrixXd::Identity(len, len));
  return pinv.row(0).transpose();
}

void check(int window, int order) {
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("savgol: window must be odd and positive");
  if (order < 0 || order >= window) throw std::invalid_argument("savgol: order must be in [0, window)");
}

}  // namespace

std::vector<double> savgol_coefficients(int window, int order) {
  check(window, order);
  const int half = window / 2;
  const Eigen::VectorXd w = fit_weights(0, window - 1, half, order);
  return {w.data(), w.data() + w.size()};
}

SmoothResult savgol_smooth(std::span<const double> series, int window, int order) {
  check(window, order);
  const int n = static_cast<int>(series.size());
  SmoothResult out;
  if (n < window) {
    out.values.assign(series.begin(), series.end());
    return out;
  }
  const int half = window / 2;
  const auto interior = savgol_coefficients(window, order);
  out.values.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + half);
    double acc = 0.0;
    if (hi - lo + 1 == window) {
      for (int j = 0; j < window; ++j) acc += interior[static_cast<std::size_t>(j)] * series[static_cast<std::size_t>(lo + j)];
    } else {
      const Eigen::VectorXd w = fit_weights(lo, hi, i, order);
      for (int j = 0; j <= hi - lo; ++j) acc += w(j) * series[static_cast<std::size_t>(lo + j)];
    }
    out.values[static_cast<std::size_t>(i)] = acc;
  }
  out.filtered = true;
  return out;
}

}  // namespace cicl
