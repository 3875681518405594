#pragma once

#include <span>
#include <vector>

namespace cicl {

struct SmoothResult {
  std::vector<double> values;
  /// False when the series was shorter than the window and returned as is.
  bool filtered = false;
};

/// Savitzky-Golay smoothing: each point is the value at that point of a
/// least-squares polynomial of degree `order` fit over a centered window.
/// Near the ends the window is clipped to the series and the fit is made
/// on the points that remain.
SmoothResult savgol_smooth(std::span<const double> series, int window = 51, int order = 3);

/// Convolution weights of the centered window (length `window`).
std::vector<double> savgol_coefficients(int window, int order);

}  // namespace cicl
