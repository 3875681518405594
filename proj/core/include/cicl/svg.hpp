#pragma once

// Small hand-written SVG renderers for the run artifacts.

#include <string>
#include <vector>

#include "cicl/probe.hpp"
#include "cicl/tensor.hpp"

namespace cicl::svg {

/// One cell per matrix entry, linear grayscale from 0 (white) to the
/// matrix maximum (black), with axis ticks at the given block bounds.
std::string heatmap(const nn::RowMatrix<double>& m, const std::vector<int>& bounds,
                    const std::string& title);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  /// Fixed y range when lo < hi; otherwise taken from the data.
  double y_lo = 0.0;
  double y_hi = 0.0;
  std::vector<double> x_marks;  // dashed vertical guides
};

std::string line_plot(const std::vector<Series>& series, const Axes& axes);

/// One panel per report: x = shot, y = accuracy, one line per layer.
std::string probe_panels(const std::vector<ProbeReport>& reports, const std::string& title);

}  // namespace cicl::svg
