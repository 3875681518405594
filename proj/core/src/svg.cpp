#include "cicl/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cicl::svg {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  if (std::abs(v) >= 1e4 || (std::abs(v) < 1e-2 && v != 0.0)) {
    std::snprintf(buf, sizeof(buf), "%.2g", v);
  } else {
    std::snprintf(buf, sizeof(buf), "%.3g", v);
  }
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string color(std::size_t i) { return kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))]; }

/// Draws axes and series inside the box (x0, y0, w, h) of an open document.
void draw_axes(std::ostringstream& os, const std::vector<Series>& series, const Axes& axes,
               double x0, double y0, double w, double h, bool legend) {
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  double ylo = xlo, yhi = -xlo;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("svg::line_plot: x and y differ in length");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  }
  if (!(xlo <= xhi)) throw std::invalid_argument("svg::line_plot: no finite data points");
  if (axes.y_lo < axes.y_hi) {
    ylo = axes.y_lo;
    yhi = axes.y_hi;
  }
  if (xhi == xlo) xhi = xlo + 1.0;
  if (yhi == ylo) yhi = ylo + 1.0;
  auto px = [&](double x) { return x0 + (x - xlo) / (xhi - xlo) * w; };
  auto py = [&](double y) { return y0 + h - (y - ylo) / (yhi - ylo) * h; };

  os << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(w) << "\" height=\""
     << num(h) << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xlo + (xhi - xlo) * i / 4.0;
    const double yv = ylo + (yhi - ylo) * i / 4.0;
    os << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(y0 + h + 14)
       << "\" font-size=\"10\" text-anchor=\"middle\">" << tick_label(xv) << "</text>\n";
    os << "<text x=\"" << num(x0 - 4) << "\" y=\"" << num(py(yv) + 3)
       << "\" font-size=\"10\" text-anchor=\"end\">" << tick_label(yv) << "</text>\n";
    os << "<line x1=\"" << num(x0) << "\" x2=\"" << num(x0 + w) << "\" y1=\"" << num(py(yv))
       << "\" y2=\"" << num(py(yv)) << "\" stroke=\"#ddd\" stroke-width=\"0.5\"/>\n";
  }
  for (double m : axes.x_marks) {
    if (m < xlo || m > xhi) continue;
    os << "<line x1=\"" << num(px(m)) << "\" x2=\"" << num(px(m)) << "\" y1=\"" << num(y0)
       << "\" y2=\"" << num(y0 + h) << "\" stroke=\"#888\" stroke-dasharray=\"4,3\"/>\n";
  }
  os << "<text x=\"" << num(x0 + w / 2) << "\" y=\"" << num(y0 - 8)
     << "\" font-size=\"12\" text-anchor=\"middle\">" << escape(axes.title) << "</text>\n";
  os << "<text x=\"" << num(x0 + w / 2) << "\" y=\"" << num(y0 + h + 30)
     << "\" font-size=\"11\" text-anchor=\"middle\">" << escape(axes.x_label) << "</text>\n";
  os << "<text transform=\"translate(" << num(x0 - 38) << "," << num(y0 + h / 2)
     << ") rotate(-90)\" font-size=\"11\" text-anchor=\"middle\">" << escape(axes.y_label)
     << "</text>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    os << "<polyline fill=\"none\" stroke=\"" << color(si) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      const double y = std::clamp(s.y[i], ylo, yhi);
      os << num(px(s.x[i])) << ',' << num(py(y)) << ' ';
    }
    os << "\"/>\n";
    if (legend) {
      const double ly = y0 + 12 + 14 * static_cast<double>(si);
      os << "<line x1=\"" << num(x0 + w + 10) << "\" x2=\"" << num(x0 + w + 28) << "\" y1=\"" << num(ly)
         << "\" y2=\"" << num(ly) << "\" stroke=\"" << color(si) << "\" stroke-width=\"2\"/>\n";
      os << "<text x=\"" << num(x0 + w + 32) << "\" y=\"" << num(ly + 4) << "\" font-size=\"10\">"
         << escape(s.name) << "</text>\n";
    }
  }
}

std::string header(double width, double height) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\""
     << num(height) << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height)
     << "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return os.str();
}

}  // namespace

std::string heatmap(const nn::RowMatrix<double>& m, const std::vector<int>& bounds,
                    const std::string& title) {
  if (m.size() == 0) throw std::invalid_argument("svg::heatmap: empty matrix");
  const double cell = 8.0;
  const double margin = 40.0;
  const double width = margin * 2 + cell * static_cast<double>(m.cols());
  const double height = margin * 2 + cell * static_cast<double>(m.rows());
  const double vmax = std::max(m.maxCoeff(), 1e-12);
  std::ostringstream os;
  os << header(width, height);
  os << "<text x=\"" << num(width / 2) << "\" y=\"20\" font-size=\"12\" text-anchor=\"middle\">"
     << escape(title) << "</text>\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = std::clamp(m(i, j) / vmax, 0.0, 1.0);
      const int g = static_cast<int>(std::lround(255.0 * (1.0 - v)));
      os << "<rect x=\"" << num(margin + cell * j) << "\" y=\"" << num(margin + cell * i)
         << "\" width=\"" << num(cell) << "\" height=\"" << num(cell) << "\" fill=\"rgb(" << g << ','
         << g << ',' << g << ")\"/>\n";
    }
  }
  os << "<rect x=\"" << num(margin) << "\" y=\"" << num(margin) << "\" width=\""
     << num(cell * m.cols()) << "\" height=\"" << num(cell * m.rows())
     << "\" fill=\"none\" stroke=\"#333\"/>\n";
  std::vector<int> ticks{0};
  ticks.insert(ticks.end(), bounds.begin(), bounds.end());
  for (int t : ticks) {
    const double pos = margin + cell * t;
    os << "<line x1=\"" << num(pos) << "\" x2=\"" << num(pos) << "\" y1=\"" << num(margin - 5)
       << "\" y2=\"" << num(margin) << "\" stroke=\"#333\"/>\n";
    os << "<line x1=\"" << num(margin - 5) << "\" x2=\"" << num(margin) << "\" y1=\"" << num(pos)
       << "\" y2=\"" << num(pos) << "\" stroke=\"#333\"/>\n";
    os << "<text x=\"" << num(pos) << "\" y=\"" << num(margin - 8)
       << "\" font-size=\"9\" text-anchor=\"middle\">" << t << "</text>\n";
    os << "<text x=\"" << num(margin - 8) << "\" y=\"" << num(pos + 3)
       << "\" font-size=\"9\" text-anchor=\"end\">" << t << "</text>\n";
  }
  os << "<text x=\"" << num(width / 2) << "\" y=\"" << num(height - 12)
     << "\" font-size=\"10\" text-anchor=\"middle\">key position</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string line_plot(const std::vector<Series>& series, const Axes& axes) {
  if (series.empty()) throw std::invalid_argument("svg::line_plot: no series");
  const double width = 640, height = 380;
  std::ostringstream os;
  os << header(width, height);
  draw_axes(os, series, axes, 60, 30, 440, 300, true);
  os << "</svg>\n";
  return os.str();
}

std::string probe_panels(const std::vector<ProbeReport>& reports, const std::string& title) {
  if (reports.empty()) throw std::invalid_argument("svg::probe_panels: no reports");
  const double panel_w = 300, panel_h = 220, gap_x = 150, top = 50;
  const double width = (panel_w + gap_x) * static_cast<double>(reports.size()) + 40;
  const double height = panel_h + top + 60;
  std::ostringstream os;
  os << header(width, height);
  os << "<text x=\"" << num(width / 2) << "\" y=\"18\" font-size=\"14\" text-anchor=\"middle\">"
     << escape(title) << "</text>\n";
  for (std::size_t r = 0; r < reports.size(); ++r) {
    const auto& rep = reports[r];
    std::vector<Series> series;
    for (std::size_t li = 0; li < rep.layers.size(); ++li) {
      Series s;
      s.name = "layer " + std::to_string(rep.layers[li]);
      for (std::size_t k = 0; k < rep.shots.size(); ++k) {
        s.x.push_back(rep.shots[k]);
        s.y.push_back(rep.accuracy.at(li).at(k));
      }
      series.push_back(std::move(s));
    }
    Axes axes;
    axes.title = to_string(rep.target);
    axes.x_label = "shot";
    axes.y_label = "decoding accuracy";
    axes.y_lo = 0.0;
    axes.y_hi = 1.0;
    for (int b : rep.block_bounds) axes.x_marks.push_back(b / 2 - 0.5);
    draw_axes(os, series, axes, 60 + (panel_w + gap_x) * static_cast<double>(r), top, panel_w,
              panel_h, true);
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace cicl::svg
