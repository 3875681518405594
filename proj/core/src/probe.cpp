#include "cicl/probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cicl {

using nn::RowMatrix;
using Matrix = RowMatrix<double>;

namespace {

/// Standardized design matrices (bias column last) and a step size bound.
struct Design {
  Matrix train;
  Matrix test;
  double lipschitz = 1.0;
};

Design make_design(const Matrix& features, std::span<const std::uint8_t> mask) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  Eigen::Index n_train = 0;
  for (auto m : mask) n_train += m ? 1 : 0;
  const Eigen::Index n_test = n - n_train;
  if (n_train < 1 || n_test < 1) throw std::invalid_argument("probe: empty train or test split");

  Design out;
  out.train.resize(n_train, d + 1);
  out.test.resize(n_test, d + 1);
  for (Eigen::Index i = 0, tr = 0, te = 0; i < n; ++i) {
    if (mask[static_cast<std::size_t>(i)]) {
      out.train.row(tr++).head(d) = features.row(i);
    } else {
      out.test.row(te++).head(d) = features.row(i);
    }
  }
  const Eigen::RowVectorXd mean = out.train.leftCols(d).colwise().mean();
  Eigen::RowVectorXd sd =
      ((out.train.leftCols(d).rowwise() - mean).array().square().colwise().sum() /
       static_cast<double>(n_train))
          .sqrt();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(sd(j) > 1e-12)) sd(j) = 1.0;
  }
  out.train.leftCols(d) = (out.train.leftCols(d).rowwise() - mean).array().rowwise() / sd.array();
  out.test.leftCols(d) = (out.test.leftCols(d).rowwise() - mean).array().rowwise() / sd.array();
  out.train.col(d).setOnes();
  out.test.col(d).setOnes();

  // Largest eigenvalue of X^T X / n by power iteration.
  const Matrix gram = out.train.transpose() * out.train / static_cast<double>(n_train);
  Eigen::VectorXd v = Eigen::VectorXd::Ones(d + 1).normalized();
  double lambda = 1.0;
  for (int it = 0; it < 100; ++it) {
    Eigen::VectorXd w = gram * v;
    const double norm = w.norm();
    if (norm == 0.0) break;
    const double next = v.dot(w);
    v = w / norm;
    if (std::abs(next - lambda) <= 1e-9 * std::abs(next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  // Softmax cross-entropy Hessian is bounded by 0.5 * X^T X / n; pad the estimate.
  out.lipschitz = 0.5 * lambda * 1.05;
  return out;
}

void softmax_inplace(Matrix& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double mx = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - mx).exp();
    z.row(i) /= z.row(i).sum();
  }
}

double accuracy(const Matrix& x, const Matrix& w, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  const Matrix z = x * w;
  int hits = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index arg = 0;
    z.row(i).maxCoeff(&arg);
    hits += static_cast<int>(arg) == labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Fits on design.train with labels already mapped to [0, classes).
/// Returns the number of iterations used.
int fit_weights(const Design& design, std::span<const int> labels, int classes,
                const ProbeOptions& options, Matrix& w) {
  const Matrix& x = design.train;
  const auto n = static_cast<double>(x.rows());
  const Eigen::Index dim = x.cols();
  Matrix onehot = Matrix::Zero(x.rows(), classes);
  for (Eigen::Index i = 0; i < x.rows(); ++i) onehot(i, labels[static_cast<std::size_t>(i)]) = 1.0;

  const double step = 1.0 / (design.lipschitz + options.l2);
  w = Matrix::Zero(dim, classes);
  Matrix y = w;  // look-ahead point
  Matrix grad(dim, classes);
  double t = 1.0;
  auto gradient = [&](const Matrix& at) {
    Matrix p = x * at;
    softmax_inplace(p);
    grad.noalias() = x.transpose() * (p - onehot) / n;
    grad.topRows(dim - 1) += options.l2 * at.topRows(dim - 1);
  };
  int it = 0;
  for (; it < options.iterations; ++it) {
    gradient(y);
    if (grad.cwiseAbs().maxCoeff() < 1e-7) {
      w = y;
      break;
    }
    Matrix next = y - step * grad;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    // Restart momentum when it points uphill.
    if ((grad.array() * (next - w).array()).sum() > 0.0) {
      t = 1.0;
      y = next;
    } else {
      y = next + ((t - 1.0) / t_next) * (next - w);
      t = t_next;
    }
    w = std::move(next);
  }
  return it;
}

}  // namespace

std::vector<std::uint8_t> probe_split(int n, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("probe_split: train_fraction must be in (0, 1)");
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const int n_train = static_cast<int>(std::floor(train_fraction * n));
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n_train; ++i) mask[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  return mask;
}

namespace {

ProbeFit fit_on_design(const Design& design, std::span<const int> targets,
                       std::span<const std::uint8_t> mask, const ProbeOptions& options,
                       bool shuffle_train_labels) {
  std::vector<int> train_raw, test_raw;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    (mask[i] ? train_raw : test_raw).push_back(targets[i]);
  }
  if (shuffle_train_labels) {
    std::mt19937_64 rng(options.seed ^ 0x5bd1e9955bd1e995ULL);
    std::shuffle(train_raw.begin(), train_raw.end(), rng);
  }
  std::map<int, int> index;
  for (int v : train_raw) index.emplace(v, 0);
  if (index.size() < 2) throw std::invalid_argument("fit_linear_probe: fewer than two classes in training labels");
  int next = 0;
  for (auto& [label, id] : index) id = next++;
  std::vector<int> train_y, test_y;
  for (int v : train_raw) train_y.push_back(index.at(v));
  for (int v : test_raw) {
    auto it = index.find(v);
    test_y.push_back(it == index.end() ? -1 : it->second);
  }

  ProbeFit fit;
  fit.classes = static_cast<int>(index.size());
  fit.n_train = static_cast<int>(train_y.size());
  fit.n_test = static_cast<int>(test_y.size());
  Matrix w;
  fit.iterations_run = fit_weights(design, train_y, fit.classes, options, w);
  fit.train_accuracy = accuracy(design.train, w, train_y);
  fit.test_accuracy = accuracy(design.test, w, test_y);
  std::map<int, int> freq;
  for (int v : test_raw) ++freq[v];
  int top = 0;
  for (const auto& [label, count] : freq) top = std::max(top, count);
  fit.chance = static_cast<double>(top) / static_cast<double>(test_raw.size());
  return fit;
}

}  // namespace

ProbeFit fit_linear_probe(const Matrix& features, std::span<const int> targets,
                          std::span<const std::uint8_t> train_mask, const ProbeOptions& options) {
  if (static_cast<std::size_t>(features.rows()) != targets.size() || targets.size() != train_mask.size()) {
    throw std::invalid_argument("fit_linear_probe: features, targets and mask differ in length");
  }
  const Design design = make_design(features, train_mask);
  return fit_on_design(design, targets, train_mask, options, false);
}

ProbeFit fit_linear_probe(const Matrix& features, std::span<const int> targets,
                          const ProbeOptions& options) {
  const auto mask = probe_split(static_cast<int>(features.rows()), options.train_fraction, options.seed);
  return fit_linear_probe(features, targets, mask, options);
}

double ProbeReport::at(int layer, int shot) const {
  const auto li = std::find(layers.begin(), layers.end(), layer) - layers.begin();
  if (li == static_cast<std::ptrdiff_t>(layers.size())) throw std::out_of_range("probe report has no such layer");
  return accuracy.at(static_cast<std::size_t>(li)).at(static_cast<std::size_t>(shot));
}

double ProbeReport::control_at(int layer, int shot) const {
  const auto li = std::find(layers.begin(), layers.end(), layer) - layers.begin();
  if (li == static_cast<std::ptrdiff_t>(layers.size())) throw std::out_of_range("probe report has no such layer");
  return control.at(static_cast<std::size_t>(li)).at(static_cast<std::size_t>(shot));
}

std::vector<ProbeReport> probe_grid(const Activations& act, const std::vector<SequencePack>& seqs,
                                    std::span<const ProbeKind> kinds, const ProbeOptions& options) {
  const auto mask = probe_split(act.sequences, options.train_fraction, options.seed);
  const std::size_t L = act.layers.size();
  const auto P = static_cast<std::size_t>(act.pairs);
  std::vector<ProbeReport> reports;
  std::vector<std::vector<int>> labels;
  for (auto kind : kinds) {
    ProbeReport r;
    r.target = kind;
    r.layers = act.layers;
    for (int k = 0; k < act.pairs; ++k) r.shots.push_back(k);
    r.accuracy.assign(L, std::vector<double>(P, 0.0));
    r.control = r.accuracy;
    r.chance = r.accuracy;
    r.block_bounds = seqs.front().block_bounds;
    reports.push_back(std::move(r));
    labels.push_back(act.targets(seqs, kind));
  }
  Matrix cell(act.sequences, act.features.empty() ? 0 : act.features.front().cols());
  std::vector<int> cell_y(static_cast<std::size_t>(act.sequences));
  for (std::size_t li = 0; li < L; ++li) {
    for (std::size_t k = 0; k < P; ++k) {
      for (int s = 0; s < act.sequences; ++s) {
        cell.row(s) = act.features[li].row(static_cast<Eigen::Index>(s) * act.pairs + static_cast<Eigen::Index>(k));
      }
      const Design design = make_design(cell, mask);
      for (std::size_t r = 0; r < reports.size(); ++r) {
        for (int s = 0; s < act.sequences; ++s) {
          cell_y[static_cast<std::size_t>(s)] = labels[r][static_cast<std::size_t>(s) * P + k];
        }
        const auto fit = fit_on_design(design, cell_y, mask, options, false);
        const auto ctl = fit_on_design(design, cell_y, mask, options, true);
        reports[r].accuracy[li][k] = fit.test_accuracy;
        reports[r].control[li][k] = ctl.test_accuracy;
        reports[r].chance[li][k] = fit.chance;
        reports[r].n_train = fit.n_train;
        reports[r].n_test = fit.n_test;
      }
    }
  }
  return reports;
}

nlohmann::json probe_report_to_json(const ProbeReport& r) {
  return nlohmann::json{{"target", to_string(r.target)},
                        {"layers", r.layers},
                        {"shots", r.shots},
                        {"accuracy", r.accuracy},
                        {"control", r.control},
                        {"chance", r.chance},
                        {"n_train", r.n_train},
                        {"n_test", r.n_test},
                        {"block_bounds", r.block_bounds}};
}

ProbeReport probe_report_from_json(const nlohmann::json& doc) {
  ProbeReport r;
  const auto target = doc.at("target").get<std::string>();
  bool found = false;
  for (auto kind : kAllProbeKinds) {
    if (to_string(kind) == target) {
      r.target = kind;
      found = true;
    }
  }
  if (!found) throw std::invalid_argument("unknown probe target '" + target + "'");
  r.layers = doc.at("layers").get<std::vector<int>>();
  r.shots = doc.at("shots").get<std::vector<int>>();
  r.accuracy = doc.at("accuracy").get<std::vector<std::vector<double>>>();
  r.control = doc.at("control").get<std::vector<std::vector<double>>>();
  r.chance = doc.value("chance", std::vector<std::vector<double>>{});
  r.n_train = doc.value("n_train", 0);
  r.n_test = doc.value("n_test", 0);
  r.block_bounds = doc.value("block_bounds", std::vector<int>{});
  return r;
}

}  // namespace cicl
