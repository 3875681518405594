#include "cicl/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cicl::nn {

// ---------------------------------------------------------------- ParamStore

template <typename Scalar>
std::size_t ParamStore<Scalar>::add(const std::string& name, std::vector<std::size_t> shape) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name " + name);
  Tensor<Scalar> value(shape);
  Tensor<Scalar> grad(std::move(shape));
  params_.push_back(Param<Scalar>{name, std::move(value), std::move(grad)});
  index_.emplace(name, params_.size() - 1);
  return params_.size() - 1;
}

template <typename Scalar>
Param<Scalar>& ParamStore<Scalar>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return params_[it->second];
}

template <typename Scalar>
const Param<Scalar>& ParamStore<Scalar>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return params_[it->second];
}

template <typename Scalar>
std::size_t ParamStore<Scalar>::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename Scalar>
void ParamStore<Scalar>::zero_grad() {
  for (auto& p : params_) p.grad.set_zero();
}

template <typename Scalar>
void ParamStore<Scalar>::initialize(std::size_t index, InitKind kind, double std) {
  auto& value = params_.at(index).value;
  switch (kind) {
    case InitKind::zeros: value.set_zero(); return;
    case InitKind::ones:
      std::fill(value.values().begin(), value.values().end(), Scalar(1));
      return;
    case InitKind::normal: break;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(init_seed_),
                    static_cast<std::uint32_t>(init_seed_ >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : value.values()) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v = static_cast<Scalar>(z * std);
  }
}

template class ParamStore<float>;
template class ParamStore<double>;

// ---------------------------------------------------------------- Adam

template <typename Scalar>
AdamState<Scalar> AdamState<Scalar>::for_params(const ParamStore<Scalar>& params, double lr) {
  AdamState state;
  state.lr = lr;
  for (const auto& p : params.params()) {
    state.first_moment.emplace_back(p.value.shape());
    state.second_moment.emplace_back(p.value.shape());
  }
  return state;
}

template <typename Scalar>
void adam_step(ParamStore<Scalar>& params, AdamState<Scalar>& state) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: moment count does not match parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.at(i);
    if (state.first_moment[i].shape() != p.value.shape()) {
      throw ShapeError("adam_step: moment shape mismatch for " + p.name);
    }
    ensure_finite<Scalar>(p.grad.values(), p.name.c_str());
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const auto b1 = static_cast<Scalar>(state.beta1);
  const auto b2 = static_cast<Scalar>(state.beta2);
  const auto step_size =
      static_cast<Scalar>(state.lr / (1.0 - std::pow(state.beta1, t)));
  const auto v_correction = static_cast<Scalar>(1.0 / (1.0 - std::pow(state.beta2, t)));
  const auto eps = static_cast<Scalar>(state.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.at(i);
    auto w = p.value.vec().array();
    auto g = p.grad.vec().array();
    auto m = state.first_moment[i].vec().array();
    auto v = state.second_moment[i].vec().array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    w -= step_size * m / ((v * v_correction).sqrt() + eps);
    p.grad.set_zero();
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(ParamStore<float>&, AdamState<float>&);
template void adam_step<double>(ParamStore<double>&, AdamState<double>&);

// ---------------------------------------------------------------- grad check

GradCheckReport grad_check(const std::function<double(bool)>& closure,
                           ParamStore<double>& params, const GradCheckOptions& options) {
  params.zero_grad();
  closure(true);
  std::vector<Tensor<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params.params()) analytic.push_back(p.grad);

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params.at(pi);
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.samples_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.samples_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t idx : coords) {
      const double saved = p.value[idx];
      p.value[idx] = saved + options.step;
      const double up = closure(false);
      p.value[idx] = saved - options.step;
      const double down = closure(false);
      p.value[idx] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double exact = analytic[pi][idx];
      const double denom =
          std::max({std::abs(numeric), std::abs(exact), options.magnitude_floor});
      const double rel = std::abs(numeric - exact) / denom;
      ++report.coordinates_checked;
      if (rel > report.max_rel_error || report.coordinates_checked == 1) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_index = idx;
        report.worst_analytic = exact;
        report.worst_numeric = numeric;
      }
    }
  }
  params.zero_grad();
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace cicl::nn
