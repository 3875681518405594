#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace cicl::nn {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using VectorMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

/// Raised when a kernel produces NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on incompatible operand shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor with contiguous storage.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (auto d : shape_) n *= d;
    data_.assign(n, Scalar(0));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }

  /// Leading dimensions flattened into rows; the last dimension is columns.
  Eigen::Index rows() const {
    if (shape_.empty()) return 1;
    return static_cast<Eigen::Index>(size() / shape_.back());
  }
  Eigen::Index cols() const {
    return shape_.empty() ? 1 : static_cast<Eigen::Index>(shape_.back());
  }

  MatrixMap<Scalar> mat() { return MatrixMap<Scalar>(data(), rows(), cols()); }
  ConstMatrixMap<Scalar> mat() const {
    return ConstMatrixMap<Scalar>(data(), rows(), cols());
  }
  ConstMatrixMap<Scalar> cmat() const { return mat(); }
  ConstVectorMap<Scalar> cvec() const { return vec(); }

  VectorMap<Scalar> vec() {
    return VectorMap<Scalar>(data(), static_cast<Eigen::Index>(size()));
  }
  ConstVectorMap<Scalar> vec() const {
    return ConstVectorMap<Scalar>(data(), static_cast<Eigen::Index>(size()));
  }

  void set_zero() { std::fill(data_.begin(), data_.end(), Scalar(0)); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  // Aligned so that Eigen reductions take the same path on every call.
  std::vector<Scalar, Eigen::aligned_allocator<Scalar>> data_;
};

/// Placeholder for a gradient output that should be skipped.
template <typename Scalar>
MatrixMap<Scalar> no_grad() {
  return MatrixMap<Scalar>(nullptr, 0, 0);
}

std::string shape_string(const std::vector<std::size_t>& shape);

/// Throws NonFiniteError naming `what` if any entry is NaN or Inf.
template <typename Scalar>
void ensure_finite(std::span<const Scalar> values, const char* what);

enum class InitKind { normal, ones, zeros };

template <typename Scalar>
struct Param {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
};

/// Named parameters with same-shape gradient slots, in insertion order.
template <typename Scalar>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t init_seed = 0) : init_seed_(init_seed) {}

  /// Registers a zero-initialized parameter; names must be unique.
  std::size_t add(const std::string& name, std::vector<std::size_t> shape);

  Param<Scalar>& at(std::size_t index) { return params_.at(index); }
  const Param<Scalar>& at(std::size_t index) const { return params_.at(index); }
  Param<Scalar>& at(const std::string& name);
  const Param<Scalar>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::vector<Param<Scalar>>& params() { return params_; }
  const std::vector<Param<Scalar>>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }

  /// Total number of scalar parameters.
  std::size_t count() const;
  std::uint64_t init_seed() const { return init_seed_; }

  void zero_grad();

  /// Truncated normal (+-2 std) for `normal`, constants otherwise; draws from
  /// a generator seeded by init_seed and the parameter's position.
  void initialize(std::size_t index, InitKind kind, double std = 0.02);

 private:
  std::uint64_t init_seed_;
  std::vector<Param<Scalar>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace cicl::nn
