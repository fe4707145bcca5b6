#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrnet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Raised when operand shapes do not reconcile.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces NaN/Inf from finite inputs.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major N-dimensional array backed by an Eigen vector.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() : shape_{0} {}

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    for (Index e : shape_) {
      if (e < 0) throw ShapeError("negative extent in shape " + to_string(shape_));
    }
    data_ = Vector::Constant(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values) : Tensor(std::move(shape)) {
    if (static_cast<Index>(values.size()) != data_.size()) {
      throw ShapeError("value count does not match shape " + to_string(shape_));
    }
    std::copy(values.begin(), values.end(), data_.data());
  }

  Tensor(Shape shape, std::span<const Scalar> values) : Tensor(std::move(shape)) {
    if (static_cast<Index>(values.size()) != data_.size()) {
      throw ShapeError("value count does not match shape " + to_string(shape_));
    }
    std::copy(values.begin(), values.end(), data_.data());
  }

  static Tensor scalar(Scalar v) { return Tensor(Shape{}, v); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }

  /// Views the flat storage as a row-major rows x cols matrix.
  MatrixMap matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  /// Leading axis by the product of the remaining axes.
  MatrixMap rows_view() { return matrix(dim(0), rank() > 1 ? size() / std::max<Index>(dim(0), 1) : 1); }
  ConstMatrixMap rows_view() const {
    return matrix(dim(0), rank() > 1 ? size() / std::max<Index>(dim(0), 1) : 1);
  }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Index offset(std::initializer_list<Index> idx) const {
    if (static_cast<Index>(idx.size()) != rank()) {
      throw ShapeError("index rank does not match tensor rank " + to_string(shape_));
    }
    Index off = 0;
    std::size_t a = 0;
    for (Index i : idx) off = off * shape_[a++] + i;
    return off;
  }
  Scalar& at(std::initializer_list<Index> idx) { return data_[offset(idx)]; }
  Scalar at(std::initializer_list<Index> idx) const { return data_[offset(idx)]; }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    out.vec() = data_.template cast<Other>();
    return out;
  }

  bool all_finite() const { return data_.allFinite(); }

  void fill(Scalar v) { data_.setConstant(v); }

 private:
  void check_view(Index rows, Index cols) const {
    if (rows * cols != data_.size()) {
      throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " does not cover tensor " + to_string(shape_));
    }
  }

  Shape shape_;
  Vector data_;
};

/// Bitwise equality of shape and payload.
template <typename Scalar>
bool bitwise_equal(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<std::size_t>(a.size())) == 0;
}

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shape mismatch");
  if (a.size() == 0) return Scalar(0);
  return (a.vec() - b.vec()).cwiseAbs().maxCoeff();
}

}  // namespace corrnet
