#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "swardmix/errors.hpp"

namespace swardmix {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major n-dimensional array.
///
/// Storage is a contiguous Eigen array so element-wise math can be written as
/// Eigen expressions; matrix() reinterprets the buffer as a row-major matrix
/// for BLAS-style products. Gradient bookkeeping lives on the Tape, not here.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Storage::Zero(shape_size(shape_))) {}

  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                       std::to_string(data_.size()) + " elements");
    }
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Storage(Eigen::Map<const Storage>(values.begin(), static_cast<Index>(values.size())))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(std::size_t axis) const { return shape_.at(axis); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Element of a 2-D tensor.
  Scalar& at(Index r, Index c) { return data_[r * shape_[1] + c]; }
  Scalar at(Index r, Index c) const { return data_[r * shape_[1] + c]; }

  /// Element of a 4-D (NCHW) tensor.
  Scalar& at(Index n, Index c, Index h, Index w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar at(Index n, Index c, Index h, Index w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  MatrixMap matrix(Index rows, Index cols) {
    check_matrix(rows, cols);
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_matrix(rows, cols);
    return ConstMatrixMap(data_.data(), rows, cols);
  }
  /// 2-D view using the tensor's own shape.
  MatrixMap matrix() { return matrix(shape_.at(0), shape_.at(1)); }
  ConstMatrixMap matrix() const { return matrix(shape_.at(0), shape_.at(1)); }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.isFinite().all(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  void check_matrix(Index rows, Index cols) const {
    if (rows * cols != data_.size()) {
      throw ShapeError("cannot view " + shape_string(shape_) + " as " + std::to_string(rows) + "x" +
                       std::to_string(cols) + " matrix");
    }
  }

  Shape shape_;
  Storage data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace swardmix
