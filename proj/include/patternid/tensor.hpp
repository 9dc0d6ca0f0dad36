#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "patternid/error.hpp"

namespace patternid {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Shape = std::vector<Index>;

inline Index shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

/// Dense row-major n-d array. The storage length always equals the product of
/// the extents.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Vector<Scalar>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    for (Index extent : shape_) {
      if (extent <= 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
    }
    data_ = Storage::Zero(shape_product(shape_));
  }

  Tensor(Shape shape, Storage data) : Tensor(std::move(shape)) {
    if (data.size() != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_string(shape_));
    }
    data_ = std::move(data);
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Storage& flat() { return data_; }
  const Storage& flat() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// View the storage as a rows x cols row-major matrix.
  Eigen::Map<RowMatrix<Scalar>> matrix(Index rows, Index cols) {
    check_matrix(rows, cols);
    return {data_.data(), rows, cols};
  }
  Eigen::Map<const RowMatrix<Scalar>> matrix(Index rows, Index cols) const {
    check_matrix(rows, cols);
    return {data_.data(), rows, cols};
  }

  void set_zero() { data_.setZero(); }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_matrix(Index rows, Index cols) const {
    if (rows * cols != data_.size()) {
      throw ShapeError("cannot view tensor of shape " + shape_string(shape_) + " as " + std::to_string(rows) +
                       "x" + std::to_string(cols));
    }
  }

  Shape shape_;
  Storage data_;
};

}  // namespace patternid
