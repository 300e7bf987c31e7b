#ifndef MCINET_TENSOR_HPP
#define MCINET_TENSOR_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "mcinet/errors.hpp"

namespace mcinet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

std::string to_string(const Shape& shape);
Index shape_size(const Shape& shape);

/// Dense row-major (NCHW-style) tensor backed by an Eigen vector.
///
/// Rank is dynamic; feature maps are rank 4 (N, C, H, W), correlation
/// volumes are rank 4 with the item axis first, scalars are rank 0.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(Vector::Constant(shape_size(shape_), fill)) {}
  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + mcinet::to_string(shape_));
    }
  }

  static Tensor scalar(Scalar v) { return Tensor(Shape{}, v); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Element access for rank-4 tensors.
  Scalar& at(Index n, Index c, Index h, Index w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar at(Index n, Index c, Index h, Index w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + mcinet::to_string(shape_));
    return data_[0];
  }

  MatrixMap matrix(Index rows, Index cols) { return MatrixMap(data_.data(), rows, cols); }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw ShapeError("cannot reshape " + mcinet::to_string(shape_) + " to " +
                       mcinet::to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void set_zero() { data_.setZero(); }
  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Shape shape_;
  Vector data_;
};

/// Spatial size of a rank-4 map.
struct Extent {
  Index height = 0;
  Index width = 0;
  friend bool operator==(const Extent&, const Extent&) = default;
};

template <typename Scalar>
Extent extent_of(const Tensor<Scalar>& t) {
  return {t.dim(t.rank() - 2), t.dim(t.rank() - 1)};
}

void require_rank(const Shape& shape, Index rank, const char* what);

}  // namespace mcinet

#endif  // MCINET_TENSOR_HPP
