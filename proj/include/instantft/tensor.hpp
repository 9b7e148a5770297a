#pragma once

#include <Eigen/Dense>

#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "instantft/errors.hpp"

namespace instantft {

using Index = Eigen::Index;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Row-major to match the flat layout of Tensor storage.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatMap = Eigen::Map<Mat<Scalar>>;

template <typename Scalar>
using ConstMatMap = Eigen::Map<const Mat<Scalar>>;

using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense n-d array of scalars stored flat in row-major order.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vec<Scalar>::Zero(shape_numel(shape_))) {}

  Tensor(Shape shape, Vec<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeError("tensor shape " + shape_str(shape_) + " does not hold " + std::to_string(data_.size()) +
                       " values");
    }
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Eigen::Map<const Vec<Scalar>>(values.begin(), static_cast<Index>(values.size()))) {}

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index size() const { return data_.size(); }

  Vec<Scalar>& vec() { return data_; }
  const Vec<Scalar>& vec() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> span() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> span() const { return {data_.data(), static_cast<std::size_t>(data_.size())}; }

  Scalar& operator[](Index i) { return data_[i]; }
  const Scalar& operator[](Index i) const { return data_[i]; }

  // Row-major matrix view over the whole buffer.
  MatMap<Scalar> matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return MatMap<Scalar>(data_.data(), rows, cols);
  }
  ConstMatMap<Scalar> matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return ConstMatMap<Scalar>(data_.data(), rows, cols);
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }
  Tensor flattened() const { return Tensor({size()}, data_); }

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape_, data_.template cast<To>());
  }

  void set_zero() { data_.setZero(); }
  bool all_finite() const { return data_.allFinite(); }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_.size() == other.data_.size() &&
           std::equal(data_.data(), data_.data() + data_.size(), other.data_.data());
  }

 private:
  void check_view(Index rows, Index cols) const {
    if (rows * cols != data_.size()) {
      throw ShapeError("cannot view " + shape_str(shape_) + " as " + std::to_string(rows) + "x" +
                       std::to_string(cols));
    }
  }

  Shape shape_;
  Vec<Scalar> data_;
};

// Weight and bias of one Conv or FC layer.
// FC: weight [d_out, d_in]. Conv: weight [c_out, c_in, k, k]. Bias: [d_out] or [c_out].
template <typename Scalar>
struct LayerParams {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;

  bool is_conv() const { return weight.rank() == 4; }
  Index out_features() const { return weight.dim(0); }
  Index fan_in() const { return weight.size() / weight.dim(0); }
  Index param_count() const { return weight.size() + bias.size(); }

  // Weight viewed as [out, fan_in].
  ConstMatMap<Scalar> weight_matrix() const { return weight.matrix(out_features(), fan_in()); }
  MatMap<Scalar> weight_matrix() { return weight.matrix(out_features(), fan_in()); }

  static LayerParams zeros_like(const LayerParams& p) { return {Tensor<Scalar>(p.weight.shape()), Tensor<Scalar>(p.bias.shape())}; }

  template <typename To>
  LayerParams<To> cast() const {
    return {weight.template cast<To>(), bias.template cast<To>()};
  }

  bool operator==(const LayerParams& other) const = default;
};

template <typename Scalar>
void ensure_finite(const Tensor<Scalar>& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite value in ") + what);
}

template <typename Scalar>
void ensure_shape(const Tensor<Scalar>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(what) + ": expected shape " + shape_str(expected) + ", got " + shape_str(t.shape()));
  }
}

}  // namespace instantft
