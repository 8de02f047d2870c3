// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aligncruse/error.hpp"

namespace acrs {

using Index = std::ptrdiff_t;
using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1},
                         [](Index a, int b) { return a * b; });
}

/// Allocator with a fixed base alignment. Vectorized Eigen reductions over
/// mapped buffers split their loops by address, so a fixed alignment keeps
/// results bit-identical from run to run.
template <typename T, std::size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Align})); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, std::align_val_t{Align}); }
  template <typename U>
  bool operator==(const AlignedAllocator<U, Align>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major array. Activations use the (batch, channel, time,
/// frequency) layout; parameters use whatever rank the layer needs.
template <typename Scalar>
class BasicTensor {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using VectorMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
  using ConstVectorMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_size(shape_)), fill) {}
  BasicTensor(std::initializer_list<int> shape, Scalar fill = Scalar(0))
      : BasicTensor(Shape(shape), fill) {}
  BasicTensor(Shape shape, const std::vector<Scalar>& values)
      : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    require(static_cast<Index>(data_.size()) == shape_size(shape_), ErrorKind::kShape,
            "tensor data does not match shape " + shape_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i < 0 ? rank() + i : i)]; }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }
  AlignedVector<Scalar>& storage() { return data_; }
  const AlignedVector<Scalar>& storage() const { return data_; }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  // 4-D accessors for (n, c, t, f) activations.
  Scalar& at(int n, int c, int t, int f) { return data_[offset(n, c, t, f)]; }
  Scalar at(int n, int c, int t, int f) const { return data_[offset(n, c, t, f)]; }

  VectorMap vec() { return VectorMap(data(), size()); }
  ConstVectorMap vec() const { return ConstVectorMap(data(), size()); }
  MatrixMap matrix(Index rows, Index cols) {
    require(rows * cols == size(), ErrorKind::kShape, "bad matrix view");
    return MatrixMap(data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    require(rows * cols == size(), ErrorKind::kShape, "bad matrix view");
    return ConstMatrixMap(data(), rows, cols);
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(Shape shape) {
    require(shape_size(shape) == size(), ErrorKind::kShape,
            "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    shape_ = std::move(shape);
  }

  bool all_finite() const {
    for (Scalar v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename Other>
  BasicTensor<Other> cast() const {
    BasicTensor<Other> out(shape_);
    std::copy(data_.begin(), data_.end(), out.data());
    return out;
  }

 private:
  std::size_t offset(int n, int c, int t, int f) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + t) * shape_[3] + f;
  }

  Shape shape_;
  AlignedVector<Scalar> data_;
};

using Tensor = BasicTensor<double>;

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace acrs
