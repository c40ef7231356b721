// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "cutie/errors.hpp"

namespace cutie {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_to_string(const Shape &shape);

/// Dense row-major array. `float` is the engine type; `double` is used by
/// test oracles and the gradient checker.
template <typename T>
class BasicTensor {
  static_assert(std::is_floating_point_v<T>, "BasicTensor holds floating point values");

public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  BasicTensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_numel(shape_)) {
      throw DimensionError("tensor of shape " + shape_to_string(shape_) + " given " +
                           std::to_string(data_.size()) + " values");
    }
  }

  const Shape &shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                           shape_to_string(shape_));
    }
    return shape_[axis];
  }

  T *ptr() noexcept { return data_.data(); }
  const T *ptr() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T &operator[](std::size_t i) noexcept { return data_[i]; }
  const T &operator[](std::size_t i) const noexcept { return data_[i]; }

  // Rank-2 access (row, col).
  T &at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  const T &at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

  // Rank-3 access (channel, y, x).
  T &at(std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  const T &at(std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  /// Contiguous slice along the leading axis.
  std::span<T> row(std::size_t r) noexcept {
    const std::size_t stride = data_.size() / shape_[0];
    return {data_.data() + r * stride, stride};
  }
  std::span<const T> row(std::size_t r) const noexcept {
    const std::size_t stride = data_.size() / shape_[0];
    return {data_.data() + r * stride, stride};
  }

  BasicTensor reshaped(Shape shape) const & {
    BasicTensor out = *this;
    return std::move(out).reshaped(std::move(shape));
  }
  BasicTensor reshaped(Shape shape) && {
    if (shape_numel(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    shape_ = std::move(shape);
    return std::move(*this);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const BasicTensor &, const BasicTensor &) = default;

private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Same shape and identical bit patterns (distinguishes -0.0 from 0.0).
template <typename T>
bool bitwise_equal(const BasicTensor<T> &a, const BasicTensor<T> &b) {
  return a.shape() == b.shape() &&
         (a.numel() == 0 || std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(T)) == 0);
}

} // namespace cutie
