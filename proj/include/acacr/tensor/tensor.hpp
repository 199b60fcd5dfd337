#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "acacr/core/error.hpp"

namespace acacr {

using Shape = std::vector<std::size_t>;

template <class T>
concept Real = std::same_as<T, float> || std::same_as<T, double>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. Feature maps use [H, W, C], matrices [rows, cols],
/// convolution kernels [k, k, C_in, C_out].
template <Real T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data has " + std::to_string(data_.size()) + " elements, shape " +
                       shape_string(shape_) + " needs " + std::to_string(shape_size(shape_)));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = T(1);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const { return data_.empty(); }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  T& at(std::size_t y, std::size_t x, std::size_t c) { return data_[(y * shape_[1] + x) * shape_[2] + c]; }
  const T& at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }

  T item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <Real U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <Real T>
void require_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite value in result");
}

template <Real T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <Real T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace acacr
