#pragma once

#include <cmath>

#include "acacr/core/rng.hpp"
#include "acacr/tensor/tensor.hpp"

namespace acacr {

// He-normal for a [k, k, C_in, C_out] kernel: std = sqrt(2 / (k * k * C_in)).
template <Real T>
Tensor<T> he_normal(const Shape& kernel_shape, RngStream& rng) {
  if (kernel_shape.size() != 4) throw ShapeError("he_normal: expected a conv kernel shape");
  const double fan_in = static_cast<double>(kernel_shape[0] * kernel_shape[1] * kernel_shape[2]);
  const double std = std::sqrt(2.0 / fan_in);
  Tensor<T> k(kernel_shape);
  for (auto& v : k.storage()) v = static_cast<T>(rng.normal() * std);
  return k;
}

template <Real T>
Tensor<T> uniform_tensor(const Shape& shape, RngStream& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<T> t(shape);
  for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <Real T>
Tensor<T> normal_tensor(const Shape& shape, RngStream& rng, double std = 1.0) {
  Tensor<T> t(shape);
  for (auto& v : t.storage()) v = static_cast<T>(rng.normal() * std);
  return t;
}

}  // namespace acacr
