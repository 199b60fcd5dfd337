#pragma once

// Adam with bias correction.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "acacr/tensor/tensor.hpp"

namespace acacr {

template <Real T>
struct OptimState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t t = 0;
  double lr = 7e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Zero moments shaped like `params`.
template <Real T>
OptimState<T> make_optim_state(std::span<const Tensor<T>* const> params, double lr) {
  OptimState<T> s;
  s.lr = lr;
  for (const Tensor<T>* p : params) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

template <Real T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, OptimState<T>& s) {
  if (params.size() != grads.size() || params.size() != s.m.size() || params.size() != s.v.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters, " + std::to_string(grads.size()) +
                     " gradients, " + std::to_string(s.m.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], grads[i], "adam_step");
    require_same_shape(*params[i], s.m[i], "adam_step");
    require_same_shape(*params[i], s.v[i], "adam_step");
    if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i));
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    Tensor<T>& m = s.m[i];
    Tensor<T>& v = s.v[i];
    const Tensor<T>& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = s.beta1 * static_cast<double>(m[k]) + (1.0 - s.beta1) * gk;
      const double vk = s.beta2 * static_cast<double>(v[k]) + (1.0 - s.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = s.lr * (mk / c1) / (std::sqrt(vk / c2) + s.eps);
      p[k] = static_cast<T>(static_cast<double>(p[k]) - update);
    }
  }
}

}  // namespace acacr
