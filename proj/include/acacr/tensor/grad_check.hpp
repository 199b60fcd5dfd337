#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <vector>

#include "acacr/core/rng.hpp"
#include "acacr/tensor/tape.hpp"

namespace acacr {

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates checked per input; 0 checks all of them. When sampling, the
  // coordinates are drawn without replacement from `seed`.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
};

namespace detail {

inline std::vector<std::size_t> pick_coords(std::size_t n, std::size_t max_coords, RngStream& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (max_coords == 0 || max_coords >= n) return idx;
  for (std::size_t i = 0; i < max_coords; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <class F>
double eval_scalar(F& f, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& x : inputs) vars.push_back(tape.constant(x));
  const Var<double> out = f(tape, std::span<const Var<double>>(vars));
  if (out.value().size() != 1) throw ShapeError("grad_check: function must be scalar-valued");
  return out.value().item();
}

}  // namespace detail

/// Compares tape gradients against central differences (f(x+h) - f(x-h)) / 2h
/// in double precision. The error per coordinate is
/// |analytic - numeric| / max(1, |analytic|, |numeric|); the maximum is returned.
template <class F>
  requires std::invocable<F&, Tape<double>&, std::span<const Var<double>>>
GradCheckResult grad_check(F f, std::vector<Tensor<double>> inputs, const GradCheckOptions& opt = {}) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : inputs) vars.push_back(tape.variable(x));
    const Var<double> out = f(tape, std::span<const Var<double>>(vars));
    if (out.value().size() != 1) throw ShapeError("grad_check: function must be scalar-valued");
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  RngStream rng(opt.seed);
  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i : detail::pick_coords(inputs[k].size(), opt.max_coords, rng)) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + opt.step;
      const double up = detail::eval_scalar(f, inputs);
      inputs[k][i] = orig - opt.step;
      const double down = detail::eval_scalar(f, inputs);
      inputs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.coords_checked;
    }
  }
  return result;
}

// Single-input convenience form.
template <class F>
  requires std::invocable<F&, Tape<double>&, Var<double>>
double grad_check(F f, const Tensor<double>& x, double step = 1e-5) {
  auto wrapped = [&f](Tape<double>& t, std::span<const Var<double>> v) { return f(t, v[0]); };
  return grad_check(wrapped, std::vector<Tensor<double>>{x}, GradCheckOptions{step}).max_rel_error;
}

}  // namespace acacr
