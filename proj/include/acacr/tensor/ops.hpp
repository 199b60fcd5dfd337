#pragma once

// Differentiable operations on tape variables. Each function computes its
// value with the kernels in kernels.hpp and records the adjoint.

#include <cmath>
#include <string>

#include "acacr/tensor/kernels.hpp"
#include "acacr/tensor/tape.hpp"

namespace acacr {

namespace detail {

template <Real T>
Tape<T>& tape_of(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape) throw Error(std::string(op) + ": operands recorded on different tapes");
  return *a.tape;
}

template <Real T, class F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <Real T, class F>
Tensor<T> map(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

template <Real T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& tape = detail::tape_of(a, b, "add");
  Tensor<T> out = detail::zip(a.value(), b.value(), "add", [](T x, T y) { return x + y; });
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  }, "add");
}

template <Real T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& tape = detail::tape_of(a, b, "sub");
  Tensor<T> out = detail::zip(a.value(), b.value(), "sub", [](T x, T y) { return x - y; });
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, detail::map(g, [](T v) { return -v; }));
  }, "sub");
}

template <Real T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& tape = detail::tape_of(a, b, "mul");
  Tensor<T> out = detail::zip(a.value(), b.value(), "mul", [](T x, T y) { return x * y; });
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, detail::zip(g, b.value(), "mul", [](T x, T y) { return x * y; }));
    t.accumulate(b, detail::zip(g, a.value(), "mul", [](T x, T y) { return x * y; }));
  }, "mul");
}

template <Real T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = detail::map(a.value(), [s](T x) { return x * s; });
  return a.tape->record(std::move(out), {a}, [a, s](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, detail::map(g, [s](T v) { return v * s; }));
  }, "scale");
}

template <Real T>
Var<T> add_scalar(Var<T> a, T s) {
  Tensor<T> out = detail::map(a.value(), [s](T x) { return x + s; });
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) { t.accumulate(a, g); },
                        "add_scalar");
}

// Derivative is taken as 0 at exactly 0.
template <Real T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = detail::map(a.value(), [](T x) { return x > T(0) ? x : T(0); });
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, detail::zip(g, a.value(), "relu", [](T gv, T x) { return x > T(0) ? gv : T(0); }));
  }, "relu");
}

// ---------------------------------------------------------------------------
// linear algebra

template <Real T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& tape = detail::tape_of(a, b, "matmul");
  using kernels::Transpose;
  return tape.record(kernels::matmul(a.value(), b.value()), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a, kernels::matmul(g, b.value(), Transpose::rhs));
    if (t.requires_grad(b)) t.accumulate(b, kernels::matmul(a.value(), g, Transpose::lhs));
  }, "matmul");
}

// a * b^T without materialising the transpose.
template <Real T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  auto& tape = detail::tape_of(a, b, "matmul_nt");
  using kernels::Transpose;
  return tape.record(kernels::matmul(a.value(), b.value(), Transpose::rhs), {a, b},
                     [a, b](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(a)) t.accumulate(a, kernels::matmul(g, b.value()));
                       if (t.requires_grad(b)) t.accumulate(b, kernels::matmul(g, a.value(), Transpose::lhs));
                     },
                     "matmul_nt");
}

template <Real T>
Var<T> transpose(Var<T> a) {
  return a.tape->record(kernels::transpose(a.value()), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, kernels::transpose(g));
  }, "transpose");
}

// ---------------------------------------------------------------------------
// convolution

template <Real T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::size_t stride = 1) {
  auto& tape = detail::tape_of(x, kernel, "conv2d");
  return tape.record(kernels::conv2d(x.value(), kernel.value(), stride), {x, kernel},
                     [x, kernel, stride](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(x)) {
                         t.accumulate(x, kernels::conv2d_grad_input(g, x.value(), kernel.value(), stride));
                       }
                       if (t.requires_grad(kernel)) {
                         t.accumulate(kernel, kernels::conv2d_grad_kernel(g, x.value(), kernel.value(), stride));
                       }
                     },
                     "conv2d");
}

// ---------------------------------------------------------------------------
// normalisation and reductions

template <Real T>
Var<T> softmax_rows(Var<T> x) {
  Tensor<T> y = kernels::softmax_rows(x.value());
  return x.tape->record(y, {x}, [x, y](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, kernels::softmax_rows_grad(g, y));
  }, "softmax");
}

template <Real T>
Var<T> reduce_mean(Var<T> x, std::size_t axis) {
  const std::size_t n = x.value().dim(axis);
  return x.tape->record(kernels::reduce_mean(x.value(), axis), {x}, [x, axis, n](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> e = kernels::expand(g, axis, n);
    for (auto& v : e.storage()) v /= static_cast<T>(n);
    t.accumulate(x, e);
  }, "reduce_mean");
}

// Repeats an extent-1 axis n times.
template <Real T>
Var<T> expand(Var<T> x, std::size_t axis, std::size_t n) {
  return x.tape->record(kernels::expand(x.value(), axis, n), {x}, [x, axis](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, kernels::sum_axis_keep(g, axis));
  }, "expand");
}

template <Real T>
Var<T> sum(Var<T> x) {
  T s = 0;
  for (T v : x.value().values()) s += v;
  return x.tape->record(Tensor<T>::scalar(s), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, Tensor<T>(x.shape(), g.item()));
  }, "sum");
}

template <Real T>
Var<T> mean(Var<T> x) {
  if (x.value().empty()) throw ShapeError("mean: empty tensor");
  const T n = static_cast<T>(x.value().size());
  return scale(sum(x), T(1) / n);
}

// ---------------------------------------------------------------------------
// resampling and reshaping

template <Real T>
Var<T> bilinear_upsample(Var<T> x, std::size_t factor) {
  return x.tape->record(kernels::bilinear_upsample(x.value(), factor), {x},
                        [x, factor](Tape<T>& t, const Tensor<T>& g) {
                          t.accumulate(x, kernels::bilinear_upsample_grad(g, x.shape(), factor));
                        },
                        "bilinear_upsample");
}

template <Real T>
Var<T> patchify(Var<T> x, std::size_t s) {
  return x.tape->record(kernels::patchify(x.value(), s), {x}, [x, s](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, kernels::unpatchify(g, x.shape(), s));
  }, "patchify");
}

template <Real T>
Var<T> unpatchify(Var<T> p, const Shape& image, std::size_t s) {
  return p.tape->record(kernels::unpatchify(p.value(), image, s), {p}, [p, s](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(p, kernels::patchify(g, s));
  }, "unpatchify");
}

template <Real T>
Var<T> reshape(Var<T> x, Shape shape) {
  return x.tape->record(x.value().reshaped(std::move(shape)), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, g.reshaped(x.shape()));
  }, "reshape");
}

// ---------------------------------------------------------------------------
// losses

// Mean absolute error; the subgradient at a tie is 0.
template <Real T>
Var<T> l1_loss(Var<T> pred, Var<T> target) {
  auto& tape = detail::tape_of(pred, target, "l1_loss");
  const Tensor<T>& p = pred.value();
  const Tensor<T>& y = target.value();
  require_same_shape(p, y, "l1_loss");
  if (p.empty()) throw ShapeError("l1_loss: empty tensor");
  T s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - y[i]);
  const T n = static_cast<T>(p.size());
  return tape.record(Tensor<T>::scalar(s / n), {pred, target}, [pred, target, n](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& pv = pred.value();
    const Tensor<T>& yv = target.value();
    const T k = g.item() / n;
    Tensor<T> d(pv.shape());
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const T diff = pv[i] - yv[i];
      d[i] = diff > T(0) ? k : (diff < T(0) ? -k : T(0));
    }
    if (t.requires_grad(pred)) t.accumulate(pred, d);
    if (t.requires_grad(target)) t.accumulate(target, detail::map(d, [](T v) { return -v; }));
  }, "l1_loss");
}

}  // namespace acacr
