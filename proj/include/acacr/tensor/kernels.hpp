#pragma once

// Forward and adjoint kernels over plain tensors. The tape in ops.hpp wires
// these together; nothing here records gradients.

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "acacr/tensor/tensor.hpp"

namespace acacr::kernels {

template <Real T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <Real T>
using MatrixView = Eigen::Map<RowMatrix<T>>;
template <Real T>
using ConstMatrixView = Eigen::Map<const RowMatrix<T>>;

template <Real T>
ConstMatrixView<T> as_matrix(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return ConstMatrixView<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <Real T>
MatrixView<T> as_matrix(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return MatrixView<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require_matrix(const Shape& s, const char* op) {
  if (s.size() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(s));
}

// ---------------------------------------------------------------------------
// matmul

enum class Transpose { none, lhs, rhs };

// C = op(A) * op(B).
template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Transpose tr = Transpose::none) {
  require_matrix(a.shape(), "matmul");
  require_matrix(b.shape(), "matmul");
  const std::size_t ar = a.dim(0), ac = a.dim(1), br = b.dim(0), bc = b.dim(1);
  const auto A = as_matrix(a, ar, ac);
  const auto B = as_matrix(b, br, bc);
  const std::size_t m = tr == Transpose::lhs ? ac : ar;
  const std::size_t k = tr == Transpose::lhs ? ar : ac;
  const std::size_t k2 = tr == Transpose::rhs ? bc : br;
  const std::size_t n = tr == Transpose::rhs ? br : bc;
  if (k != k2) {
    throw ShapeError("matmul: inner extents differ " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  }
  Tensor<T> out({m, n});
  auto C = as_matrix(out, m, n);
  if (k == 0) return out;
  switch (tr) {
    case Transpose::none: C.noalias() = A * B; break;
    case Transpose::lhs: C.noalias() = A.transpose() * B; break;
    case Transpose::rhs: C.noalias() = A * B.transpose(); break;
  }
  return out;
}

template <Real T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix(a.shape(), "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, zero padding (k-1)/2, output ceil(H/stride).

struct ConvGeometry {
  std::size_t h, w, c_in, k, c_out, stride, pad, out_h, out_w;
};

template <Real T>
ConvGeometry conv_geometry(const Shape& x, const Shape& kernel, std::size_t stride) {
  if (x.size() != 3) throw ShapeError("conv2d: input must be [H, W, C], got " + shape_string(x));
  if (kernel.size() != 4 || kernel[0] != kernel[1]) {
    throw ShapeError("conv2d: kernel must be [k, k, C_in, C_out], got " + shape_string(kernel));
  }
  if (kernel[0] % 2 == 0) throw ShapeError("conv2d: kernel size must be odd, got " + std::to_string(kernel[0]));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (kernel[2] != x[2]) {
    throw ShapeError("conv2d: input has " + std::to_string(x[2]) + " channels, kernel expects " +
                     std::to_string(kernel[2]));
  }
  ConvGeometry g{x[0], x[1], x[2], kernel[0], kernel[3], stride, (kernel[0] - 1) / 2, 0, 0};
  g.out_h = (g.h + stride - 1) / stride;
  g.out_w = (g.w + stride - 1) / stride;
  return g;
}

// Rows index output pixels, columns follow the kernel's (ky, kx, c_in) order.
template <Real T>
Tensor<T> im2col(const Tensor<T>& x, const ConvGeometry& g) {
  const std::size_t cols = g.k * g.k * g.c_in;
  Tensor<T> out({g.out_h * g.out_w, cols});
  T* dst = out.data();
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
        for (std::size_t kx = 0; kx < g.k; ++kx, dst += g.c_in) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) || ix >= static_cast<std::ptrdiff_t>(g.w)) {
            std::fill(dst, dst + g.c_in, T(0));
          } else {
            const T* src = x.data() + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.c_in;
            std::copy(src, src + g.c_in, dst);
          }
        }
      }
    }
  }
  return out;
}

template <Real T>
Tensor<T> col2im(const Tensor<T>& cols, const ConvGeometry& g) {
  Tensor<T> out({g.h, g.w, g.c_in});
  const T* src = cols.data();
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
        for (std::size_t kx = 0; kx < g.k; ++kx, src += g.c_in) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          T* dst = out.data() + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.c_in;
          for (std::size_t c = 0; c < g.c_in; ++c) dst[c] += src[c];
        }
      }
    }
  }
  return out;
}

template <Real T>
bool conv_is_pointwise(const ConvGeometry& g) {
  return g.k == 1 && g.stride == 1;
}

template <Real T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride) {
  const ConvGeometry g = conv_geometry<T>(x.shape(), kernel.shape(), stride);
  const std::size_t rows = g.out_h * g.out_w, inner = g.k * g.k * g.c_in;
  Tensor<T> out({g.out_h, g.out_w, g.c_out});
  auto O = as_matrix(out, rows, g.c_out);
  const auto K = as_matrix(kernel, inner, g.c_out);
  if (conv_is_pointwise<T>(g)) {
    O.noalias() = as_matrix(x, rows, inner) * K;
  } else {
    const Tensor<T> cols = im2col(x, g);
    O.noalias() = as_matrix(cols, rows, inner) * K;
  }
  return out;
}

template <Real T>
Tensor<T> conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride) {
  const ConvGeometry g = conv_geometry<T>(x.shape(), kernel.shape(), stride);
  const std::size_t rows = g.out_h * g.out_w, inner = g.k * g.k * g.c_in;
  const auto G = as_matrix(grad_out, rows, g.c_out);
  const auto K = as_matrix(kernel, inner, g.c_out);
  if (conv_is_pointwise<T>(g)) {
    Tensor<T> dx(x.shape());
    as_matrix(dx, rows, inner).noalias() = G * K.transpose();
    return dx;
  }
  Tensor<T> dcols({rows, inner});
  as_matrix(dcols, rows, inner).noalias() = G * K.transpose();
  return col2im(dcols, g);
}

template <Real T>
Tensor<T> conv2d_grad_kernel(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride) {
  const ConvGeometry g = conv_geometry<T>(x.shape(), kernel.shape(), stride);
  const std::size_t rows = g.out_h * g.out_w, inner = g.k * g.k * g.c_in;
  const auto G = as_matrix(grad_out, rows, g.c_out);
  Tensor<T> dk(kernel.shape());
  auto DK = as_matrix(dk, inner, g.c_out);
  if (conv_is_pointwise<T>(g)) {
    DK.noalias() = as_matrix(x, rows, inner).transpose() * G;
  } else {
    const Tensor<T> cols = im2col(x, g);
    DK.noalias() = as_matrix(cols, rows, inner).transpose() * G;
  }
  return dk;
}

// ---------------------------------------------------------------------------
// row softmax with max subtraction

template <Real T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_matrix(x.shape(), "softmax");
  if (!x.all_finite()) throw NumericError("softmax: non-finite input");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = x.data() + i * c;
    T* o = out.data() + i * c;
    T m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(row[j] - m);
      sum += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= sum;
  }
  return out;
}

// dX_ij = Y_ij (G_ij - sum_k G_ik Y_ik)
template <Real T>
Tensor<T> softmax_rows_grad(const Tensor<T>& grad_out, const Tensor<T>& y) {
  const std::size_t r = y.dim(0), c = y.dim(1);
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < r; ++i) {
    T dot = 0;
    for (std::size_t j = 0; j < c; ++j) dot += grad_out[i * c + j] * y[i * c + j];
    for (std::size_t j = 0; j < c; ++j) dx[i * c + j] = y[i * c + j] * (grad_out[i * c + j] - dot);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// reduce_mean / expand along one axis (extent kept as 1)

struct AxisSplit {
  std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " + shape_string(s));
  }
  AxisSplit a{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

template <Real T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::size_t axis) {
  const AxisSplit a = split_axis(x.shape(), axis, "reduce_mean");
  if (a.extent == 0) throw ShapeError("reduce_mean: empty axis");
  Shape shape = x.shape();
  shape[axis] = 1;
  Tensor<T> out(shape);
  for (std::size_t o = 0; o < a.outer; ++o) {
    for (std::size_t i = 0; i < a.inner; ++i) {
      T sum = 0;
      for (std::size_t e = 0; e < a.extent; ++e) sum += x[(o * a.extent + e) * a.inner + i];
      out[o * a.inner + i] = sum / static_cast<T>(a.extent);
    }
  }
  return out;
}

template <Real T>
Tensor<T> expand(const Tensor<T>& x, std::size_t axis, std::size_t n) {
  const AxisSplit a = split_axis(x.shape(), axis, "expand");
  if (a.extent != 1) throw ShapeError("expand: axis extent must be 1, got " + shape_string(x.shape()));
  Shape shape = x.shape();
  shape[axis] = n;
  Tensor<T> out(shape);
  for (std::size_t o = 0; o < a.outer; ++o)
    for (std::size_t e = 0; e < n; ++e)
      for (std::size_t i = 0; i < a.inner; ++i) out[(o * n + e) * a.inner + i] = x[o * a.inner + i];
  return out;
}

// Adjoint of expand: sum over the expanded axis.
template <Real T>
Tensor<T> sum_axis_keep(const Tensor<T>& g, std::size_t axis) {
  const AxisSplit a = split_axis(g.shape(), axis, "sum_axis");
  Shape shape = g.shape();
  shape[axis] = 1;
  Tensor<T> out(shape);
  for (std::size_t o = 0; o < a.outer; ++o)
    for (std::size_t e = 0; e < a.extent; ++e)
      for (std::size_t i = 0; i < a.inner; ++i) out[o * a.inner + i] += g[(o * a.extent + e) * a.inner + i];
  return out;
}

// ---------------------------------------------------------------------------
// bilinear upsampling, half-pixel centres, clamped borders

struct LerpTap {
  std::size_t lo, hi;
  double w_hi;
};

inline std::vector<LerpTap> lerp_taps(std::size_t src, std::size_t factor) {
  std::vector<LerpTap> taps(src * factor);
  for (std::size_t d = 0; d < taps.size(); ++d) {
    double pos = (static_cast<double>(d) + 0.5) / static_cast<double>(factor) - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, src - 1);
    taps[d] = {lo, hi, pos - static_cast<double>(lo)};
  }
  return taps;
}

inline void check_upsample(const Shape& s, std::size_t factor) {
  if (s.size() != 3) throw ShapeError("bilinear_upsample: input must be [H, W, C], got " + shape_string(s));
  if (factor < 1) throw ShapeError("bilinear_upsample: factor must be >= 1");
}

template <Real T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::size_t factor) {
  check_upsample(x.shape(), factor);
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (factor == 1) return x;
  const auto ty = lerp_taps(h, factor), tx = lerp_taps(w, factor);
  Tensor<T> out({h * factor, w * factor, c});
  for (std::size_t y = 0; y < ty.size(); ++y) {
    const T wy = static_cast<T>(ty[y].w_hi);
    for (std::size_t xx = 0; xx < tx.size(); ++xx) {
      const T wx = static_cast<T>(tx[xx].w_hi);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T top = x.at(ty[y].lo, tx[xx].lo, ch) * (T(1) - wx) + x.at(ty[y].lo, tx[xx].hi, ch) * wx;
        const T bot = x.at(ty[y].hi, tx[xx].lo, ch) * (T(1) - wx) + x.at(ty[y].hi, tx[xx].hi, ch) * wx;
        out.at(y, xx, ch) = top * (T(1) - wy) + bot * wy;
      }
    }
  }
  return out;
}

template <Real T>
Tensor<T> bilinear_upsample_grad(const Tensor<T>& g, const Shape& in_shape, std::size_t factor) {
  const std::size_t h = in_shape[0], w = in_shape[1], c = in_shape[2];
  if (factor == 1) return g;
  const auto ty = lerp_taps(h, factor), tx = lerp_taps(w, factor);
  Tensor<T> dx(in_shape);
  for (std::size_t y = 0; y < ty.size(); ++y) {
    const T wy = static_cast<T>(ty[y].w_hi);
    for (std::size_t xx = 0; xx < tx.size(); ++xx) {
      const T wx = static_cast<T>(tx[xx].w_hi);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T v = g.at(y, xx, ch);
        dx.at(ty[y].lo, tx[xx].lo, ch) += v * (T(1) - wy) * (T(1) - wx);
        dx.at(ty[y].lo, tx[xx].hi, ch) += v * (T(1) - wy) * wx;
        dx.at(ty[y].hi, tx[xx].lo, ch) += v * wy * (T(1) - wx);
        dx.at(ty[y].hi, tx[xx].hi, ch) += v * wy * wx;
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// patchify: non-overlapping s x s patches in row-major block order, each
// flattened in (row, col, channel) order.

inline void check_patch(const Shape& s, std::size_t patch, const char* op) {
  if (s.size() != 3) throw ShapeError(std::string(op) + ": input must be [H, W, C], got " + shape_string(s));
  if (patch < 1) throw ShapeError(std::string(op) + ": patch size must be >= 1");
  if (s[0] % patch != 0 || s[1] % patch != 0) {
    throw ShapeError(std::string(op) + ": patch size " + std::to_string(patch) + " does not divide " +
                     std::to_string(s[0]) + "x" + std::to_string(s[1]));
  }
}

template <Real T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t s) {
  check_patch(x.shape(), s, "patchify");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t gw = w / s, n = (h / s) * gw, d = s * s * c;
  Tensor<T> out({n, d});
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t py = (p / gw) * s, px = (p % gw) * s;
    T* dst = out.data() + p * d;
    for (std::size_t dy = 0; dy < s; ++dy) {
      const T* src = x.data() + ((py + dy) * w + px) * c;
      dst = std::copy(src, src + s * c, dst);
    }
  }
  return out;
}

template <Real T>
Tensor<T> unpatchify(const Tensor<T>& p, const Shape& image, std::size_t s) {
  check_patch(image, s, "unpatchify");
  const std::size_t h = image[0], w = image[1], c = image[2];
  const std::size_t gw = w / s, n = (h / s) * gw, d = s * s * c;
  if (p.shape() != Shape{n, d}) {
    throw ShapeError("unpatchify: expected " + shape_string({n, d}) + ", got " + shape_string(p.shape()));
  }
  Tensor<T> out(image);
  for (std::size_t q = 0; q < n; ++q) {
    const std::size_t py = (q / gw) * s, px = (q % gw) * s;
    const T* src = p.data() + q * d;
    for (std::size_t dy = 0; dy < s; ++dy, src += s * c) {
      std::copy(src, src + s * c, out.data() + ((py + dy) * w + px) * c);
    }
  }
  return out;
}

}  // namespace acacr::kernels
