#pragma once

// Procedural cloudy/clear pairs. Every generator is a pure function of its
// seed: scenes from value-noise octaves plus a few hard-edged land-cover
// regions, clouds from fractal noise thresholded at a coverage quantile.

#include <algorithm>
#include <cmath>
#include <vector>

#include "acacr/core/rng.hpp"
#include "acacr/tensor/tensor.hpp"

namespace acacr {

template <Real T>
struct SamplePair {
  Tensor<T> clear;   // [H, W, C_in] in [0, 1]
  Tensor<T> cloudy;  // same shape
  Tensor<T> mask;    // [H, W, 1] cloud opacity in [0, 1]
  std::uint64_t seed = 0;
};

namespace detail {

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// One octave of value noise on a (cells + 1)^2 lattice, values in [0, 1].
inline std::vector<double> value_noise(std::size_t h, std::size_t w, std::size_t cells, RngStream& rng) {
  const std::size_t n = cells + 1;
  std::vector<double> lattice(n * n);
  for (auto& v : lattice) v = rng.uniform();
  std::vector<double> out(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(h) * static_cast<double>(cells);
    const auto y0 = std::min(static_cast<std::size_t>(fy), cells - 1);
    const double ty = smoothstep(fy - static_cast<double>(y0));
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(w) * static_cast<double>(cells);
      const auto x0 = std::min(static_cast<std::size_t>(fx), cells - 1);
      const double tx = smoothstep(fx - static_cast<double>(x0));
      const double a = lattice[y0 * n + x0], b = lattice[y0 * n + x0 + 1];
      const double c = lattice[(y0 + 1) * n + x0], d = lattice[(y0 + 1) * n + x0 + 1];
      out[y * w + x] = (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
    }
  }
  return out;
}

// Octave sum with halving amplitude, rescaled to [0, 1].
inline std::vector<double> fractal_noise(std::size_t h, std::size_t w, std::size_t base_cells, std::size_t octaves,
                                         RngStream& rng) {
  std::vector<double> acc(h * w, 0.0);
  double amp = 1.0;
  std::size_t cells = base_cells;
  for (std::size_t o = 0; o < octaves; ++o, amp *= 0.5, cells *= 2) {
    const auto layer = value_noise(h, w, cells, rng);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += amp * layer[i];
  }
  const auto [lo, hi] = std::minmax_element(acc.begin(), acc.end());
  const double span = *hi - *lo;
  const double base = *lo;
  for (auto& v : acc) v = span > 0 ? (v - base) / span : 0.5;
  return acc;
}

}  // namespace detail

inline void require_extents(std::size_t h, std::size_t w) {
  if (h < 8 || w < 8) throw ConfigError("synthetic images need extents >= 8, got " + std::to_string(h) + "x" + std::to_string(w));
}

/// Clear scene: a shared low-frequency field mixed per band with its own
/// texture, overlaid by rectangular fields (flat colour, checker or strips).
template <Real T>
Tensor<T> synth_clear(std::uint64_t seed, std::size_t h, std::size_t w, std::size_t c_in) {
  require_extents(h, w);
  if (c_in < 1) throw ConfigError("synthetic images need at least one band");
  RngStream rng(seed);
  const auto shared = detail::fractal_noise(h, w, 2, 3, rng);
  std::vector<double> img(h * w * c_in);
  for (std::size_t b = 0; b < c_in; ++b) {
    const auto own = detail::fractal_noise(h, w, 4, 2, rng);
    const double gain = rng.uniform(0.45, 0.75), offset = rng.uniform(0.05, 0.2);
    for (std::size_t i = 0; i < h * w; ++i) img[i * c_in + b] = offset + gain * (0.7 * shared[i] + 0.3 * own[i]);
  }

  const std::size_t regions = 2 + rng.below(3);
  for (std::size_t r = 0; r < regions; ++r) {
    const std::size_t rh = h / 4 + rng.below(h / 2), rw = w / 4 + rng.below(w / 2);
    const std::size_t top = rng.below(h - rh + 1), left = rng.below(w - rw + 1);
    const std::size_t kind = rng.below(3);
    const std::size_t period = 2 + rng.below(4);
    std::vector<double> colour(c_in), alt(c_in);
    for (std::size_t b = 0; b < c_in; ++b) {
      colour[b] = rng.uniform(0.1, 0.8);
      alt[b] = rng.uniform(0.1, 0.8);
    }
    for (std::size_t y = top; y < top + rh; ++y) {
      for (std::size_t x = left; x < left + rw; ++x) {
        bool second = false;
        if (kind == 1) second = ((y / period) + (x / period)) % 2 == 1;  // checker
        if (kind == 2) second = ((x + y) / period) % 2 == 1;             // diagonal strips
        for (std::size_t b = 0; b < c_in; ++b) {
          double& v = img[(y * w + x) * c_in + b];
          v = 0.35 * v + 0.65 * (second ? alt[b] : colour[b]);
        }
      }
    }
  }
  std::vector<T> data(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) data[i] = static_cast<T>(std::clamp(img[i], 0.0, 1.0));
  return Tensor<T>({h, w, c_in}, std::move(data));
}

/// Cloud opacity: fractal noise thresholded at its (1 - coverage) quantile.
/// softness widens the linear ramp around the threshold (0 = hard edges).
template <Real T>
Tensor<T> synth_mask(std::uint64_t seed, std::size_t h, std::size_t w, double coverage, double softness) {
  require_extents(h, w);
  if (!(coverage >= 0.0 && coverage <= 1.0)) throw ConfigError("cloud coverage must lie in [0, 1]");
  if (!(softness >= 0.0 && softness <= 1.0)) throw ConfigError("cloud softness must lie in [0, 1]");
  if (coverage == 0.0) return Tensor<T>({h, w, 1}, T(0));
  if (coverage == 1.0) return Tensor<T>({h, w, 1}, T(1));
  RngStream rng(seed);
  const auto noise = detail::fractal_noise(h, w, 2, 4, rng);
  std::vector<double> sorted = noise;
  std::sort(sorted.begin(), sorted.end());
  const auto q = static_cast<std::size_t>(std::floor((1.0 - coverage) * static_cast<double>(sorted.size() - 1)));
  const double threshold = sorted[q];
  const double half_width = 0.25 * softness;
  Tensor<T> mask({h, w, 1});
  for (std::size_t i = 0; i < noise.size(); ++i) {
    double m;
    if (half_width > 0) {
      m = std::clamp(0.5 + (noise[i] - threshold) / (2.0 * half_width), 0.0, 1.0);
    } else {
      m = noise[i] > threshold ? 1.0 : 0.0;
    }
    mask[i] = static_cast<T>(m);
  }
  return mask;
}

/// cloudy = mask * colour + (1 - mask) * clear, per band.
template <Real T>
Tensor<T> composite(const Tensor<T>& clear, const Tensor<T>& mask, const std::vector<double>& colour) {
  if (clear.rank() != 3 || mask.rank() != 3 || mask.dim(2) != 1 || mask.dim(0) != clear.dim(0) ||
      mask.dim(1) != clear.dim(1)) {
    throw ShapeError("composite: mask " + shape_string(mask.shape()) + " incompatible with image " +
                     shape_string(clear.shape()));
  }
  const std::size_t c = clear.dim(2);
  if (colour.size() != c) throw ShapeError("composite: cloud colour needs one value per band");
  Tensor<T> out(clear.shape());
  for (std::size_t p = 0; p < mask.size(); ++p) {
    const double a = mask[p];
    for (std::size_t b = 0; b < c; ++b) {
      out[p * c + b] = static_cast<T>(a * colour[b] + (1.0 - a) * static_cast<double>(clear[p * c + b]));
    }
  }
  return out;
}

template <Real T>
Tensor<T> composite(const Tensor<T>& clear, const Tensor<T>& mask, double colour = 0.95) {
  return composite(clear, mask, std::vector<double>(clear.rank() == 3 ? clear.dim(2) : 0, colour));
}

namespace detail {

template <Real T>
Tensor<T> crop_window(const Tensor<T>& x, std::size_t top, std::size_t left, std::size_t size) {
  const std::size_t w = x.dim(1), c = x.dim(2);
  Tensor<T> out({size, size, c});
  for (std::size_t y = 0; y < size; ++y) {
    const T* src = x.data() + ((top + y) * w + left) * c;
    std::copy(src, src + size * c, out.data() + y * size * c);
  }
  return out;
}

}  // namespace detail

/// Same square window for clear, cloudy and mask. `multiple` is the network's
/// extent constraint (2s).
template <Real T>
SamplePair<T> random_crop(const SamplePair<T>& pair, std::size_t crop, RngStream& rng, std::size_t multiple = 1) {
  const std::size_t h = pair.clear.dim(0), w = pair.clear.dim(1);
  if (crop == 0 || crop > h || crop > w) {
    throw ConfigError("crop " + std::to_string(crop) + " does not fit a " + std::to_string(h) + "x" + std::to_string(w) +
                      " sample");
  }
  if (multiple > 0 && crop % multiple != 0) {
    throw ConfigError("crop " + std::to_string(crop) + " must be a multiple of " + std::to_string(multiple));
  }
  const std::size_t top = rng.below(h - crop + 1), left = rng.below(w - crop + 1);
  return {detail::crop_window(pair.clear, top, left, crop), detail::crop_window(pair.cloudy, top, left, crop),
          detail::crop_window(pair.mask, top, left, crop), pair.seed};
}

}  // namespace acacr
