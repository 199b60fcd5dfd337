#pragma once

// Image-quality metrics. X is the prediction, Y the reference, both with
// values in [0, L]. Statistics accumulate in double regardless of T.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "acacr/tensor/tensor.hpp"

namespace acacr::metrics {

inline constexpr double kPeak = 255.0;
inline constexpr double kK1 = 0.01;
inline constexpr double kK2 = 0.03;

enum class SsimMode { global, windowed };

inline const char* to_string(SsimMode m) { return m == SsimMode::global ? "global" : "windowed"; }

template <Real T>
double mae(const Tensor<T>& x, const Tensor<T>& y) {
  require_same_shape(x, y, "mae");
  if (x.empty()) throw ShapeError("mae: empty images");
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(static_cast<double>(x[i]) - static_cast<double>(y[i]));
  return s / static_cast<double>(x.size());
}

template <Real T>
double mse(const Tensor<T>& x, const Tensor<T>& y) {
  require_same_shape(x, y, "mse");
  if (x.empty()) throw ShapeError("mse: empty images");
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    s += d * d;
  }
  return s / static_cast<double>(x.size());
}

/// 10 log10(L^2 / MSE); +inf for identical images.
inline double psnr_from_mse(double m, double peak = kPeak) {
  if (m <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

template <Real T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double peak = kPeak) {
  return psnr_from_mse(mse(x, y), peak);
}

namespace detail {

struct Moments {
  double mu_x = 0, mu_y = 0, var_x = 0, var_y = 0, cov = 0;
};

inline double ssim_formula(const Moments& m, double peak) {
  const double c1 = (kK1 * peak) * (kK1 * peak);
  const double c2 = (kK2 * peak) * (kK2 * peak);
  return ((2 * m.mu_x * m.mu_y + c1) * (2 * m.cov + c2)) /
         ((m.mu_x * m.mu_x + m.mu_y * m.mu_y + c1) * (m.var_x + m.var_y + c2));
}

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size * size);
  const double c = static_cast<double>(size - 1) / 2.0;
  double total = 0;
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      const double dy = static_cast<double>(i) - c, dx = static_cast<double>(j) - c;
      w[i * size + j] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      total += w[i * size + j];
    }
  }
  for (auto& v : w) v /= total;
  return w;
}

}  // namespace detail

/// Global mode: one set of whole-image statistics (population moments) over
/// all pixels and bands. Windowed mode: 11x11 Gaussian window (sigma 1.5)
/// over every valid position, per band, then averaged over bands.
template <Real T>
double ssim(const Tensor<T>& x, const Tensor<T>& y, SsimMode mode = SsimMode::global, double peak = kPeak) {
  require_same_shape(x, y, "ssim");
  if (x.empty()) throw ShapeError("ssim: empty images");
  if (mode == SsimMode::global) {
    const double n = static_cast<double>(x.size());
    detail::Moments m;
    for (std::size_t i = 0; i < x.size(); ++i) {
      m.mu_x += x[i];
      m.mu_y += y[i];
    }
    m.mu_x /= n;
    m.mu_y /= n;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double dx = x[i] - m.mu_x, dy = y[i] - m.mu_y;
      m.var_x += dx * dx;
      m.var_y += dy * dy;
      m.cov += dx * dy;
    }
    m.var_x /= n;
    m.var_y /= n;
    m.cov /= n;
    return detail::ssim_formula(m, peak);
  }

  constexpr std::size_t win = 11;
  if (x.rank() != 3) throw ShapeError("ssim: windowed mode needs [H, W, C] images");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h < win || w < win) {
    throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than the 11x11 window");
  }
  const std::vector<double> g = detail::gaussian_window(win, 1.5);
  double band_total = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0;
    for (std::size_t oy = 0; oy + win <= h; ++oy) {
      for (std::size_t ox = 0; ox + win <= w; ++ox) {
        detail::Moments m;
        double exx = 0, eyy = 0, exy = 0;
        for (std::size_t i = 0; i < win; ++i) {
          for (std::size_t j = 0; j < win; ++j) {
            const double wt = g[i * win + j];
            const double a = x.at(oy + i, ox + j, ch), b = y.at(oy + i, ox + j, ch);
            m.mu_x += wt * a;
            m.mu_y += wt * b;
            exx += wt * a * a;
            eyy += wt * b * b;
            exy += wt * a * b;
          }
        }
        m.var_x = exx - m.mu_x * m.mu_x;
        m.var_y = eyy - m.mu_y * m.mu_y;
        m.cov = exy - m.mu_x * m.mu_y;
        acc += detail::ssim_formula(m, peak);
      }
    }
    band_total += acc / static_cast<double>((h - win + 1) * (w - win + 1));
  }
  return band_total / static_cast<double>(c);
}

struct SamResult {
  double degrees = 0.0;
  std::size_t skipped = 0;  // zero-norm pixels left out of the mean
};

/// Mean per-pixel spectral angle in degrees between band vectors.
template <Real T>
SamResult sam(const Tensor<T>& x, const Tensor<T>& y) {
  require_same_shape(x, y, "sam");
  if (x.rank() != 3 || x.dim(2) < 1) throw ShapeError("sam: images must be [H, W, C] with C >= 1");
  const std::size_t pixels = x.dim(0) * x.dim(1), c = x.dim(2);
  double total = 0;
  std::size_t used = 0;
  SamResult r;
  for (std::size_t p = 0; p < pixels; ++p) {
    double nx = 0, ny = 0;
    for (std::size_t k = 0; k < c; ++k) {
      const double a = x[p * c + k], b = y[p * c + k];
      nx += a * a;
      ny += b * b;
    }
    if (nx == 0.0 || ny == 0.0) {
      ++r.skipped;
      continue;
    }
    // angle = 2 atan2(|u - v|, |u + v|) on unit vectors
    nx = std::sqrt(nx);
    ny = std::sqrt(ny);
    double diff = 0, sum = 0;
    for (std::size_t k = 0; k < c; ++k) {
      const double u = x[p * c + k] / nx, v = y[p * c + k] / ny;
      diff += (u - v) * (u - v);
      sum += (u + v) * (u + v);
    }
    total += 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));
    ++used;
  }
  if (used == 0) throw NumericError("sam: every pixel has a zero-norm band vector");
  r.degrees = total / static_cast<double>(used) * 180.0 / std::numbers::pi;
  return r;
}

struct MetricRow {
  std::string sample_id;
  double mae = 0, mse = 0, psnr = 0, ssim = 0, sam = 0;
  std::size_t sam_skipped = 0;
};

/// Per-sample rows plus their mean. Values are on the [0, 255] scale.
struct MetricReport {
  SsimMode ssim_mode = SsimMode::global;
  std::vector<MetricRow> rows;

  MetricRow mean() const {
    MetricRow m{"MEAN"};
    if (rows.empty()) return m;
    for (const auto& r : rows) {
      m.mae += r.mae;
      m.mse += r.mse;
      m.psnr += r.psnr;
      m.ssim += r.ssim;
      m.sam += r.sam;
      m.sam_skipped += r.sam_skipped;
    }
    const double n = static_cast<double>(rows.size());
    m.mae /= n;
    m.mse /= n;
    m.psnr /= n;
    m.ssim /= n;
    m.sam /= n;
    return m;
  }
};

/// Compares a prediction with its reference, both in [0, 1]; rescaled to L = 255 first.
template <Real T>
MetricRow evaluate_pair(const std::string& id, const Tensor<T>& pred, const Tensor<T>& ref,
                        SsimMode mode = SsimMode::global) {
  Tensor<double> x = pred.template cast<double>(), y = ref.template cast<double>();
  for (auto& v : x.storage()) v *= kPeak;
  for (auto& v : y.storage()) v *= kPeak;
  MetricRow r{id};
  r.mae = mae(x, y);
  r.mse = mse(x, y);
  r.psnr = psnr_from_mse(r.mse);
  r.ssim = ssim(x, y, mode);
  const SamResult s = sam(x, y);
  r.sam = s.degrees;
  r.sam_skipped = s.skipped;
  return r;
}

inline std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void write_report_csv(std::ostream& os, const MetricReport& report) {
  os << "sample_id,mae,mse,psnr_db,ssim,sam_deg\n";
  auto line = [&os](const MetricRow& r) {
    os << r.sample_id << ',' << format_number(r.mae) << ',' << format_number(r.mse) << ',' << format_number(r.psnr)
       << ',' << format_number(r.ssim) << ',' << format_number(r.sam) << '\n';
  };
  for (const auto& r : report.rows) line(r);
  line(report.mean());
}

}  // namespace acacr::metrics
