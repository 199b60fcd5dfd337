#pragma once

// Similarity inspection: pull one query row out of S_p / S_att, rank the
// strongest patches and write them as CSV and grayscale heatmaps.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "acacr/attention/attention.hpp"
#include "acacr/data/png.hpp"

namespace acacr {

struct PatchScore {
  std::size_t patch_index = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  double score = 0.0;
};

template <Real T>
struct SimilarityRecord {
  Tensor<T> s_p;                   // [N_p, N_p], rows sum to 1
  std::optional<Tensor<T>> s_att;  // [N_p, N_p], AC only
  std::size_t query_index = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
};

template <Real T>
struct SimilarityExport {
  SimilarityRecord<T> record;
  std::vector<double> s_p_row;
  std::vector<double> s_att_row;  // empty when the variant has no S_att
  std::vector<PatchScore> top_s_p;
  std::vector<PatchScore> top_s_att;
};

/// The ceil(fraction * N) largest entries, descending, ties by ascending index.
inline std::vector<PatchScore> top_patches(std::span<const double> row, std::size_t grid_w, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("top fraction must be in (0, 1]");
  const std::size_t n = row.size();
  // The small slack keeps e.g. 0.3 * 10 from rounding up to 4.
  const auto k = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  std::vector<PatchScore> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({idx[i], idx[i] / grid_w, idx[i] % grid_w, row[idx[i]]});
  return out;
}

/// Nearest patch for a query at relative coordinates (r, c) in [0, 1]^2.
inline std::size_t query_patch_index(double r, double c, std::size_t grid_h, std::size_t grid_w) {
  if (!(r >= 0.0 && r <= 1.0 && c >= 0.0 && c <= 1.0)) throw ConfigError("query coordinates must lie in [0, 1]");
  const auto pr = std::min(grid_h - 1, static_cast<std::size_t>(r * static_cast<double>(grid_h)));
  const auto pc = std::min(grid_w - 1, static_cast<std::size_t>(c * static_cast<double>(grid_w)));
  return pr * grid_w + pc;
}

template <Real T>
SimilarityExport<T> make_similarity_export(const SimilarityRecord<T>& rec, double top_fraction) {
  const std::size_t n = rec.s_p.dim(0);
  if (rec.query_index >= n) {
    throw ConfigError("query index " + std::to_string(rec.query_index) + " out of range for " + std::to_string(n) +
                      " patches");
  }
  SimilarityExport<T> ex;
  ex.record = rec;
  for (std::size_t j = 0; j < n; ++j) ex.s_p_row.push_back(static_cast<double>(rec.s_p.at(rec.query_index, j)));
  ex.top_s_p = top_patches(ex.s_p_row, rec.grid_w, top_fraction);
  if (rec.s_att) {
    for (std::size_t j = 0; j < n; ++j) ex.s_att_row.push_back(static_cast<double>(rec.s_att->at(rec.query_index, j)));
    ex.top_s_att = top_patches(ex.s_att_row, rec.grid_w, top_fraction);
  }
  return ex;
}

template <Real T>
SimilarityRecord<T> similarity_record(const AttentionResult<T>& r, std::size_t query_index) {
  if (!r.similarity) throw ConfigError("attention result carries no similarity matrix");
  SimilarityRecord<T> rec{r.similarity->value(), std::nullopt, query_index, r.grid_h, r.grid_w};
  if (r.attentive) rec.s_att = r.attentive->value();
  return rec;
}

/// Runs the configured attention on F and exports the scores of one query patch.
template <Real T>
SimilarityExport<T> export_similarity(const Tensor<T>& f, const AttentionParams<T>& params, const AttentionConfig& cfg,
                                      std::size_t query_index, double top_fraction) {
  Tape<T> tape;
  const AttentionResult<T> r = attention_forward(tape.constant(f), bind(tape, params, false), cfg);
  return make_similarity_export(similarity_record(r, query_index), top_fraction);
}

inline void write_patch_csv(std::ostream& os, std::span<const PatchScore> order, std::span<const double> s_p,
                            std::span<const double> s_att) {
  os << "patch_index,row,col,s_p,s_att\n" << std::setprecision(9);
  for (const PatchScore& p : order) {
    os << p.patch_index << ',' << p.row << ',' << p.col << ',' << s_p[p.patch_index] << ',';
    if (!s_att.empty()) os << s_att[p.patch_index];
    os << '\n';
  }
}

/// Writes `<stem>.csv` (all patches of the query row), `<stem>.top_s_p.csv`,
/// `<stem>.top_s_att.csv` and `<stem>.s_p.png` / `<stem>.s_att.png` heatmaps.
template <Real T>
void write_similarity_export(const std::filesystem::path& dir, const std::string& stem, const SimilarityExport<T>& ex) {
  const std::size_t n = ex.s_p_row.size(), gw = ex.record.grid_w, gh = ex.record.grid_h;
  std::vector<PatchScore> all;
  for (std::size_t j = 0; j < n; ++j) all.push_back({j, j / gw, j % gw, ex.s_p_row[j]});
  auto write = [&](const std::string& name, std::span<const PatchScore> order) {
    std::ofstream os(dir / name);
    if (!os) throw IoError("cannot write " + (dir / name).string());
    write_patch_csv(os, order, ex.s_p_row, ex.s_att_row);
  };
  write(stem + ".csv", all);
  write(stem + ".top_s_p.csv", ex.top_s_p);
  if (!ex.s_att_row.empty()) write(stem + ".top_s_att.csv", ex.top_s_att);

  auto heatmap = [&](const std::string& name, const std::vector<double>& row) {
    const double mx = *std::max_element(row.begin(), row.end());
    Image8 img{gw, gh, 1, std::vector<std::uint8_t>(n, 0)};
    if (mx > 0.0) {
      for (std::size_t j = 0; j < n; ++j) {
        img.pixels[j] = static_cast<std::uint8_t>(std::lround(std::clamp(row[j] / mx, 0.0, 1.0) * 255.0));
      }
    }
    write_png(dir / name, img);
  };
  heatmap(stem + ".s_p.png", ex.s_p_row);
  if (!ex.s_att_row.empty()) heatmap(stem + ".s_att.png", ex.s_att_row);
}

}  // namespace acacr
