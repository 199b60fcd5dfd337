#pragma once

// On-disk synthetic dataset:
//   <root>/manifest.json
//   <root>/{train,test}/<index:05>.{clear,cloudy,mask}.tnsr   (+ .png previews for 3 bands)
// Indices are global: train occupies [0, train_count), test the next test_count.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <vector>

#include "acacr/data/png.hpp"
#include "acacr/data/synth.hpp"
#include "acacr/tensor/serialize.hpp"

namespace acacr {

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train or test)");
}

struct CloudSettings {
  double coverage = 0.4;
  double softness = 0.5;
  double color = 0.95;

  friend bool operator==(const CloudSettings&, const CloudSettings&) = default;
};

struct DatasetManifest {
  int version = 1;
  std::uint64_t seed = 7;
  std::size_t h = 32;
  std::size_t w = 32;
  std::size_t c_in = 3;
  std::size_t train_count = 8;
  std::size_t test_count = 4;
  CloudSettings cloud;

  std::size_t first_index(Split s) const { return s == Split::train ? 0 : train_count; }
  std::size_t count(Split s) const { return s == Split::train ? train_count : test_count; }

  void validate() const {
    if (version != 1) throw FormatError("dataset manifest: unsupported version " + std::to_string(version));
    require_extents(h, w);
    if (c_in < 1) throw ConfigError("dataset manifest: c_in must be >= 1");
    if (!(cloud.coverage >= 0 && cloud.coverage <= 1)) throw ConfigError("dataset manifest: coverage outside [0, 1]");
    if (!(cloud.softness >= 0 && cloud.softness <= 1)) throw ConfigError("dataset manifest: softness outside [0, 1]");
    if (!(cloud.color >= 0 && cloud.color <= 1)) throw ConfigError("dataset manifest: cloud color outside [0, 1]");
  }

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Two thirds of the samples go to training, rounded to nearest.
inline std::pair<std::size_t, std::size_t> split_counts(std::size_t count) {
  const auto train = static_cast<std::size_t>(std::llround(static_cast<double>(count) * 2.0 / 3.0));
  return {train, count - train};
}

// Rejects keys outside `allowed`.
inline void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  return {{"version", m.version},
          {"seed", m.seed},
          {"h", m.h},
          {"w", m.w},
          {"c_in", m.c_in},
          {"train_count", m.train_count},
          {"test_count", m.test_count},
          {"cloud", {{"coverage", m.cloud.coverage}, {"softness", m.cloud.softness}, {"color", m.cloud.color}}}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    require_known_keys(j, {"version", "seed", "h", "w", "c_in", "train_count", "test_count", "cloud"}, "dataset manifest");
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.h = j.at("h").get<std::size_t>();
    m.w = j.at("w").get<std::size_t>();
    m.c_in = j.at("c_in").get<std::size_t>();
    m.train_count = j.at("train_count").get<std::size_t>();
    m.test_count = j.at("test_count").get<std::size_t>();
    const auto& c = j.at("cloud");
    require_known_keys(c, {"coverage", "softness", "color"}, "dataset manifest cloud");
    m.cloud = {c.at("coverage").get<double>(), c.at("softness").get<double>(), c.at("color").get<double>()};
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset manifest: ") + e.what());
  }
}

/// Sample `index` of the dataset, a pure function of (manifest seed, index).
template <Real T>
SamplePair<T> generate_sample(const DatasetManifest& m, std::size_t index) {
  const std::uint64_t seed = RngStream(m.seed).split(index).seed();
  SamplePair<T> p;
  p.seed = seed;
  // Generated in double and rounded once so f32 and f64 datasets agree.
  const Tensor<double> clear = synth_clear<double>(splitmix64(seed ^ 0x11), m.h, m.w, m.c_in);
  const Tensor<double> mask = synth_mask<double>(splitmix64(seed ^ 0x22), m.h, m.w, m.cloud.coverage, m.cloud.softness);
  p.clear = clear.cast<T>();
  p.mask = mask.cast<T>();
  p.cloudy = composite(clear, mask, m.cloud.color).template cast<T>();
  return p;
}

inline std::string sample_stem(Split split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return std::string(to_string(split)) + "/" + buf;
}

template <Real T>
void save_pair(const std::filesystem::path& root, const std::string& stem, const SamplePair<T>& p, bool previews) {
  save_tnsr(root / (stem + ".clear.tnsr"), p.clear);
  save_tnsr(root / (stem + ".cloudy.tnsr"), p.cloudy);
  save_tnsr(root / (stem + ".mask.tnsr"), p.mask);
  if (previews && p.clear.dim(2) == 3) {
    save_png_preview(root / (stem + ".clear.png"), p.clear);
    save_png_preview(root / (stem + ".cloudy.png"), p.cloudy);
    save_png_preview(root / (stem + ".mask.png"), p.mask);
  }
}

template <Real T>
SamplePair<T> load_pair(const std::filesystem::path& root, const std::string& stem) {
  SamplePair<T> p;
  p.clear = load_tnsr<T>(root / (stem + ".clear.tnsr"));
  p.cloudy = load_tnsr<T>(root / (stem + ".cloudy.tnsr"));
  p.mask = load_tnsr<T>(root / (stem + ".mask.tnsr"));
  if (p.clear.shape() != p.cloudy.shape() || p.mask.rank() != 3 || p.mask.dim(2) != 1 ||
      p.mask.dim(0) != p.clear.dim(0) || p.mask.dim(1) != p.clear.dim(1)) {
    throw FormatError((root / stem).string() + ": clear/cloudy/mask shapes disagree");
  }
  return p;
}

inline void write_manifest(const std::filesystem::path& root, const DatasetManifest& m) {
  std::ofstream os(root / "manifest.json");
  if (!os) throw IoError("cannot write " + (root / "manifest.json").string());
  os << to_json(m).dump(2) << '\n';
}

inline DatasetManifest read_manifest(const std::filesystem::path& root) {
  const auto path = std::filesystem::is_directory(root) ? root / "manifest.json" : root;
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset manifest " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

/// Generates and writes every sample; f32 storage.
inline void write_dataset(const std::filesystem::path& root, const DatasetManifest& m, bool previews = true) {
  m.validate();
  std::error_code ec;
  for (Split s : {Split::train, Split::test}) {
    std::filesystem::create_directories(root / to_string(s), ec);
    if (ec) throw IoError("cannot create " + (root / to_string(s)).string() + ": " + ec.message());
  }
  write_manifest(root, m);
  for (Split s : {Split::train, Split::test}) {
    for (std::size_t i = 0; i < m.count(s); ++i) {
      const std::size_t index = m.first_index(s) + i;
      save_pair(root, sample_stem(s, index), generate_sample<float>(m, index), previews);
    }
  }
}

template <Real T>
struct Dataset {
  std::filesystem::path root;
  DatasetManifest manifest;
  std::vector<SamplePair<T>> train;
  std::vector<SamplePair<T>> test;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;

  const std::vector<SamplePair<T>>& samples(Split s) const { return s == Split::train ? train : test; }
  const std::vector<std::string>& ids(Split s) const { return s == Split::train ? train_ids : test_ids; }
};

/// Loads every sample the manifest declares and checks it against the manifest.
template <Real T>
Dataset<T> load_dataset(const std::filesystem::path& root_or_manifest) {
  const auto root = std::filesystem::is_directory(root_or_manifest) ? root_or_manifest
                                                                      : root_or_manifest.parent_path();
  Dataset<T> d;
  d.root = root;
  d.manifest = read_manifest(root_or_manifest);
  for (Split s : {Split::train, Split::test}) {
    for (std::size_t i = 0; i < d.manifest.count(s); ++i) {
      const std::size_t index = d.manifest.first_index(s) + i;
      const std::string stem = sample_stem(s, index);
      SamplePair<T> p = load_pair<T>(root, stem);
      if (p.clear.shape() != Shape{d.manifest.h, d.manifest.w, d.manifest.c_in}) {
        throw FormatError(stem + ": shape " + shape_string(p.clear.shape()) + " disagrees with the manifest");
      }
      p.seed = RngStream(d.manifest.seed).split(index).seed();
      (s == Split::train ? d.train : d.test).push_back(std::move(p));
      (s == Split::train ? d.train_ids : d.test_ids).push_back(stem);
    }
  }
  return d;
}

}  // namespace acacr
