#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "acacr/core/error.hpp"

namespace acacr {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Deterministic random stream: std::mt19937_64 seeded through SplitMix64.
///
/// The engine's output sequence is fixed by the standard, and the float
/// conversions below are written out by hand (the std distributions are
/// implementation-defined), so a seed yields the same numbers everywhere.
/// `split(key)` derives an independent child stream without advancing this
/// one, which is how per-sample and per-layer streams are obtained.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; no spare value is cached so the state is
  // exactly the engine state.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n) by rejection, n > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
  }

  RngStream split(std::uint64_t key) const {
    return RngStream(splitmix64(seed_ ^ splitmix64(key + 0x632BE59BD9B4E019ULL)));
  }

  std::string state() const {
    std::ostringstream os;
    os << seed_ << ' ' << engine_;
    return os.str();
  }

  void restore(const std::string& text) {
    std::istringstream is(text);
    std::uint64_t seed = 0;
    std::mt19937_64 engine;
    is >> seed >> engine;
    if (!is) throw FormatError("malformed rng state");
    seed_ = seed;
    engine_ = engine;
  }

  friend bool operator==(const RngStream& a, const RngStream& b) {
    return a.seed_ == b.seed_ && a.engine_ == b.engine_;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace acacr
