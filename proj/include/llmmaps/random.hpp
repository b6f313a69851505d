#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

#include "text.hpp"

namespace llmmaps {

// std::mt19937_64 is bit-exact across standard libraries, the std
// distributions are not. Every draw goes through these helpers so seeded
// output (option order, dot positions) is identical on all platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased integer in [0, n), n > 0.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Derives a per-item stream from a global seed and a stable key.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view key) {
  return fnv1a64(key, 0xcbf29ce484222325ULL ^ (seed * 0x9E3779B97F4A7C15ULL));
}

}  // namespace llmmaps
