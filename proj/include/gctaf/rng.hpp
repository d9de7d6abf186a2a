#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace gctaf {

// Deterministic 64-bit generator built on the SplitMix64 finalizer
// (Steele, Lea, Flood, "Fast splittable pseudorandom number generators").
// Every stream used anywhere in the project is derived from one master seed
// through split(), so runs are bit-reproducible regardless of platform or
// standard-library version. std::uniform_real_distribution is deliberately
// avoided: its output is implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Marsaglia polar method; the spare value is cached in the generator.
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * next_double() - 1.0;
      v = 2.0 * next_double() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return mean + stddev * u * f;
  }

  // Unbiased integer in [0, bound) by rejection.
  uint64_t below(uint64_t bound) {
    uint64_t x, r;
    do {
      x = next_u64();
      r = x % bound;
    } while (x - r > UINT64_MAX - (bound - 1));
    return r;
  }

  // Independent child stream; does not advance this generator, so the same
  // (parent, tag) pair always yields the same stream.
  Rng split(uint64_t tag) const {
    return Rng(mix(state_ ^ mix(tag + 0xA0761D6478BD642FULL)));
  }

  Rng split(std::string_view tag) const { return split(fnv1a(tag)); }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; --i) {
      uint64_t j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001B3ULL;
    }
    return h;
  }

  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace gctaf
