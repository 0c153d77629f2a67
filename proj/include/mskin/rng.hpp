#pragma once

#include <cstdint>

#include "mskin/util.hpp"

namespace mskin {

// Counter-based generator: SplitMix64 sequence keyed by (seed, stream).
// Chosen over <random> engines/distributions so that runs are byte-identical
// across standard libraries and thread counts (one stream per work chunk).
struct CounterRng {
  std::uint64_t state;
  bool has_spare = false;
  double spare = 0.0;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) {
    state = mix(seed ^ mix(0x9E3779B97F4A7C15ULL * (stream + 1)));
  }

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t next_u64() {
    state += 0x9E3779B97F4A7C15ULL;
    return mix(state);
  }

  // Uniform in [0,1), 53-bit resolution.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller (cached second value).
  double next_gauss() {
    if (has_spare) {
      has_spare = false;
      return spare;
    }
    double u1 = next_unit();
    if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare = r * std::sin(a);
    has_spare = true;
    return r * std::cos(a);
  }

  Vec3 next_gauss3() {
    double a = next_gauss(), b = next_gauss(), c = next_gauss();
    return {a, b, c};
  }

  // Uniform on the unit sphere (Marsaglia).
  Vec3 next_unit_sphere() {
    for (;;) {
      double u = 2.0 * next_unit() - 1.0;
      double v = 2.0 * next_unit() - 1.0;
      double s = u * u + v * v;
      if (s >= 1.0 || s == 0.0) continue;
      double f = 2.0 * std::sqrt(1.0 - s);
      return {u * f, v * f, 1.0 - 2.0 * s};
    }
  }
};

}  // namespace mskin
