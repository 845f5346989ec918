#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace cascade {

using Rng = std::mt19937_64;

/// Uniform draw on the open interval (0, 1).
inline double uniform_open(Rng& rng) {
  // 53 random bits, shifted by half an ulp so neither endpoint is reachable.
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Derives an independent engine for a named purpose ("simulate", "init").
inline Rng substream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

/// Poisson draw by sequential inversion; large means are split into chunks
/// of at most 30 so exp(-mean) never underflows.
inline std::uint64_t poisson_inversion(double mean, Rng& rng) {
  std::uint64_t total = 0;
  while (mean > 0.0) {
    const double m = mean > 30.0 ? 30.0 : mean;
    mean -= m;
    double p = std::exp(-m);
    double cdf = p;
    const double u = uniform_open(rng);
    std::uint64_t k = 0;
    while (u > cdf) {
      ++k;
      p *= m / static_cast<double>(k);
      cdf += p;
      if (p == 0.0) break;
    }
    total += k;
  }
  return total;
}

}  // namespace cascade
