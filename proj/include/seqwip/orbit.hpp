#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "maps.hpp"
#include "rng.hpp"

namespace seqwip {

/// x_0, ..., x_n with x_k = T_k(x_{k-1}), x_0 ~ Lebesgue.
struct Orbit {
  std::vector<double> points;
  std::uint64_t seed = 0;

  std::size_t length() const noexcept { return points.empty() ? 0 : points.size() - 1; }
  double operator[](std::size_t k) const noexcept { return points[k]; }
};

/// Amplitude of the low-order refresh added after every step.
///
/// Expanding maps shift mantissa bits out at each step (the doubling map
/// reaches 0 after 53 steps in binary64). Adding a fresh uniform variate of
/// size 2^-44 replaces the lost bits: for the doubling map this reproduces the
/// exact law of the first 44 bits of every x_k, and for general maps it is a
/// pseudo-orbit within 1e-13 of the true step.
inline constexpr double kOrbitDither = 0x1.0p-44;

inline Orbit sample_orbit(const MapFamily& family, std::size_t n, RandomStream& rng,
                          std::optional<double> x0 = std::nullopt, double dither = kOrbitDither) {
  Orbit o;
  o.seed = rng.seed();
  o.points.reserve(n + 1);
  double x = x0 ? *x0 : rng.uniform();
  if (!(x >= 0.0 && x <= 1.0)) throw DomainError("initial point outside [0,1]");
  o.points.push_back(x);
  IntervalMap cached;
  std::size_t cached_k = 0;
  const bool varying = family.kind() != FamilyKind::constant;
  for (std::size_t k = 1; k <= n; ++k) {
    if (cached_k == 0 || varying) {
      cached = family.map(k);
      cached_k = k;
    }
    x = cached(x);
    if (dither > 0.0) {
      x += dither * rng.uniform();
      if (x >= 1.0) x -= 1.0;
    }
    o.points.push_back(x);
  }
  return o;
}

/// Orbit for replica `index` under a master seed; independent of evaluation order.
inline Orbit sample_orbit(const MapFamily& family, std::size_t n, std::uint64_t master, std::uint64_t index,
                          std::uint64_t horizon_tag = 0) {
  RandomStream rng(derive_seed(master, StreamTag::orbit, horizon_tag, index));
  return sample_orbit(family, n, rng);
}

}  // namespace seqwip
