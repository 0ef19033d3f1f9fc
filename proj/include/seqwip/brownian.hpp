#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "parallel.hpp"
#include "process.hpp"
#include "rng.hpp"

namespace seqwip {

inline std::vector<double> uniform_grid(std::size_t m) {
  if (m < 1) throw std::invalid_argument("grid needs m >= 1 steps");
  std::vector<double> t(m + 1);
  for (std::size_t i = 0; i <= m; ++i) t[i] = static_cast<double>(i) / static_cast<double>(m);
  t.back() = 1.0;
  return t;
}

/// One Brownian path on the given increasing grid starting at t_0 = 0.
inline PolygonalPath sample_bm_path(std::span<const double> times, RandomStream& rng) {
  PolygonalPath p;
  p.times.assign(times.begin(), times.end());
  p.values.assign(times.size(), 0.0);
  for (std::size_t i = 1; i < times.size(); ++i)
    p.values[i] = p.values[i - 1] + std::sqrt(times[i] - times[i - 1]) * rng.normal();
  return p;
}

/// `count` Brownian paths on an arbitrary grid; path i uses stream (seed, tag, i).
inline PathEnsemble sample_bm(std::size_t count, std::span<const double> times, std::uint64_t seed,
                              std::uint64_t tag = 0, unsigned threads = 1) {
  if (times.size() < 2 || times.front() != 0.0) throw std::invalid_argument("Brownian grid must start at 0");
  PathEnsemble e(count);
  parallel_for(count, threads, [&](std::size_t i) {
    RandomStream rng(derive_seed(seed, StreamTag::brownian, tag, i));
    e[i] = sample_bm_path(times, rng);
  });
  return e;
}

/// `count` paths on the uniform grid of m steps.
inline PathEnsemble sample_bm(std::size_t count, std::size_t m, std::uint64_t seed, unsigned threads = 1) {
  const auto t = uniform_grid(m);
  return sample_bm(count, t, seed, 0, threads);
}

/// max over vertex pairs s ≠ t of |u(s) − u(t)| / |s − t|^γ.
inline double holder_seminorm(const PolygonalPath& u, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("Hoelder exponent must lie in (0,1]");
  double best = 0.0;
  const auto& t = u.times;
  const auto& v = u.values;
  const std::size_t m = t.size();
  const double step = (t.back() - t.front()) / static_cast<double>(m - 1);
  bool uniform = true;
  for (std::size_t i = 0; i < m && uniform; ++i)
    uniform = std::abs(t[i] - (t.front() + step * static_cast<double>(i))) <= 1e-12 * step;
  if (uniform) {
    // lag-indexed weights: one pow per lag instead of per pair
    std::vector<double> w(m);
    for (std::size_t lag = 1; lag < m; ++lag) w[lag] = std::pow(step * static_cast<double>(lag), -gamma);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j) best = std::max(best, std::abs(v[j] - v[i]) * w[j - i]);
    return best;
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      best = std::max(best, std::abs(v[j] - v[i]) / std::pow(t[j] - t[i], gamma));
  return best;
}

/// sup_x |F_emp(x) − Φ(x)| against the standard normal.
inline double kolmogorov_distance(std::vector<double> samples) {
  if (samples.empty()) throw std::invalid_argument("kolmogorov_distance needs samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = normal_cdf(samples[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Two-sample Kolmogorov–Smirnov statistic.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

/// Asymptotic two-sample KS critical value: c(α)·sqrt((n+m)/(nm)).
inline double ks_two_sample_critical(std::size_t n, std::size_t m, double alpha) {
  const double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  return c * std::sqrt((dn + dm) / (dn * dm));
}

/// DKW bound: P(sup|F_n − F| > ε) ≤ 2e^{-2nε²}; returns ε at level `confidence`.
inline double dkw_epsilon(std::size_t n, double confidence) {
  return std::sqrt(std::log(2.0 / (1.0 - confidence)) / (2.0 * static_cast<double>(n)));
}

}  // namespace seqwip
