#pragma once

// Empirical Wasserstein-p distances on the real line and on C[0,1] with the
// sup metric.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "assignment.hpp"
#include "parallel.hpp"
#include "process.hpp"

namespace seqwip {

/// Sorted (quantile) coupling: (mean_i |x_(i) − y_(i)|^p)^{1/p}.
inline double wp_1d(std::vector<double> x, std::vector<double> y, double p) {
  if (x.size() != y.size()) throw std::invalid_argument("wp_1d needs equal sample counts");
  if (x.empty()) throw std::invalid_argument("wp_1d needs samples");
  if (!(p >= 1.0)) throw std::invalid_argument("p must be >= 1");
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::pow(std::abs(x[i] - y[i]), p);
  return std::pow(s / static_cast<double>(x.size()), 1.0 / p);
}

/// Sorted union of two vertex grids.
inline std::vector<double> merge_grids(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// sup_t |a(t) − b(t)|. The difference of two polygons is a polygon whose
/// breakpoints lie in the union of the vertex grids, so this is exact.
inline double path_sup_distance(const PolygonalPath& a, const PolygonalPath& b) {
  const auto grid = merge_grids(a.times, b.times);
  const auto va = a.resample(grid), vb = b.resample(grid);
  double d = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) d = std::max(d, std::abs(va[i] - vb[i]));
  return d;
}

enum class MetricTag { sup_path, absolute };
enum class TransportMode { exact, entropic };

inline const char* to_string(TransportMode m) { return m == TransportMode::exact ? "exact" : "entropic"; }

struct CostMatrix {
  std::size_t k = 0;
  std::vector<double> values;  // row-major, c_ij = d(A_i, B_j)^p
  MetricTag metric = MetricTag::sup_path;
  double p = 2.0;

  double operator()(std::size_t i, std::size_t j) const noexcept { return values[i * k + j]; }
};

inline CostMatrix path_cost_matrix(const PathEnsemble& a, const PathEnsemble& b, double p, unsigned threads = 1) {
  if (a.size() != b.size()) throw std::invalid_argument("ensembles must have equal size");
  const std::size_t k = a.size();
  CostMatrix c{k, std::vector<double>(k * k), MetricTag::sup_path, p};
  if (k == 0) return c;
  if (has_common_grid(a) && has_common_grid(b)) {
    // resample both ensembles once onto the union grid
    const auto grid = merge_grids(a.front().times, b.front().times);
    std::vector<std::vector<double>> ra(k), rb(k);
    parallel_for(k, threads, [&](std::size_t i) {
      ra[i] = a[i].resample(grid);
      rb[i] = b[i].resample(grid);
    });
    parallel_for(k, threads, [&](std::size_t i) {
      const double* x = ra[i].data();
      for (std::size_t j = 0; j < k; ++j) {
        const double* y = rb[j].data();
        double d = 0.0;
        for (std::size_t t = 0; t < grid.size(); ++t) d = std::max(d, std::abs(x[t] - y[t]));
        c.values[i * k + j] = std::pow(d, p);
      }
    });
  } else {
    parallel_for(k, threads, [&](std::size_t i) {
      for (std::size_t j = 0; j < k; ++j) c.values[i * k + j] = std::pow(path_sup_distance(a[i], b[j]), p);
    });
  }
  return c;
}

struct TransportResult {
  double value = 0.0;                   // the W_p estimate
  double total_cost = 0.0;              // Σ plan·cost
  std::vector<std::size_t> permutation; // exact mode
  std::vector<double> plan;             // entropic mode, K×K row-major
  TransportMode mode = TransportMode::exact;
  std::string solver;
  std::size_t iterations = 0;
  double marginal_error = 0.0;
  double epsilon = 0.0;
};

class EntropicNotConverged : public std::runtime_error {
 public:
  EntropicNotConverged(const std::string& what, double residual) : std::runtime_error(what), residual(residual) {}
  double residual;
};

struct EntropicOptions {
  double epsilon = 0.01;          // regularization in units of the mean cost
  std::size_t max_iterations = 20000;
  double tolerance = 1e-10;       // max row-marginal deviation
};

/// Log-domain Sinkhorn with uniform marginals 1/K. No debiasing.
inline TransportResult sinkhorn(const CostMatrix& c, EntropicOptions opt = {}) {
  const std::size_t k = c.k;
  TransportResult r;
  r.mode = TransportMode::entropic;
  r.solver = "sinkhorn-log";
  if (k == 0) return r;
  const double mean_cost = std::accumulate(c.values.begin(), c.values.end(), 0.0) / static_cast<double>(k * k);
  const double eps = opt.epsilon * (mean_cost > 0.0 ? mean_cost : 1.0);
  r.epsilon = eps;
  const double log_a = -std::log(static_cast<double>(k));
  std::vector<double> f(k, 0.0), g(k, 0.0), tmp(k);
  auto lse_row = [&](std::size_t i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) tmp[j] = (g[j] - c.values[i * k + j]) / eps, m = std::max(m, tmp[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(tmp[j] - m);
    return m + std::log(s);
  };
  auto lse_col = [&](std::size_t j) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) tmp[i] = (f[i] - c.values[i * k + j]) / eps, m = std::max(m, tmp[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += std::exp(tmp[i] - m);
    return m + std::log(s);
  };
  double err = std::numeric_limits<double>::infinity();
  std::size_t it = 0;
  for (; it < opt.max_iterations; ++it) {
    for (std::size_t i = 0; i < k; ++i) f[i] = eps * (log_a - lse_row(i));
    for (std::size_t j = 0; j < k; ++j) g[j] = eps * (log_a - lse_col(j));
    if (it % 10 == 9 || it + 1 == opt.max_iterations) {
      err = 0.0;
      for (std::size_t i = 0; i < k; ++i) err = std::max(err, std::abs(std::exp(f[i] / eps + lse_row(i)) - 1.0 / k));
      if (err < opt.tolerance) break;
    }
  }
  r.iterations = std::min(it + 1, opt.max_iterations);
  r.marginal_error = err;
  if (!(err < opt.tolerance))
  {
    std::ostringstream msg;
    msg << "Sinkhorn did not converge after " << r.iterations << " iterations; marginal residual " << std::scientific << err;
    throw EntropicNotConverged(msg.str(), err);
  }
  r.plan.resize(k * k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double pij = std::exp((f[i] + g[j] - c.values[i * k + j]) / eps);
      r.plan[i * k + j] = pij;
      r.total_cost += pij * c.values[i * k + j];
    }
  r.value = std::pow(r.total_cost, 1.0 / c.p);
  return r;
}

inline TransportResult exact_transport(const CostMatrix& c) {
  TransportResult r;
  r.mode = TransportMode::exact;
  r.solver = "shortest-augmenting-path";
  const auto a = solve_assignment(c.values, c.k);
  r.permutation = a.row_to_col;
  r.total_cost = a.cost / static_cast<double>(c.k);
  r.value = std::pow(r.total_cost, 1.0 / c.p);
  r.iterations = c.k;
  return r;
}

struct TransportOptions {
  TransportMode mode = TransportMode::exact;
  std::size_t exact_cap = 4096;
  EntropicOptions entropic;
  unsigned threads = 1;
};

class ExactCapExceeded : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Empirical W_p between two equal-size path ensembles (uniform weights).
inline TransportResult empirical_wp_paths(const PathEnsemble& a, const PathEnsemble& b, double p,
                                          const TransportOptions& opt = {}) {
  if (a.size() != b.size()) throw std::invalid_argument("ensembles must have equal size");
  if (a.empty()) throw std::invalid_argument("empty ensembles");
  if (!(p >= 1.0)) throw std::invalid_argument("p must be >= 1");
  if (opt.mode == TransportMode::exact && a.size() > opt.exact_cap)
    throw ExactCapExceeded("ensemble size " + std::to_string(a.size()) + " exceeds exact-mode cap " +
                           std::to_string(opt.exact_cap) + "; use entropic mode");
  const auto c = path_cost_matrix(a, b, p, opt.threads);
  return opt.mode == TransportMode::exact ? exact_transport(c) : sinkhorn(c, opt.entropic);
}

/// Lévy–Prokhorov upper bound π ≤ W_p^{p/(p+1)}.
inline double levy_prokhorov_bound(double wp, double p) {
  if (wp < 0.0 || !(p >= 1.0)) throw std::invalid_argument("levy_prokhorov_bound: need wp >= 0, p >= 1");
  return std::pow(wp, p / (p + 1.0));
}

}  // namespace seqwip
