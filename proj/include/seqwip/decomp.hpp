#pragma once

// Martingale-coboundary decomposition on the Ulam grid.
//
//   Q_k f   = P_k(f·𝒫^{k-1}1) / 𝒫^k 1
//   h_k     = Σ_{j=1..k} Q_k∘…∘Q_{k-j+1} v̄_{k-j},        h_0 = 0
//   ψ_k     = v̄_k + h_k − h_{k+1}∘T_{k+1}
//   Σ_k²    = 𝔼(Σ_{i<k} v̄_i∘𝒯^i)²,   σ_k² = Σ_{i<k} 𝔼(ψ_i²∘𝒯^i)
//
// All expectations are against Lebesgue measure, i.e. ∫ f∘𝒯^k dm = ∫ f·𝒫^k1 dm.

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "grid.hpp"
#include "maps.hpp"
#include "orbit.hpp"
#include "transfer.hpp"

namespace seqwip {

struct CenteredObservable {
  GridFunction values;
  double shift = 0.0;
};

/// v̄_k = v_k − ∫ v_k·𝒫^k1 dm.
inline CenteredObservable center_observable(const Observable& v, std::size_t k, const OperatorChain& chain) {
  auto g = v.on_grid(k, chain.grid_size());
  const double shift = inner(g, chain.chain_one(k));
  g += -shift;
  return {std::move(g), shift};
}

inline constexpr double kMinGuard = 1e-12;

inline void require_min(const GridFunction& density, std::size_t k) {
  if (min_value(density) < kMinGuard)
    throw MinFailure("P^" + std::to_string(k) + "1 has a cell below 1e-12; Q_k undefined at this resolution");
}

/// Q_k f on the grid.
inline GridFunction q_apply(std::size_t k, const GridFunction& f, const OperatorChain& chain) {
  const auto& rho_prev = chain.chain_one(k - 1);
  const auto& rho = chain.chain_one(k);
  require_min(rho, k);
  auto out = chain.apply(k, f * rho_prev);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= rho[i];
  return out;
}

struct DecompositionSet {
  std::size_t n = 0;
  std::size_t grid = 0;
  Observable observable;
  std::vector<double> shift;          // centering constants, k = 0..n
  std::vector<GridFunction> vbar;     // k = 0..n
  std::vector<GridFunction> h;        // k = 0..n+1
  std::vector<std::size_t> h_depth;   // terms kept in h_k
  std::vector<GridFunction> psi;      // k = 0..n
  std::vector<GridFunction> cond_var; // Q_{k+1}(ψ_k²), k = 0..n-1
  std::vector<double> Sigma2;         // Σ_k², k = 0..n
  std::vector<double> sigma2;         // σ_k², k = 0..n
  std::vector<double> mds_residual;   // ‖Q_{k+1}ψ_k‖_∞, k = 0..n-1
  std::vector<double> mds_residual_grid;
  std::size_t corr_window = 0;
  double h_bound = 0.0;

  double vbar_at(std::size_t k, double x) const { return observable(k, x) - shift[k]; }
  /// h_k read as the piecewise-constant Ulam function.
  double h_at(std::size_t k, double x) const { return h[k].cell_value(x); }

  /// ψ_k(x_k) along an orbit. Uses the defining identity with h_{k+1}(x_{k+1})
  /// when the orbit extends that far, so Σ v̄_i(x_i) = Σ ψ_i(x_i) + h_n(x_n)
  /// holds to rounding; otherwise interpolates the grid ψ_k.
  double psi_on_orbit(const Orbit& o, std::size_t k) const {
    const double x = o[k];
    if (k + 1 < o.points.size()) return vbar_at(k, x) + h_at(k, x) - h_at(k + 1, o[k + 1]);
    return psi[k].at(x);
  }
};

struct HTerm {
  GridFunction value;
  std::size_t depth = 0;
};

/// h_k as the truncated sum of its k terms, each evaluated as
/// P_k∘…∘P_{k-j+1}(v̄_{k-j}·𝒫^{k-j}1) / 𝒫^k1. Summation stops after the first
/// term whose sup-norm falls below tol.
inline HTerm compute_h(const DecompositionSet& set, std::size_t k, double tol, const OperatorChain& chain) {
  const auto n = chain.grid_size();
  if (k == 0) return {GridFunction(n, 0.0), 0};
  if (k > set.vbar.size()) throw std::out_of_range("compute_h: centered observables missing");
  const auto& rho = chain.chain_one(k);
  require_min(rho, k);
  GridFunction acc(n, 0.0);
  std::size_t depth = 0;
  for (std::size_t j = 1; j <= k; ++j) {
    const std::size_t m = k - j;
    auto term = chain.apply_chain(m, k, set.vbar[m] * chain.chain_one(m));
    for (std::size_t i = 0; i < n; ++i) term[i] /= rho[i];
    acc += term;
    ++depth;
    if (sup_norm(term) < tol) break;
  }
  return {std::move(acc), depth};
}

/// h_{k+1}∘T_{k+1} sampled at cell midpoints.
inline GridFunction compose_with_map(const GridFunction& g, const IntervalMap& map) {
  GridFunction out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g.at(map(GridFunction::midpoint(i, g.size())));
  return out;
}

inline GridFunction compute_psi(const DecompositionSet& set, std::size_t k, const OperatorChain& chain) {
  if (!chain.family()) throw std::logic_error("compute_psi needs a chain built from a map family");
  if (k + 1 >= set.h.size()) throw std::out_of_range("compute_psi: h_{k+1} not computed");
  return set.vbar[k] + set.h[k] - compose_with_map(set.h[k + 1], chain.family()->map(k + 1));
}

/// Q_k f for f given pointwise as f(x, T_k x, i, j) with x ∈ B_i and
/// T_k x ∈ B_j, by integrating 𝒫^{k-1}1·f over every preimage piece
/// T_k^{-1}(B_j) ∩ B_i with Simpson's rule.
template <class F>
GridFunction q_apply_pointwise(std::size_t k, F&& f, const OperatorChain& chain) {
  if (!chain.family()) throw std::logic_error("q_apply_pointwise needs a chain built from a map family");
  const auto& rho_prev = chain.chain_one(k - 1);
  const auto& rho = chain.chain_one(k);
  require_min(rho, k);
  const std::size_t n = chain.grid_size();
  const double dn = static_cast<double>(n);
  const auto map = chain.family()->map(k);
  GridFunction acc(n, 0.0);
  auto simpson = [&](const BranchSpec& b, double a, double c, std::size_t i, std::size_t j) {
    if (!(c > a)) return 0.0;
    const double m = 0.5 * (a + c);
    return (c - a) / 6.0 * (f(a, b.value(a), i, j) + 4.0 * f(m, b.value(m), i, j) + f(c, b.value(c), i, j));
  };
  for (const auto& b : map.branches()) {
    const double l = b.domain_left, r = b.domain_right;
    const auto i0 = static_cast<std::size_t>(std::floor(l * dn));
    const auto i1 = std::min(n, static_cast<std::size_t>(std::ceil(r * dn)));
    for (std::size_t i = i0; i < i1; ++i) {
      const double lo = std::max(l, static_cast<double>(i) / dn);
      const double hi = std::min(r, static_cast<double>(i + 1) / dn);
      if (!(hi > lo)) continue;
      const double ya = b.value(lo), yb = b.value(hi);
      const double ymin = std::clamp(std::min(ya, yb), 0.0, 1.0), ymax = std::clamp(std::max(ya, yb), 0.0, 1.0);
      const auto j0 = std::min(n - 1, static_cast<std::size_t>(std::floor(ymin * dn)));
      const auto j1 = std::min(n, static_cast<std::size_t>(std::ceil(ymax * dn)));
      for (std::size_t j = j0; j < std::max(j1, j0 + 1); ++j) {
        const double c0 = std::max(ymin, static_cast<double>(j) / dn);
        const double c1 = std::min(ymax, static_cast<double>(j + 1) / dn);
        if (!(c1 > c0)) continue;
        double xa = c0 == ymin ? (ya <= yb ? lo : hi) : b.inverse(c0);
        double xb = c1 == ymax ? (ya <= yb ? hi : lo) : b.inverse(c1);
        if (xa > xb) std::swap(xa, xb);
        const double s = simpson(b, xa, xb, i, j);
        acc[j] += rho_prev[i] * s;
      }
    }
  }
  for (std::size_t j = 0; j < n; ++j) acc[j] *= dn / rho[j];
  return acc;
}

/// ‖Q_{k+1} ψ_k‖_∞ for ψ_k(x) = v̄_k(x) + h_k(x) − h_{k+1}(T_{k+1}x), the
/// function evaluated along orbits (h read cell-wise), with Q_{k+1}
/// integrated over exact preimages.
inline double check_reverse_mds(const DecompositionSet& set, std::size_t k, const OperatorChain& chain) {
  const auto psi = [&](double x, double, std::size_t i, std::size_t j) {
    return set.vbar_at(k, x) + set.h[k][i] - set.h[k + 1][j];
  };
  return sup_norm(q_apply_pointwise(k + 1, psi, chain));
}

/// ‖Q_{k+1} ψ_k‖_∞ with ψ_k taken as its grid table and Q_{k+1} the Ulam
/// operator; cells straddling a branch break carry an O(1) error here.
inline double check_reverse_mds_grid(const DecompositionSet& set, std::size_t k, const OperatorChain& chain) {
  return sup_norm(q_apply(k + 1, set.psi[k], chain));
}

/// Lag beyond which cross-covariances fall under 1e-12: γ̂^L·sup‖v̄‖² < 1e-12.
inline std::size_t correlation_window(const DecFit* dec, double sup_vbar, std::size_t n) {
  if (n == 0) return 0;
  if (dec == nullptr || !dec->ok) return n;
  const double s2 = sup_vbar * sup_vbar;
  if (!(s2 > 1e-12) || !(dec->gamma_hat > 0.0)) return 1;
  const double l = std::ceil(std::log(1e-12 / s2) / std::log(dec->gamma_hat));
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1.0, l)), 1, n);
}

struct Variances {
  std::vector<double> Sigma2;
  std::vector<double> sigma2;
  std::size_t window = 0;
};

/// Σ_k² by operator quadrature with cross terms up to lag L, and σ_k².
/// Without a verified DEC fit the lag is the full horizon.
inline Variances variances(const DecompositionSet& set, const OperatorChain& chain, const DecFit* dec) {
  const std::size_t n = set.n;
  double sup_vbar = 0.0;
  for (std::size_t k = 0; k < n; ++k) sup_vbar = std::max(sup_vbar, sup_norm(set.vbar[k]));
  Variances out;
  out.window = correlation_window(dec, sup_vbar, n);
  out.Sigma2.assign(n + 1, 0.0);
  out.sigma2.assign(n + 1, 0.0);

  struct Pushed {
    std::size_t origin;
    GridFunction g;
  };
  std::deque<Pushed> active;
  GridFunction tmp(chain.grid_size());
  for (std::size_t l = 0; l < n; ++l) {
    const auto& rho = chain.chain_one(l);
    double cross = 0.0;
    for (const auto& a : active) cross += inner(a.g, set.vbar[l]);
    out.Sigma2[l + 1] = out.Sigma2[l] + inner(set.vbar[l], set.vbar[l], rho) + 2.0 * cross;
    out.sigma2[l + 1] = out.sigma2[l] + inner(set.psi[l], set.psi[l], rho);
    if (l + 1 == n) break;
    active.push_back({l, set.vbar[l] * rho});
    const auto mat = chain.matrix(l + 1);
    for (auto& a : active) {
      mat->apply_into(a.g.values(), tmp.values());
      std::swap(a.g, tmp);
    }
    while (!active.empty() && (l + 1) - active.front().origin > out.window) active.pop_front();
  }
  return out;
}

struct DecompositionOptions {
  double h_tol = 1e-14;
  const DecFit* dec = nullptr;
};

/// Builds every table of the decomposition up to horizon n. The chain must
/// have length ≥ n+1 (h_{n+1} and T_{n+1} enter ψ_n).
///
/// h_k is assembled by sweeping forward the pushed terms P^{m→k}(v̄_m·𝒫^m1)
/// for all live m, dropping a term once its contribution to h falls below
/// h_tol. This is the same truncated sum as compute_h at O(depth) cost per k.
inline DecompositionSet build_decomposition(const OperatorChain& chain, const Observable& v, std::size_t n,
                                            DecompositionOptions opts = {}) {
  if (chain.length() < n + 1) throw std::invalid_argument("chain shorter than horizon + 1");
  const auto N = chain.grid_size();
  DecompositionSet set;
  set.n = n;
  set.grid = N;
  set.observable = v;
  for (std::size_t k = 0; k <= n; ++k) {
    auto c = center_observable(v, k, chain);
    set.shift.push_back(c.shift);
    set.vbar.push_back(std::move(c.values));
  }

  struct Pushed {
    std::size_t origin;
    GridFunction g;
  };
  std::deque<Pushed> live;
  GridFunction tmp(N);
  set.h.emplace_back(N, 0.0);
  set.h_depth.push_back(0);
  for (std::size_t k = 1; k <= n + 1; ++k) {
    const auto& rho = chain.chain_one(k);
    require_min(rho, k);
    live.push_back({k - 1, set.vbar[k - 1] * chain.chain_one(k - 1)});
    const auto mat = chain.matrix(k);
    GridFunction hk(N, 0.0);
    for (auto it = live.begin(); it != live.end();) {
      mat->apply_into(it->g.values(), tmp.values());
      std::swap(it->g, tmp);
      double sup = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        const double t = it->g[i] / rho[i];
        hk[i] += t;
        sup = std::max(sup, std::abs(t));
      }
      it = sup < opts.h_tol ? live.erase(it) : std::next(it);
    }
    set.h_depth.push_back(live.size());
    set.h_bound = std::max(set.h_bound, sup_norm(hk));
    set.h.push_back(std::move(hk));
  }

  for (std::size_t k = 0; k <= n; ++k) set.psi.push_back(compute_psi(set, k, chain));
  for (std::size_t k = 0; k < n; ++k) {
    set.cond_var.push_back(q_apply(k + 1, set.psi[k] * set.psi[k], chain));
    set.mds_residual.push_back(check_reverse_mds(set, k, chain));
    set.mds_residual_grid.push_back(check_reverse_mds_grid(set, k, chain));
  }
  auto var = variances(set, chain, opts.dec);
  set.Sigma2 = std::move(var.Sigma2);
  set.sigma2 = std::move(var.sigma2);
  set.corr_window = var.window;
  return set;
}

/// h_k by the recursion h_k = Q_k(v̄_{k-1} + h_{k-1}); untruncated.
inline std::vector<GridFunction> h_by_recursion(const DecompositionSet& set, const OperatorChain& chain,
                                                std::size_t up_to) {
  std::vector<GridFunction> hs{GridFunction(chain.grid_size(), 0.0)};
  for (std::size_t k = 1; k <= up_to; ++k) hs.push_back(q_apply(k, set.vbar[k - 1] + hs.back(), chain));
  return hs;
}

// ---------------------------------------------------------------------------
// Monte Carlo moment diagnostics

struct MomentRow {
  std::size_t n = 0;
  double var_ratio = 0.0;       // Var(S_nΨ) / (1 + Var(S_n v̄))
  double max_ratio = 0.0;       // ‖max_k |S_k v̄|‖_p / (1 + ‖S_n v̄‖_2)
  double variance_gap = 0.0;    // (Σ_n² − σ_n²) / σ_n
  double max_lp = 0.0;          // ‖max_{k≤n} |S_k v̄|‖_p
  double max_of_n_bound = 0.0;  // n^{1/p} · max_k ‖S_k v̄‖_p
};

struct MomentReport {
  std::vector<MomentRow> rows;
  double max_var_ratio = 0.0;
  double max_max_ratio = 0.0;
  double max_variance_gap = 0.0;
  std::vector<std::string> warnings;
};

inline MomentReport moment_diagnostics(const DecompositionSet& set, std::span<const Orbit> orbits, double p,
                                       const std::vector<std::size_t>& horizons) {
  MomentReport rep;
  if (orbits.size() < 1000)
    rep.warnings.push_back("fewer than 1000 orbits: moment estimates have low statistical power");
  if (orbits.empty()) return rep;
  std::size_t top = 0;
  for (auto n : horizons) top = std::max(top, n);
  if (top > set.n) throw std::out_of_range("moment_diagnostics: horizon beyond decomposition");
  for (const auto& o : orbits)
    if (o.length() < top) throw std::invalid_argument("moment_diagnostics: orbit shorter than horizon");

  const double K = static_cast<double>(orbits.size());
  // per orbit running sums; evaluated once up to the top horizon
  std::vector<std::vector<double>> Sv(orbits.size()), SPsi(orbits.size());
  for (std::size_t r = 0; r < orbits.size(); ++r) {
    Sv[r].assign(top + 1, 0.0);
    SPsi[r].assign(top + 1, 0.0);
    for (std::size_t i = 0; i < top; ++i) {
      const double psi = set.psi_on_orbit(orbits[r], i);
      Sv[r][i + 1] = Sv[r][i] + set.vbar_at(i, orbits[r][i]);
      SPsi[r][i + 1] = SPsi[r][i] + psi * psi;
    }
  }
  auto variance = [&](auto&& f) {
    double s = 0, s2 = 0;
    for (std::size_t r = 0; r < orbits.size(); ++r) {
      const double x = f(r);
      s += x, s2 += x * x;
    }
    const double m = s / K;
    return K > 1 ? (s2 - K * m * m) / (K - 1) : 0.0;
  };
  auto lp = [&](auto&& f) {
    double s = 0;
    for (std::size_t r = 0; r < orbits.size(); ++r) s += std::pow(std::abs(f(r)), p);
    return std::pow(s / K, 1.0 / p);
  };
  for (auto n : horizons) {
    MomentRow row;
    row.n = n;
    const double var_psi = variance([&](std::size_t r) { return SPsi[r][n]; });
    const double var_v = variance([&](std::size_t r) { return Sv[r][n]; });
    row.var_ratio = var_psi / (1.0 + var_v);
    row.max_lp = lp([&](std::size_t r) {
      double m = 0;
      for (std::size_t k = 1; k <= n; ++k) m = std::max(m, std::abs(Sv[r][k]));
      return m;
    });
    double ss = 0.0;
    for (const auto& s : Sv) ss += s[n] * s[n];
    const double l2 = std::sqrt(ss / K);
    row.max_ratio = row.max_lp / (1.0 + l2);
    double max_k_lp = 0.0;
    for (std::size_t k = 1; k <= n; ++k) max_k_lp = std::max(max_k_lp, lp([&](std::size_t r) { return Sv[r][k]; }));
    row.max_of_n_bound = std::pow(static_cast<double>(n), 1.0 / p) * max_k_lp;
    row.variance_gap = set.sigma2[n] > 0 ? (set.Sigma2[n] - set.sigma2[n]) / std::sqrt(set.sigma2[n]) : 0.0;
    rep.max_var_ratio = std::max(rep.max_var_ratio, row.var_ratio);
    rep.max_max_ratio = std::max(rep.max_max_ratio, row.max_ratio);
    rep.max_variance_gap = std::max(rep.max_variance_gap, std::abs(row.variance_gap));
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace seqwip
