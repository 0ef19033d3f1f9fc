#pragma once

// Variance-time-rescaled polygonal processes built from orbits:
//   W_n (Birkhoff sums of v̄ against Σ_k²), M_n (ψ against σ_k²),
//   X_n (the reversed martingale difference array against V_{n,k}).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "decomp.hpp"
#include "orbit.hpp"
#include "transfer.hpp"

namespace seqwip {

/// `standard`: vertices (Σ_k²/Σ_n², S_k/Σ_n), k = 0..n, so W(0) = 0.
/// `verbatim`: the displayed formula taken literally; the fractional term
/// carries v̄_{N_n(t)} and the vertices are (Σ_k²/Σ_n², S_{k+1}/Σ_n).
enum class PathConvention : std::uint8_t { standard = 0, verbatim = 1 };

inline const char* to_string(PathConvention c) { return c == PathConvention::standard ? "standard" : "verbatim"; }

class DegenerateVariance : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct PolygonalPath {
  std::vector<double> times;
  std::vector<double> values;
  PathConvention convention = PathConvention::standard;

  std::size_t size() const noexcept { return times.size(); }

  double operator()(double t) const noexcept {
    if (t <= times.front()) return values.front();
    if (t >= times.back()) return values.back();
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const auto i = static_cast<std::size_t>(it - times.begin());
    const double w = (t - times[i - 1]) / (times[i] - times[i - 1]);
    return values[i - 1] + w * (values[i] - values[i - 1]);
  }

  /// Values at sorted query times (one merge pass).
  std::vector<double> resample(std::span<const double> ts) const {
    std::vector<double> out(ts.size());
    std::size_t i = 1;
    for (std::size_t q = 0; q < ts.size(); ++q) {
      const double t = ts[q];
      if (t <= times.front()) {
        out[q] = values.front();
        continue;
      }
      if (t >= times.back()) {
        out[q] = values.back();
        continue;
      }
      while (times[i] < t) ++i;
      const double w = (t - times[i - 1]) / (times[i] - times[i - 1]);
      out[q] = values[i - 1] + w * (values[i] - values[i - 1]);
    }
    return out;
  }

  void validate() const {
    if (times.size() != values.size() || times.size() < 2) throw std::invalid_argument("path needs >= 2 vertices");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1])) throw std::invalid_argument("path times must increase strictly");
  }
};

using PathEnsemble = std::vector<PolygonalPath>;

inline bool has_common_grid(const PathEnsemble& e) {
  for (const auto& p : e)
    if (p.times != e.front().times) return false;
  return !e.empty();
}

/// N_n(t) = min{1 ≤ k ≤ n : tΣ_n² ≤ Σ_k²}.
inline std::size_t index_Nn(double t, std::span<const double> cumvar, std::size_t n) {
  if (n == 0 || n >= cumvar.size()) throw std::out_of_range("index_Nn: horizon outside variance table");
  if (!(cumvar[n] > 0.0)) throw DegenerateVariance("Sigma_n^2 = 0");
  const double target = t * cumvar[n];
  const auto it = std::lower_bound(cumvar.begin() + 1, cumvar.begin() + static_cast<std::ptrdiff_t>(n) + 1, target);
  if (it == cumvar.begin() + static_cast<std::ptrdiff_t>(n) + 1) return n;
  return static_cast<std::size_t>(it - cumvar.begin());
}

/// Polygon through (cumvar_k/cumvar_n, partial_k/scale). Vertices whose time
/// equals the previous kept time (zero variance increment) are dropped.
inline PolygonalPath variance_time_path(std::span<const double> cumvar, std::span<const double> partial,
                                        std::size_t n, PathConvention conv) {
  if (!(cumvar[n] > 0.0)) throw DegenerateVariance("zero total variance");
  const double scale = std::sqrt(cumvar[n]);
  PolygonalPath p;
  p.convention = conv;
  const std::size_t shift = conv == PathConvention::verbatim ? 1 : 0;
  for (std::size_t k = 0; k <= n; ++k) {
    const double t = cumvar[k] / cumvar[n];
    if (!p.times.empty() && !(t > p.times.back())) continue;
    p.times.push_back(t);
    p.values.push_back(partial[k + shift] / scale);
  }
  return p;
}

inline std::vector<double> partial_sums(std::span<const double> increments) {
  std::vector<double> s(increments.size() + 1, 0.0);
  for (std::size_t i = 0; i < increments.size(); ++i) s[i + 1] = s[i] + increments[i];
  return s;
}

inline void require_orbit(const Orbit& o, std::size_t n) {
  if (o.length() < n) throw std::invalid_argument("orbit shorter than horizon");
}

/// v̄_0(x_0), ..., v̄_{m-1}(x_{m-1}).
inline std::vector<double> vbar_increments(const Orbit& o, const DecompositionSet& set, std::size_t m) {
  std::vector<double> inc(m);
  for (std::size_t i = 0; i < m; ++i) inc[i] = set.vbar_at(i, o[i]);
  return inc;
}

inline std::vector<double> psi_increments(const Orbit& o, const DecompositionSet& set, std::size_t m) {
  std::vector<double> inc(m);
  for (std::size_t i = 0; i < m; ++i) inc[i] = set.psi_on_orbit(o, i);
  return inc;
}

inline PolygonalPath build_wn(const Orbit& o, const DecompositionSet& set, std::size_t n,
                              PathConvention conv = PathConvention::standard) {
  if (n > set.n) throw std::out_of_range("build_wn: horizon beyond decomposition");
  require_orbit(o, n);
  const std::size_t m = conv == PathConvention::verbatim ? n + 1 : n;
  const auto s = partial_sums(vbar_increments(o, set, m));
  return variance_time_path(set.Sigma2, s, n, conv);
}

inline PolygonalPath build_wn(const Orbit& o, const DecompositionSet& set,
                              PathConvention conv = PathConvention::standard) {
  return build_wn(o, set, set.n, conv);
}

inline PolygonalPath build_mn(const Orbit& o, const DecompositionSet& set, std::size_t n,
                              PathConvention conv = PathConvention::standard) {
  if (n > set.n) throw std::out_of_range("build_mn: horizon beyond decomposition");
  require_orbit(o, n);
  const std::size_t m = conv == PathConvention::verbatim ? n + 1 : n;
  const auto s = partial_sums(psi_increments(o, set, m));
  return variance_time_path(set.sigma2, s, n, conv);
}

/// r_n(t) = min{1 ≤ k ≤ n : tσ_n² ≤ σ_k²}.
inline std::size_t index_rn(double t, const DecompositionSet& set, std::size_t n) {
  return index_Nn(t, set.sigma2, n);
}

/// V_{n,l} = σ_n^{-2} Σ_{j=1..l} Q_{n-j+1}(ψ_{n-j}²)(x_{n-j+1}), l = 0..n.
inline std::vector<double> quadratic_variation(const Orbit& o, const DecompositionSet& set, std::size_t n) {
  if (n > set.n) throw std::out_of_range("quadratic_variation: horizon beyond decomposition");
  require_orbit(o, n);
  if (!(set.sigma2[n] > 0.0)) throw DegenerateVariance("sigma_n^2 = 0");
  std::vector<double> v(n + 1, 0.0);
  for (std::size_t j = 1; j <= n; ++j) {
    const double c = set.cond_var[n - j].at(o[n - j + 1]);
    v[j] = v[j - 1] + std::max(c, 0.0) / set.sigma2[n];
  }
  return v;
}

/// ξ_{n,j} = ψ_{n-j}(x_{n-j}) / σ_n, j = 1..n (index 0 unused).
inline std::vector<double> martingale_differences(const Orbit& o, const DecompositionSet& set, std::size_t n) {
  const double s = std::sqrt(set.sigma2[n]);
  std::vector<double> xi(n + 1, 0.0);
  for (std::size_t j = 1; j <= n; ++j) xi[j] = set.psi_on_orbit(o, n - j) / s;
  return xi;
}

inline PolygonalPath build_xn(const Orbit& o, const DecompositionSet& set, std::size_t n) {
  const auto v = quadratic_variation(o, set, n);
  if (!(v[n] > 0.0)) throw DegenerateVariance("V_{n,n} = 0");
  const auto xi = martingale_differences(o, set, n);
  PolygonalPath p;
  double acc = 0.0;
  for (std::size_t k = 0; k <= n; ++k) {
    if (k > 0) acc += xi[k];
    const double t = v[k] / v[n];
    if (!p.times.empty() && !(t > p.times.back())) continue;
    p.times.push_back(t);
    p.values.push_back(acc);
  }
  // keep the full sum at t = 1 even if the last increment had zero width
  p.values.back() = acc;
  return p;
}

/// g(u)(t) = u(1) − u(1 − t).
inline PolygonalPath g_transform(const PolygonalPath& u) {
  PolygonalPath out;
  out.convention = u.convention;
  const double end = u.values.back();
  const std::size_t m = u.size();
  out.times.resize(m);
  out.values.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    out.times[j] = 1.0 - u.times[m - 1 - j];
    out.values[j] = end - u.values[m - 1 - j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Block decomposition of {0, ..., n-1}

struct Block {
  std::size_t begin = 0;  // inclusive
  std::size_t end = 0;    // exclusive
  double variance = 0.0;  // 𝔼(S_I)²
};

struct BlockDecomposition {
  std::vector<Block> blocks;
  double threshold_B = 0.0;
  double Sigma_n = 0.0;
  double q_over_sigma = 0.0;
  std::vector<std::size_t> overshoot;  // blocks above 4BΣ_n
  std::vector<std::string> warnings;
};

/// Measured constant of Σ_n² = σ_n² + O(σ_n): max_k |Σ_k² − σ_k²| / σ_k.
inline double variance_gap_constant(const DecompositionSet& set) {
  double b = 0.0;
  for (std::size_t k = 1; k <= set.n; ++k)
    if (set.sigma2[k] > 0.0) b = std::max(b, std::abs(set.Sigma2[k] - set.sigma2[k]) / std::sqrt(set.sigma2[k]));
  return b;
}

/// 𝔼(Σ_{i∈[begin,end)} v̄_i∘𝒯^i)² with cross terms up to lag `window`.
inline double interval_variance(const DecompositionSet& set, const OperatorChain& chain, std::size_t begin,
                                std::size_t end, std::size_t window) {
  struct Pushed {
    std::size_t origin;
    GridFunction g;
  };
  std::deque<Pushed> active;
  GridFunction tmp(chain.grid_size());
  double var = 0.0;
  for (std::size_t l = begin; l < end; ++l) {
    double cross = 0.0;
    for (const auto& a : active) cross += inner(a.g, set.vbar[l]);
    var += inner(set.vbar[l], set.vbar[l], chain.chain_one(l)) + 2.0 * cross;
    if (l + 1 == end) break;
    active.push_back({l, set.vbar[l] * chain.chain_one(l)});
    const auto mat = chain.matrix(l + 1);
    for (auto& a : active) {
      mat->apply_into(a.g.values(), tmp.values());
      std::swap(a.g, tmp);
    }
    while (!active.empty() && (l + 1) - active.front().origin > window) active.pop_front();
  }
  return var;
}

/// Greedy left-to-right blocks with 𝔼(S_I)² ≥ 2BΣ_n; a deficient tail block
/// is merged into its predecessor. `B <= 0` selects the measured gap constant
/// (falling back to 1 when that is numerically zero).
inline BlockDecomposition block_decomposition(const DecompositionSet& set, const OperatorChain& chain, double B,
                                              std::size_t n = 0) {
  if (n == 0) n = set.n;
  BlockDecomposition out;
  if (!(B > 0.0)) {
    B = variance_gap_constant(set);
    if (!(B > 1e-9)) {
      out.warnings.push_back("measured variance-gap constant is ~0; using B = 1");
      B = 1.0;
    }
  }
  out.threshold_B = B;
  out.Sigma_n = std::sqrt(set.Sigma2[n]);
  const double lower = 2.0 * B * out.Sigma_n, upper = 4.0 * B * out.Sigma_n;
  const double rel = 1e-9;
  const std::size_t window = set.corr_window == 0 ? n : set.corr_window;

  struct Pushed {
    std::size_t origin;
    GridFunction g;
  };
  std::deque<Pushed> active;
  GridFunction tmp(chain.grid_size());
  Block cur{0, 0, 0.0};
  for (std::size_t l = 0; l < n; ++l) {
    double cross = 0.0;
    for (const auto& a : active) cross += inner(a.g, set.vbar[l]);
    cur.variance += inner(set.vbar[l], set.vbar[l], chain.chain_one(l)) + 2.0 * cross;
    cur.end = l + 1;
    if (cur.variance >= lower * (1.0 - rel)) {
      out.blocks.push_back(cur);
      cur = Block{l + 1, l + 1, 0.0};
      active.clear();
      continue;
    }
    if (l + 1 == n) break;
    active.push_back({l, set.vbar[l] * chain.chain_one(l)});
    const auto mat = chain.matrix(l + 1);
    for (auto& a : active) {
      mat->apply_into(a.g.values(), tmp.values());
      std::swap(a.g, tmp);
    }
    while (!active.empty() && (l + 1) - active.front().origin > window) active.pop_front();
  }
  if (cur.end > cur.begin) {
    if (out.blocks.empty()) {
      out.warnings.push_back("2B*Sigma_n exceeds the total variance: single degenerate block");
      out.blocks.push_back(cur);
    } else {
      // merged variance: recompute over the union by quadrature
      auto& last = out.blocks.back();
      last.end = cur.end;
      last.variance = interval_variance(set, chain, last.begin, last.end, window);
    }
  }
  for (std::size_t j = 0; j < out.blocks.size(); ++j)
    if (out.blocks[j].variance > upper * (1.0 + rel) && j + 1 < out.blocks.size()) out.overshoot.push_back(j);
  out.q_over_sigma = static_cast<double>(out.blocks.size()) / out.Sigma_n;
  return out;
}

// ---------------------------------------------------------------------------
// Ensemble serialization: 8-byte magic, u32 version, u64 count, u64 grid
// length, u8 convention tag, the shared vertex times, then per-path values;
// all little-endian float64.

inline constexpr std::array<char, 8> kEnsembleMagic{'S', 'Q', 'W', 'P', 'A', 'T', 'H', '\0'};

inline void write_ensemble(const std::string& path, const PathEnsemble& e) {
  if (e.empty() || !has_common_grid(e)) throw std::invalid_argument("ensemble needs a common vertex grid");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  os.write(kEnsembleMagic.data(), kEnsembleMagic.size());
  detail::put_le<std::uint32_t>(os, 1);
  detail::put_le<std::uint64_t>(os, e.size());
  detail::put_le<std::uint64_t>(os, e.front().size());
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(e.front().convention));
  for (double t : e.front().times) detail::put_le<double>(os, t);
  for (const auto& p : e)
    for (double v : p.values) detail::put_le<double>(os, v);
}

inline PathEnsemble read_ensemble(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (magic != kEnsembleMagic) throw std::runtime_error("not an ensemble file: " + path);
  if (detail::get_le<std::uint32_t>(is) != 1) throw std::runtime_error("unsupported ensemble version");
  const auto count = detail::get_le<std::uint64_t>(is);
  const auto len = detail::get_le<std::uint64_t>(is);
  const auto conv = static_cast<PathConvention>(detail::get_le<std::uint8_t>(is));
  std::vector<double> times(len);
  for (auto& t : times) t = detail::get_le<double>(is);
  PathEnsemble e(count);
  for (auto& p : e) {
    p.times = times;
    p.convention = conv;
    p.values.resize(len);
    for (auto& v : p.values) v = detail::get_le<double>(is);
  }
  return e;
}

/// Long-format CSV: path,t,value.
inline void write_ensemble_csv(std::ostream& os, const PathEnsemble& e) {
  os.precision(17);
  os << "path,t,value\n";
  for (std::size_t i = 0; i < e.size(); ++i)
    for (std::size_t j = 0; j < e[i].size(); ++j) os << i << ',' << e[i].times[j] << ',' << e[i].values[j] << '\n';
}

}  // namespace seqwip
