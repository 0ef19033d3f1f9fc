#pragma once

// Ulam discretization of the transfer operators P_k and their compositions.
//
// M[j][i] = m(A_i ∩ T_k^{-1} A_j) / m(A_j) on the uniform partition {A_i} of
// [0,1]. Entries are computed by intersecting branch images with cells, so for
// affine branches they are exact up to rounding. Each column touches only the
// cells covered by the image of one source cell, so storage is compressed
// sparse column.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "grid.hpp"
#include "maps.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace seqwip {

class MinFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UlamMatrix {
 public:
  UlamMatrix() = default;

  /// Raw CSC constructor; col_start has N+1 entries.
  UlamMatrix(std::size_t n, std::size_t source_index, std::vector<std::size_t> col_start,
             std::vector<std::uint32_t> rows, std::vector<double> vals)
      : n_(n), k_(source_index), col_start_(std::move(col_start)), rows_(std::move(rows)), vals_(std::move(vals)) {
    if (col_start_.size() != n_ + 1 || rows_.size() != vals_.size() || col_start_.back() != vals_.size())
      throw std::invalid_argument("inconsistent CSC arrays");
  }

  static UlamMatrix from_dense(std::size_t n, std::size_t source_index, const std::vector<double>& row_major) {
    if (row_major.size() != n * n) throw std::invalid_argument("dense matrix has wrong size");
    std::vector<std::size_t> cs{0};
    std::vector<std::uint32_t> rows;
    std::vector<double> vals;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double v = row_major[j * n + i];
        if (v != 0.0) {
          rows.push_back(static_cast<std::uint32_t>(j));
          vals.push_back(v);
        }
      }
      cs.push_back(vals.size());
    }
    return UlamMatrix(n, source_index, std::move(cs), std::move(rows), std::move(vals));
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t source_index() const noexcept { return k_; }
  std::size_t nonzeros() const noexcept { return vals_.size(); }
  std::size_t bytes() const noexcept {
    return vals_.size() * (sizeof(double) + sizeof(std::uint32_t)) + col_start_.size() * sizeof(std::size_t);
  }

  double entry(std::size_t j, std::size_t i) const {
    for (std::size_t e = col_start_[i]; e < col_start_[i + 1]; ++e)
      if (rows_[e] == j) return vals_[e];
    return 0.0;
  }

  std::vector<double> dense() const {
    std::vector<double> out(n_ * n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t e = col_start_[i]; e < col_start_[i + 1]; ++e) out[rows_[e] * n_ + i] = vals_[e];
    return out;
  }

  template <class F>
  void for_each_entry(F&& f) const {
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t e = col_start_[i]; e < col_start_[i + 1]; ++e) f(rows_[e], i, vals_[e]);
  }

  void apply_into(std::span<const double> f, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      const double fi = f[i];
      if (fi == 0.0) continue;
      for (std::size_t e = col_start_[i]; e < col_start_[i + 1]; ++e) out[rows_[e]] += vals_[e] * fi;
    }
  }

  GridFunction apply(const GridFunction& f) const {
    if (f.size() != n_) throw std::invalid_argument("grid size mismatch in Ulam apply");
    GridFunction out(n_);
    apply_into(f.values(), out.values());
    return out;
  }

  /// max_i |Σ_j M[j][i]·m(A_j) − m(A_i)| (in units of m(A_i)).
  double mass_conservation_error() const noexcept {
    double worst = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      double s = 0.0;
      for (std::size_t e = col_start_[i]; e < col_start_[i + 1]; ++e) s += vals_[e];
      worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
  }

  double min_entry() const noexcept {
    double m = 0.0;
    for (double v : vals_) m = std::min(m, v);
    return m;
  }

 private:
  std::size_t n_ = 0;
  std::size_t k_ = 0;
  std::vector<std::size_t> col_start_;
  std::vector<std::uint32_t> rows_;
  std::vector<double> vals_;
};

/// Ulam matrix of a single map on N cells.
inline UlamMatrix ulam_discretize(const IntervalMap& map, std::size_t n, std::size_t source_index = 0) {
  if (n < 2) throw std::invalid_argument("grid size must be >= 2");
  if (map.min_expansion() < 1.0 + 1e-9) throw DomainError("branch slope below 1+1e-9: map is not expanding");
  const double dn = static_cast<double>(n);
  std::vector<std::vector<std::pair<std::uint32_t, double>>> cols(n);

  for (const auto& b : map.branches()) {
    const double l = b.domain_left, r = b.domain_right;
    const auto i0 = static_cast<std::size_t>(std::floor(l * dn));
    const auto i1 = std::min(n, static_cast<std::size_t>(std::ceil(r * dn)));
    const double inv_slope = b.is_affine() ? 1.0 / std::abs(std::get<AffineForm>(b.forward).slope) : 0.0;
    for (std::size_t i = i0; i < i1; ++i) {
      const double lo = std::max(l, static_cast<double>(i) / dn);
      const double hi = std::min(r, static_cast<double>(i + 1) / dn);
      if (!(hi > lo)) continue;
      const double ya = b.value(lo), yb = b.value(hi);
      const bool inc = ya <= yb;
      const double ymin = std::clamp(inc ? ya : yb, 0.0, 1.0);
      const double ymax = std::clamp(inc ? yb : ya, 0.0, 1.0);
      const double x_at_ymin = inc ? lo : hi, x_at_ymax = inc ? hi : lo;
      const auto j0 = std::min(n - 1, static_cast<std::size_t>(std::floor(ymin * dn)));
      const auto j1 = std::min(n, static_cast<std::size_t>(std::ceil(ymax * dn)));
      for (std::size_t j = j0; j < std::max(j1, j0 + 1); ++j) {
        const double c0 = std::max(ymin, static_cast<double>(j) / dn);
        const double c1 = std::min(ymax, static_cast<double>(j + 1) / dn);
        if (!(c1 > c0)) continue;
        double len;
        if (b.is_affine()) {
          len = (c1 - c0) * inv_slope;
        } else {
          const double x0 = c0 == ymin ? x_at_ymin : b.inverse(c0);
          const double x1 = c1 == ymax ? x_at_ymax : b.inverse(c1);
          len = std::abs(x1 - x0);
        }
        cols[i].emplace_back(static_cast<std::uint32_t>(j), len * dn);
      }
    }
  }

  std::vector<std::size_t> cs{0};
  std::vector<std::uint32_t> rows;
  std::vector<double> vals;
  for (auto& col : cols) {
    std::sort(col.begin(), col.end());
    for (std::size_t e = 0; e < col.size(); ++e) {
      if (!rows.empty() && vals.size() > cs.back() && rows.back() == col[e].first)
        vals.back() += col[e].second;
      else {
        rows.push_back(col[e].first);
        vals.push_back(col[e].second);
      }
    }
    cs.push_back(vals.size());
  }
  return UlamMatrix(n, source_index, std::move(cs), std::move(rows), std::move(vals));
}

inline UlamMatrix ulam_discretize(const MapFamily& family, std::size_t k, std::size_t n) {
  return ulam_discretize(family.map(k), n, k);
}

struct ChainOptions {
  std::size_t memory_cap_bytes = std::size_t{1} << 30;
  unsigned threads = 1;
};

/// P_1, ..., P_n together with the cached densities 𝒫^k 1, k = 0..n.
///
/// Matrices are kept in memory when n·(bytes per matrix) fits the cap;
/// otherwise they are rebuilt from the family on each application.
class OperatorChain {
 public:
  OperatorChain(const MapFamily& family, std::size_t grid, std::size_t length, ChainOptions opts = {})
      : family_(family), n_(grid), len_(length) {
    if (grid < 2) throw std::invalid_argument("grid size must be >= 2");
    if (length >= 1) {
      auto first = std::make_shared<const UlamMatrix>(ulam_discretize(family, 1, grid));
      if (first->bytes() * length <= opts.memory_cap_bytes) {
        mats_.resize(length);
        mats_[0] = std::move(first);
        parallel_for(length - 1, opts.threads, [&](std::size_t i) {
          mats_[i + 1] = std::make_shared<const UlamMatrix>(ulam_discretize(family, i + 2, grid));
        });
      }
    }
    build_densities();
  }

  explicit OperatorChain(std::vector<UlamMatrix> matrices) {
    if (matrices.empty()) throw std::invalid_argument("empty operator chain");
    n_ = matrices.front().size();
    len_ = matrices.size();
    for (auto& m : matrices) {
      if (m.size() != n_) throw std::invalid_argument("matrices of different sizes in chain");
      mats_.push_back(std::make_shared<const UlamMatrix>(std::move(m)));
    }
    build_densities();
  }

  std::size_t grid_size() const noexcept { return n_; }
  std::size_t length() const noexcept { return len_; }
  bool materialized() const noexcept { return !mats_.empty(); }
  const std::optional<MapFamily>& family() const noexcept { return family_; }

  std::shared_ptr<const UlamMatrix> matrix(std::size_t k) const {
    check_index(k);
    if (!mats_.empty()) return mats_[k - 1];
    return std::make_shared<const UlamMatrix>(ulam_discretize(*family_, k, n_));
  }

  /// P_k f.
  GridFunction apply(std::size_t k, const GridFunction& f) const { return matrix(k)->apply(f); }

  /// P_to ∘ ... ∘ P_{from+1} f; identity when from == to.
  GridFunction apply_chain(std::size_t from, std::size_t to, GridFunction f) const {
    if (from > to || to > len_) throw std::out_of_range("apply_chain: need 0 <= from <= to <= n");
    if (f.size() != n_) throw std::invalid_argument("grid size mismatch in apply_chain");
    GridFunction tmp(n_);
    for (std::size_t k = from + 1; k <= to; ++k) {
      matrix(k)->apply_into(f.values(), tmp.values());
      std::swap(f, tmp);
    }
    return f;
  }

  /// Ulam estimate of 𝒫^k 1.
  const GridFunction& chain_one(std::size_t k) const {
    if (k > len_) throw std::out_of_range("chain_one index beyond chain length");
    return ones_[k];
  }

 private:
  void check_index(std::size_t k) const {
    if (k < 1 || k > len_) throw std::out_of_range("operator index out of range");
  }

  void build_densities() {
    ones_.reserve(len_ + 1);
    ones_.emplace_back(n_, 1.0);
    for (std::size_t k = 1; k <= len_; ++k) ones_.push_back(apply(k, ones_.back()));
  }

  std::optional<MapFamily> family_;
  std::size_t n_ = 0, len_ = 0;
  std::vector<std::shared_ptr<const UlamMatrix>> mats_;
  std::vector<GridFunction> ones_;
};

inline GridFunction apply_chain(const OperatorChain& chain, std::size_t from, std::size_t to, GridFunction f) {
  return chain.apply_chain(from, to, std::move(f));
}

// ---------------------------------------------------------------------------
// (MIN), (SUP), (DEC) diagnostics

struct MinSupResult {
  double delta_hat = 0.0;
  double sup_bound = 0.0;
  bool min_ok = false;
};

inline MinSupResult check_min_sup(const OperatorChain& chain) {
  MinSupResult r{std::numeric_limits<double>::infinity(), 0.0, false};
  for (std::size_t k = 0; k <= chain.length(); ++k) {
    r.delta_hat = std::min(r.delta_hat, min_value(chain.chain_one(k)));
    r.sup_bound = std::max(r.sup_bound, max_value(chain.chain_one(k)));
  }
  r.min_ok = r.delta_hat > 0.0;
  return r;
}

struct DecFit {
  double c_hat = 0.0;
  double gamma_hat = 0.0;
  std::vector<double> gammas;     // per test function
  std::vector<double> residuals;  // log-fit residuals of the worst test function
  bool ok = false;
};

inline constexpr double kDecFloor = 1e-13;

/// Log-linear fit of the BV norm of 𝒫^k v against k for mean-zero test functions.
///
/// Only the leading run of norms above kDecFloor is fitted. When fewer than two
/// points survive, the first sub-floor step k* gives γ̂ = (floor/‖v‖)^{1/k*}.
inline DecFit fit_dec_rate(const OperatorChain& chain, const std::vector<GridFunction>& tests,
                           std::size_t steps = 0) {
  if (tests.size() < 2) throw std::invalid_argument("fit_dec_rate needs at least 2 test functions");
  if (steps == 0 || steps > chain.length()) steps = chain.length();
  DecFit fit;
  std::vector<std::vector<double>> all_norms;
  std::vector<std::vector<double>> all_resid;
  for (const auto& v : tests) {
    if (std::abs(lebesgue_integral(v)) > 1e-12) throw std::invalid_argument("DEC test function is not mean-zero");
    const double v0 = bv_norm(v);
    if (!(v0 > 0.0)) throw std::invalid_argument("DEC test function has zero norm");
    std::vector<double> norms{v0};
    GridFunction cur = v;
    std::size_t below = 0;
    for (std::size_t k = 1; k <= steps; ++k) {
      cur = chain.apply(k, cur);
      const double nk = bv_norm(cur);
      if (!(nk > kDecFloor)) {
        below = k;
        break;
      }
      norms.push_back(nk);
    }
    double gamma;
    std::vector<double> resid;
    if (norms.size() >= 2) {
      const double m = static_cast<double>(norms.size());
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      for (std::size_t k = 0; k < norms.size(); ++k) {
        const double x = static_cast<double>(k), y = std::log(norms[k]);
        sx += x, sy += y, sxx += x * x, sxy += x * y;
      }
      const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
      const double icpt = (sy - slope * sx) / m;
      gamma = std::exp(slope);
      for (std::size_t k = 0; k < norms.size(); ++k)
        resid.push_back(std::log(norms[k]) - (icpt + slope * static_cast<double>(k)));
    } else {
      gamma = std::pow(kDecFloor / v0, 1.0 / static_cast<double>(below));
    }
    fit.gammas.push_back(gamma);
    all_norms.push_back(std::move(norms));
    all_resid.push_back(std::move(resid));
  }
  const auto worst = static_cast<std::size_t>(std::max_element(fit.gammas.begin(), fit.gammas.end()) - fit.gammas.begin());
  fit.gamma_hat = fit.gammas[worst];
  fit.residuals = all_resid[worst];
  for (const auto& norms : all_norms)
    for (std::size_t k = 0; k < norms.size(); ++k)
      fit.c_hat = std::max(fit.c_hat, norms[k] / (norms[0] * std::pow(fit.gamma_hat, static_cast<double>(k))));
  fit.ok = fit.gamma_hat < 1.0;
  return fit;
}

/// Mean-zero probes for the DEC fit: x − ½, a centred step, two harmonics and
/// a seeded random function.
inline std::vector<GridFunction> default_dec_test_functions(std::size_t n, std::uint64_t seed = 7) {
  std::vector<GridFunction> fs;
  fs.push_back(GridFunction::sample(n, [](double x) { return x - 0.5; }));
  fs.push_back(GridFunction::sample(n, [](double x) { return x < 0.5 ? 0.5 : -0.5; }));
  fs.push_back(GridFunction::sample(n, [](double x) { return std::cos(2 * M_PI * x); }));
  fs.push_back(GridFunction::sample(n, [](double x) { return std::sin(6 * M_PI * x); }));
  RandomStream rng(derive_seed(seed, StreamTag::test_function, n));
  GridFunction r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = rng.uniform() - 0.5;
  fs.push_back(std::move(r));
  for (auto& f : fs) f += -lebesgue_integral(f);
  return fs;
}

struct PropertyReport {
  std::size_t grid = 0;
  std::size_t length = 0;
  MinSupResult min_sup;
  DecFit dec;
};

inline PropertyReport check_properties(const OperatorChain& chain, std::size_t dec_steps = 0) {
  PropertyReport r;
  r.grid = chain.grid_size();
  r.length = chain.length();
  r.min_sup = check_min_sup(chain);
  r.dec = fit_dec_rate(chain, default_dec_test_functions(chain.grid_size()), dec_steps);
  return r;
}

// ---------------------------------------------------------------------------
// Binary operator cache: 8-byte magic, u32 version, u64 N, u64 k, u64 family
// hash, then N×N row-major little-endian float64.

inline constexpr std::array<char, 8> kUlamMagic{'S', 'Q', 'W', 'U', 'L', 'A', 'M', '\0'};
inline constexpr std::uint32_t kUlamCacheVersion = 1;

namespace detail {
template <class T>
void put_le(std::ostream& os, T v) {
  std::uint64_t bits = 0;
  if constexpr (std::is_floating_point_v<T>)
    std::memcpy(&bits, &v, sizeof(T));
  else
    bits = static_cast<std::uint64_t>(v);
  for (std::size_t b = 0; b < sizeof(T); ++b) os.put(static_cast<char>((bits >> (8 * b)) & 0xff));
}

template <class T>
T get_le(std::istream& is) {
  std::uint64_t bits = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error("truncated binary file");
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
  }
  if constexpr (std::is_floating_point_v<T>) {
    T v;
    std::memcpy(&v, &bits, sizeof(T));
    return v;
  } else {
    return static_cast<T>(bits);
  }
}
}  // namespace detail

struct UlamCacheHeader {
  std::uint32_t version = kUlamCacheVersion;
  std::uint64_t grid = 0;
  std::uint64_t index = 0;
  std::uint64_t family_hash = 0;
};

inline void write_ulam_cache(const std::string& path, const UlamMatrix& m, std::uint64_t family_hash) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  os.write(kUlamMagic.data(), kUlamMagic.size());
  detail::put_le<std::uint32_t>(os, kUlamCacheVersion);
  detail::put_le<std::uint64_t>(os, m.size());
  detail::put_le<std::uint64_t>(os, m.source_index());
  detail::put_le<std::uint64_t>(os, family_hash);
  for (double v : m.dense()) detail::put_le<double>(os, v);
}

inline std::pair<UlamCacheHeader, UlamMatrix> read_ulam_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (magic != kUlamMagic) throw std::runtime_error("not an Ulam cache file: " + path);
  UlamCacheHeader h;
  h.version = detail::get_le<std::uint32_t>(is);
  if (h.version != kUlamCacheVersion) throw std::runtime_error("unsupported Ulam cache version");
  h.grid = detail::get_le<std::uint64_t>(is);
  h.index = detail::get_le<std::uint64_t>(is);
  h.family_hash = detail::get_le<std::uint64_t>(is);
  std::vector<double> dense(h.grid * h.grid);
  for (auto& v : dense) v = detail::get_le<double>(is);
  return {h, UlamMatrix::from_dense(h.grid, h.index, dense)};
}

}  // namespace seqwip
