#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace seqwip {

/// Piecewise-constant function on the uniform partition of [0,1] into N cells.
///
/// Point evaluation (`at`) interpolates linearly between cell midpoints and
/// extends by the end values outside [mid_0, mid_{N-1}]; this is what compositions
/// such as h∘T and evaluations along orbits use.
class GridFunction {
 public:
  GridFunction() = default;
  explicit GridFunction(std::size_t n, double fill = 0.0) : values_(n, fill) { check(); }
  explicit GridFunction(std::vector<double> values) : values_(std::move(values)) { check(); }

  template <class F>
  static GridFunction sample(std::size_t n, F&& f) {
    GridFunction g(n);
    for (std::size_t i = 0; i < n; ++i) g.values_[i] = f(midpoint(i, n));
    return g;
  }

  static double midpoint(std::size_t i, std::size_t n) noexcept {
    return (static_cast<double>(i) + 0.5) / static_cast<double>(n);
  }

  std::size_t size() const noexcept { return values_.size(); }
  double cell_width() const noexcept { return 1.0 / static_cast<double>(values_.size()); }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  double& operator[](std::size_t i) noexcept { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  const std::vector<double>& vec() const noexcept { return values_; }

  std::size_t cell_of(double x) const noexcept {
    const auto n = values_.size();
    if (!(x > 0.0)) return 0;
    const auto i = static_cast<std::size_t>(x * static_cast<double>(n));
    return std::min(i, n - 1);
  }

  /// Value of the cell containing x (x = 1 belongs to the last cell).
  double cell_value(double x) const noexcept { return values_[cell_of(x)]; }

  double at(double x) const noexcept {
    const auto n = values_.size();
    const double s = x * static_cast<double>(n) - 0.5;
    if (!(s > 0.0)) return values_.front();
    if (s >= static_cast<double>(n - 1)) return values_.back();
    const auto i = static_cast<std::size_t>(s);
    const double w = s - static_cast<double>(i);
    return values_[i] + w * (values_[i + 1] - values_[i]);
  }

  GridFunction& operator+=(const GridFunction& o) { return zip(o, std::plus<>{}); }
  GridFunction& operator-=(const GridFunction& o) { return zip(o, std::minus<>{}); }
  GridFunction& operator*=(const GridFunction& o) { return zip(o, std::multiplies<>{}); }
  GridFunction& operator+=(double c) {
    for (auto& v : values_) v += c;
    return *this;
  }
  GridFunction& operator*=(double c) {
    for (auto& v : values_) v *= c;
    return *this;
  }

  friend GridFunction operator+(GridFunction a, const GridFunction& b) { return a += b; }
  friend GridFunction operator-(GridFunction a, const GridFunction& b) { return a -= b; }
  friend GridFunction operator*(GridFunction a, const GridFunction& b) { return a *= b; }
  friend GridFunction operator*(GridFunction a, double c) { return a *= c; }
  friend GridFunction operator*(double c, GridFunction a) { return a *= c; }

 private:
  void check() const {
    if (values_.size() < 2) throw std::invalid_argument("GridFunction needs at least 2 cells");
  }

  template <class Op>
  GridFunction& zip(const GridFunction& o, Op op) {
    if (o.size() != size()) throw std::invalid_argument("GridFunction size mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] = op(values_[i], o.values_[i]);
    return *this;
  }

  std::vector<double> values_;
};

/// ∫ f dm on equal-width cells: the mean of the cell values.
inline double lebesgue_integral(const GridFunction& f) {
  const auto v = f.values();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// ∫ f·g dm.
inline double inner(const GridFunction& f, const GridFunction& g) {
  if (f.size() != g.size()) throw std::invalid_argument("GridFunction size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += f[i] * g[i];
  return s / static_cast<double>(f.size());
}

/// ∫ f·g·w dm.
inline double inner(const GridFunction& f, const GridFunction& g, const GridFunction& w) {
  if (f.size() != g.size() || f.size() != w.size()) throw std::invalid_argument("GridFunction size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += f[i] * g[i] * w[i];
  return s / static_cast<double>(f.size());
}

inline double sup_norm(const GridFunction& f) {
  double m = 0.0;
  for (double v : f.values()) m = std::max(m, std::abs(v));
  return m;
}

inline double l1_norm(const GridFunction& f) {
  double s = 0.0;
  for (double v : f.values()) s += std::abs(v);
  return s / static_cast<double>(f.size());
}

inline double total_variation(const GridFunction& f) {
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < f.size(); ++i) s += std::abs(f[i + 1] - f[i]);
  return s;
}

/// Discrete BV norm: total variation plus L¹ norm.
inline double bv_norm(const GridFunction& f) { return total_variation(f) + l1_norm(f); }

inline double min_value(const GridFunction& f) { return *std::min_element(f.values().begin(), f.values().end()); }
inline double max_value(const GridFunction& f) { return *std::max_element(f.values().begin(), f.values().end()); }

/// Averages a fine grid down onto `coarse` cells (coarse must divide fine).
inline GridFunction coarsen(const GridFunction& fine, std::size_t coarse) {
  if (coarse == 0 || fine.size() % coarse != 0) throw std::invalid_argument("coarsen: sizes not nested");
  const std::size_t r = fine.size() / coarse;
  GridFunction out(coarse);
  for (std::size_t i = 0; i < coarse; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < r; ++j) s += fine[i * r + j];
    out[i] = s / static_cast<double>(r);
  }
  return out;
}

}  // namespace seqwip
