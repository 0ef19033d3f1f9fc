#pragma once

// Sequential interval maps T_1, T_2, ... and the observables evaluated along
// their orbits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "grid.hpp"

namespace seqwip {

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct AffineForm {
  double slope = 2.0;
  double intercept = 0.0;
};

/// Monotone C¹ branch given by samples on a uniform grid of its domain,
/// interpolated with Fritsch–Carlson monotone cubic Hermite splines.
class TabulatedForm {
 public:
  TabulatedForm(double left, double right, std::vector<double> samples)
      : left_(left), right_(right), ys_(std::move(samples)) {
    if (ys_.size() < 2) throw ConfigError("tabulated branch needs at least 2 samples");
    if (!(right_ > left_)) throw ConfigError("tabulated branch has empty domain");
    h_ = (right_ - left_) / static_cast<double>(ys_.size() - 1);
    const auto n = ys_.size();
    std::vector<double> delta(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) delta[i] = (ys_[i + 1] - ys_[i]) / h_;
    const bool inc = delta.front() > 0;
    for (double d : delta)
      if ((d > 0) != inc || d == 0.0) throw ConfigError("tabulated branch must be strictly monotone");
    increasing_ = inc;
    ms_.assign(n, 0.0);
    ms_[0] = delta[0];
    ms_[n - 1] = delta[n - 2];
    for (std::size_t i = 1; i + 1 < n; ++i) ms_[i] = 0.5 * (delta[i - 1] + delta[i]);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const double a = ms_[i] / delta[i];
      const double b = ms_[i + 1] / delta[i];
      const double s = a * a + b * b;
      if (s > 9.0) {
        const double tau = 3.0 / std::sqrt(s);
        ms_[i] = tau * a * delta[i];
        ms_[i + 1] = tau * b * delta[i];
      }
    }
  }

  double left() const noexcept { return left_; }
  double right() const noexcept { return right_; }
  bool increasing() const noexcept { return increasing_; }
  const std::vector<double>& samples() const noexcept { return ys_; }

  double value(double x) const noexcept {
    auto [i, t] = locate(x);
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * ys_[i] + (t3 - 2 * t2 + t) * h_ * ms_[i] + (-2 * t3 + 3 * t2) * ys_[i + 1] +
           (t3 - t2) * h_ * ms_[i + 1];
  }

  double derivative(double x) const noexcept {
    auto [i, t] = locate(x);
    const double t2 = t * t;
    return ((6 * t2 - 6 * t) * ys_[i] + (-6 * t2 + 6 * t) * ys_[i + 1]) / h_ + (3 * t2 - 4 * t + 1) * ms_[i] +
           (3 * t2 - 2 * t) * ms_[i + 1];
  }

  /// Smallest |T'| over a dense probe of the domain.
  double min_abs_derivative() const noexcept {
    double m = std::numeric_limits<double>::infinity();
    const std::size_t probes = 16 * (ys_.size() - 1);
    for (std::size_t j = 0; j <= probes; ++j)
      m = std::min(m, std::abs(derivative(left_ + (right_ - left_) * static_cast<double>(j) / probes)));
    return m;
  }

 private:
  std::pair<std::size_t, double> locate(double x) const noexcept {
    const double s = std::clamp((x - left_) / h_, 0.0, static_cast<double>(ys_.size() - 1));
    auto i = std::min(static_cast<std::size_t>(s), ys_.size() - 2);
    return {i, s - static_cast<double>(i)};
  }

  double left_, right_, h_ = 0.0;
  bool increasing_ = true;
  std::vector<double> ys_, ms_;
};

/// One monotone branch of a piecewise expanding map, T(x) = form(x) + shift on
/// [domain_left, domain_right].
struct BranchSpec {
  double domain_left = 0.0;
  double domain_right = 1.0;
  std::variant<AffineForm, std::shared_ptr<const TabulatedForm>> forward = AffineForm{};
  double shift = 0.0;

  bool is_affine() const noexcept { return std::holds_alternative<AffineForm>(forward); }

  double value(double x) const noexcept {
    if (auto* a = std::get_if<AffineForm>(&forward)) return a->slope * x + a->intercept + shift;
    return std::get<1>(forward)->value(x) + shift;
  }

  double derivative(double x) const noexcept {
    if (auto* a = std::get_if<AffineForm>(&forward)) return a->slope;
    return std::get<1>(forward)->derivative(x);
  }

  bool increasing() const noexcept {
    if (auto* a = std::get_if<AffineForm>(&forward)) return a->slope > 0;
    return std::get<1>(forward)->increasing();
  }

  /// Lower bound on |T'| over the branch.
  double derivative_bound() const noexcept {
    if (auto* a = std::get_if<AffineForm>(&forward)) return std::abs(a->slope);
    return std::get<1>(forward)->min_abs_derivative();
  }

  double image_low() const noexcept { return std::min(value(domain_left), value(domain_right)); }
  double image_high() const noexcept { return std::max(value(domain_left), value(domain_right)); }

  /// The x in the domain with T(x) = y; y must lie in the closed image.
  double inverse(double y) const noexcept {
    if (auto* a = std::get_if<AffineForm>(&forward))
      return std::clamp((y - shift - a->intercept) / a->slope, domain_left, domain_right);
    double lo = domain_left, hi = domain_right;
    const bool inc = increasing();
    for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double v = value(mid);
      if ((v < y) == inc)
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  }
};

struct Preimage {
  double preimage;
  double abs_derivative;
};

/// A single piecewise monotone map of [0,1]. Branch domains are ordered and
/// contiguous; a point on a shared endpoint belongs to the right-hand branch.
class IntervalMap {
 public:
  IntervalMap() = default;
  explicit IntervalMap(std::vector<BranchSpec> branches) : branches_(std::move(branches)) { validate(); }

  const std::vector<BranchSpec>& branches() const noexcept { return branches_; }

  std::size_t branch_index(double x) const {
    if (!(x >= 0.0 && x <= 1.0)) throw DomainError("map argument outside [0,1]: " + std::to_string(x));
    auto it = std::upper_bound(branches_.begin(), branches_.end(), x,
                               [](double v, const BranchSpec& b) { return v < b.domain_left; });
    return it == branches_.begin() ? 0 : static_cast<std::size_t>(it - branches_.begin()) - 1;
  }

  double operator()(double x) const {
    const auto& b = branches_[branch_index(x)];
    return std::clamp(b.value(x), 0.0, 1.0);
  }

  double derivative(double x) const { return branches_[branch_index(x)].derivative(x); }

  /// All x with T(x) = y together with |T'(x)|, sorted by x and
  /// deduplicated within 1e-14.
  std::vector<Preimage> inverses(double y) const {
    if (!(y >= 0.0 && y <= 1.0)) throw DomainError("branch_inverses argument outside [0,1]");
    constexpr double tol = 1e-14;
    std::vector<Preimage> out;
    for (std::size_t j = 0; j < branches_.size(); ++j) {
      const auto& b = branches_[j];
      if (y < b.image_low() - tol || y > b.image_high() + tol) continue;
      const double x = b.inverse(y);
      // the right endpoint of a non-final branch belongs to the next branch
      if (j + 1 < branches_.size() && x >= b.domain_right - tol) continue;
      out.push_back({x, std::abs(b.derivative(x))});
    }
    std::sort(out.begin(), out.end(), [](const Preimage& a, const Preimage& b) { return a.preimage < b.preimage; });
    out.erase(std::unique(out.begin(), out.end(),
                          [&](const Preimage& a, const Preimage& b) { return std::abs(a.preimage - b.preimage) <= tol; }),
              out.end());
    return out;
  }

  double min_expansion() const noexcept {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& b : branches_) m = std::min(m, b.derivative_bound());
    return m;
  }

 private:
  void validate() const {
    if (branches_.empty()) throw ConfigError("map has no branches");
    if (std::abs(branches_.front().domain_left) > 1e-12 || std::abs(branches_.back().domain_right - 1.0) > 1e-12)
      throw ConfigError("branch domains must cover [0,1]");
    for (std::size_t j = 0; j < branches_.size(); ++j) {
      const auto& b = branches_[j];
      if (!(b.domain_right > b.domain_left)) throw ConfigError("branch with empty domain");
      if (j + 1 < branches_.size() && std::abs(b.domain_right - branches_[j + 1].domain_left) > 1e-12)
        throw ConfigError("branch domains must be contiguous and disjoint");
      if (b.is_affine() && !(std::abs(std::get<AffineForm>(b.forward).slope) > 1.0))
        throw ConfigError("affine branch slope must satisfy |a| > 1");
    }
  }

  std::vector<BranchSpec> branches_;
};

/// The β-transformation x ↦ βx mod 1 as a list of affine branches.
inline IntervalMap beta_map(double beta) {
  if (!(beta > 1.0)) throw ConfigError("beta must exceed 1");
  std::vector<BranchSpec> bs;
  const auto count = static_cast<std::size_t>(std::ceil(beta - 1e-15));
  for (std::size_t j = 0; j < count; ++j) {
    const double l = static_cast<double>(j) / beta;
    const double r = std::min(static_cast<double>(j + 1) / beta, 1.0);
    if (r - l < 1e-15) continue;
    bs.push_back({l, r, AffineForm{beta, -static_cast<double>(j)}, 0.0});
  }
  bs.back().domain_right = 1.0;
  return IntervalMap(std::move(bs));
}

enum class FamilyKind { beta_sequence, perturbed_expanding, constant };

inline const char* to_string(FamilyKind k) {
  switch (k) {
    case FamilyKind::beta_sequence: return "beta_sequence";
    case FamilyKind::perturbed_expanding: return "perturbed_expanding";
    case FamilyKind::constant: return "constant";
  }
  return "?";
}

enum class NoisePattern { alternating, positive, negative, explicit_list };

/// ε_k for the additive-noise family: amplitude·k^(−θ) with a sign pattern,
/// or an explicit list (zero past its end).
struct NoiseSchedule {
  double amplitude = 0.0;
  double theta = 1.0;
  NoisePattern pattern = NoisePattern::alternating;
  std::vector<double> values;

  double operator()(std::size_t k) const {
    const double mag = amplitude * std::pow(static_cast<double>(k), -theta);
    switch (pattern) {
      case NoisePattern::alternating: return (k % 2 == 1) ? mag : -mag;
      case NoisePattern::positive: return mag;
      case NoisePattern::negative: return -mag;
      case NoisePattern::explicit_list: return k - 1 < values.size() ? values[k - 1] : 0.0;
    }
    return 0.0;
  }
};

struct FamilyConfig {
  FamilyKind kind = FamilyKind::constant;
  // beta_sequence / constant-beta
  double beta = 2.0;
  double theta = 1.0;
  double c = 0.5;
  // perturbed_expanding / constant-with-branches
  std::vector<BranchSpec> base_branches;
  NoiseSchedule noise;
  std::size_t length_hint = 0;
};

/// An indexed, immutable sequence of interval maps T_1, T_2, ...
class MapFamily {
 public:
  explicit MapFamily(FamilyConfig cfg) : cfg_(std::move(cfg)) { validate(); }

  FamilyKind kind() const noexcept { return cfg_.kind; }
  const FamilyConfig& config() const noexcept { return cfg_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }
  bool uses_branches() const noexcept { return !cfg_.base_branches.empty(); }

  /// β_k = max(β + k^(−θ), 1 + c) for beta sequences, β for constant β maps.
  double beta_k(std::size_t k) const {
    if (cfg_.kind == FamilyKind::beta_sequence)
      return std::max(cfg_.beta + std::pow(static_cast<double>(k), -cfg_.theta), 1.0 + cfg_.c);
    return cfg_.beta;
  }

  double epsilon_k(std::size_t k) const {
    return cfg_.kind == FamilyKind::perturbed_expanding ? cfg_.noise(k) : 0.0;
  }

  /// The k-th map (k ≥ 1).
  IntervalMap map(std::size_t k) const {
    if (k < 1) throw DomainError("map index must be >= 1");
    if (!uses_branches()) return beta_map(beta_k(k));
    auto bs = cfg_.base_branches;
    const double eps = epsilon_k(k);
    for (auto& b : bs) b.shift += eps;
    return IntervalMap(std::move(bs));
  }

  double eval(std::size_t k, double x) const { return map(k)(x); }

  /// FNV-1a over a canonical description; keys operator caches.
  std::uint64_t hash() const {
    std::ostringstream os;
    os.precision(17);
    os << to_string(cfg_.kind) << '|' << cfg_.beta << '|' << cfg_.theta << '|' << cfg_.c;
    for (const auto& b : cfg_.base_branches) {
      os << "|b" << b.domain_left << ',' << b.domain_right << ',' << b.shift;
      if (auto* a = std::get_if<AffineForm>(&b.forward))
        os << ",a" << a->slope << ',' << a->intercept;
      else
        for (double y : std::get<1>(b.forward)->samples()) os << ',' << y;
    }
    os << "|n" << cfg_.noise.amplitude << ',' << cfg_.noise.theta << ',' << static_cast<int>(cfg_.noise.pattern);
    for (double v : cfg_.noise.values) os << ',' << v;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : os.str()) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  void validate() {
    const auto& c = cfg_;
    if (!uses_branches()) {
      if (!(c.beta > 1.0)) throw ConfigError("beta must exceed 1");
      if (c.kind == FamilyKind::perturbed_expanding) throw ConfigError("perturbed_expanding needs base branches");
    }
    if (c.kind == FamilyKind::beta_sequence) {
      if (uses_branches()) throw ConfigError("beta_sequence does not take branches");
      if (!(c.c > 0.0)) throw ConfigError("c must be positive");
      if (c.beta < 1.0 + c.c) throw ConfigError("beta must be at least 1 + c");
      if (c.theta <= 0.5)
        warnings_.push_back("theta <= 1/2: the rate bound assumes theta > 1/2 (" + std::to_string(c.theta) + ")");
    }
    if (uses_branches()) {
      IntervalMap base(c.base_branches);  // validates partition and slopes
      if (base.min_expansion() <= 1.0) throw ConfigError("base map is not uniformly expanding");
    }
    if (c.kind == FamilyKind::perturbed_expanding) {
      const auto& n = c.noise;
      if (n.pattern == NoisePattern::explicit_list) {
        for (std::size_t k = 1; k <= n.values.size(); ++k)
          if (std::abs(n.values[k - 1]) > std::pow(static_cast<double>(k), -n.theta) + 1e-15)
            throw ConfigError("noise value exceeds k^(-theta) at k=" + std::to_string(k));
      } else if (n.amplitude < 0.0 || n.amplitude > 1.0) {
        throw ConfigError("noise amplitude must lie in [0,1]");
      }
      if (n.theta <= 0.5)
        warnings_.push_back("theta <= 1/2: the rate bound assumes theta > 1/2 (" + std::to_string(n.theta) + ")");
      double lo = 0.0, hi = 0.0;
      if (n.pattern == NoisePattern::explicit_list) {
        for (double v : n.values) lo = std::min(lo, v), hi = std::max(hi, v);
      } else {
        if (n.pattern != NoisePattern::negative) hi = n.amplitude;
        if (n.pattern != NoisePattern::positive) lo = -n.amplitude;
      }
      for (const auto& b : c.base_branches) {
        if (!(b.image_low() + lo > 0.0 && b.image_high() + hi < 1.0))
          throw ConfigError("perturbed branch images must stay strictly inside [0,1]");
      }
    }
  }

  FamilyConfig cfg_;
  std::vector<std::string> warnings_;
};

inline MapFamily make_family(FamilyConfig cfg) { return MapFamily(std::move(cfg)); }

inline MapFamily constant_beta_family(double beta) {
  FamilyConfig c;
  c.kind = FamilyKind::constant;
  c.beta = beta;
  return MapFamily(c);
}

inline MapFamily beta_sequence_family(double beta, double theta, double c) {
  FamilyConfig cfg;
  cfg.kind = FamilyKind::beta_sequence;
  cfg.beta = beta;
  cfg.theta = theta;
  cfg.c = c;
  return MapFamily(cfg);
}

inline double eval_map(const MapFamily& family, std::size_t k, double x) { return family.eval(k, x); }

inline std::vector<Preimage> branch_inverses(const MapFamily& family, std::size_t k, double y) {
  return family.map(k).inverses(y);
}

// ---------------------------------------------------------------------------
// Observables

enum class ObservableKind { trig, polynomial, tabulated };

struct TrigTerm {
  double amplitude = 1.0;
  double frequency = 1.0;
  double phase = 0.0;
};

/// A sequence v_k of bounded-variation observables. The base function is
/// scaled per index by 1 + modulation·(k+1)^(−modulation_decay).
class Observable {
 public:
  static Observable trig(std::vector<TrigTerm> terms) {
    Observable o;
    o.kind_ = ObservableKind::trig;
    o.terms_ = std::move(terms);
    return o;
  }
  static Observable cosine(double frequency = 1.0) { return trig({{1.0, frequency, 0.0}}); }
  static Observable polynomial(std::vector<double> coefficients) {
    Observable o;
    o.kind_ = ObservableKind::polynomial;
    o.coeffs_ = std::move(coefficients);
    return o;
  }
  static Observable tabulated(std::vector<double> cell_values) {
    if (cell_values.empty()) throw ConfigError("tabulated observable needs values");
    Observable o;
    o.kind_ = ObservableKind::tabulated;
    o.coeffs_ = std::move(cell_values);
    return o;
  }
  static Observable zero() { return polynomial({0.0}); }

  Observable& with_modulation(double amplitude, double decay) {
    mod_amp_ = amplitude;
    mod_decay_ = decay;
    return *this;
  }

  ObservableKind kind() const noexcept { return kind_; }
  const std::vector<TrigTerm>& terms() const noexcept { return terms_; }
  const std::vector<double>& coefficients() const noexcept { return coeffs_; }
  double modulation_amplitude() const noexcept { return mod_amp_; }
  double modulation_decay() const noexcept { return mod_decay_; }

  double scale(std::size_t k) const noexcept {
    if (mod_amp_ == 0.0) return 1.0;
    return 1.0 + mod_amp_ * std::pow(static_cast<double>(k + 1), -mod_decay_);
  }

  double base(double x) const noexcept {
    switch (kind_) {
      case ObservableKind::trig: {
        double s = 0.0;
        for (const auto& t : terms_) s += t.amplitude * std::cos(2.0 * M_PI * t.frequency * x + t.phase);
        return s;
      }
      case ObservableKind::polynomial: {
        double s = 0.0;
        for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) s = s * x + *it;
        return s;
      }
      case ObservableKind::tabulated: {
        const auto m = coeffs_.size();
        auto i = static_cast<std::size_t>(std::max(0.0, x) * static_cast<double>(m));
        return coeffs_[std::min(i, m - 1)];
      }
    }
    return 0.0;
  }

  double operator()(std::size_t k, double x) const noexcept { return scale(k) * base(x); }

  /// v_k sampled at cell midpoints.
  GridFunction on_grid(std::size_t k, std::size_t n) const {
    const double s = scale(k);
    return GridFunction::sample(n, [&](double x) { return s * base(x); });
  }

  /// Upper bound for sup_k ‖v_k‖_BV (L¹ norm plus total variation).
  double bv_norm_bound() const noexcept {
    double b = 0.0;
    switch (kind_) {
      case ObservableKind::trig:
        for (const auto& t : terms_) b += std::abs(t.amplitude) * (1.0 + 2.0 * M_PI * std::abs(t.frequency));
        break;
      case ObservableKind::polynomial:
        for (std::size_t j = 0; j < coeffs_.size(); ++j) b += std::abs(coeffs_[j]) * (1.0 + static_cast<double>(j));
        break;
      case ObservableKind::tabulated: {
        double tv = 0.0, l1 = 0.0;
        for (std::size_t i = 0; i < coeffs_.size(); ++i) {
          l1 += std::abs(coeffs_[i]);
          if (i + 1 < coeffs_.size()) tv += std::abs(coeffs_[i + 1] - coeffs_[i]);
        }
        b = tv + l1 / static_cast<double>(coeffs_.size());
        break;
      }
    }
    return b * (1.0 + std::abs(mod_amp_));
  }

 private:
  ObservableKind kind_ = ObservableKind::trig;
  std::vector<TrigTerm> terms_;
  std::vector<double> coeffs_;
  double mod_amp_ = 0.0;
  double mod_decay_ = 1.0;
};

}  // namespace seqwip
