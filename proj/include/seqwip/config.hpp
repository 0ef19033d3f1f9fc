#pragma once

// JSON experiment configuration. Parsing collects every problem it finds
// instead of stopping at the first one.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "maps.hpp"
#include "process.hpp"
#include "wasserstein.hpp"

namespace seqwip {

using json = nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;

struct Tolerances {
  double h_tol = 1e-14;          // drop a pushed h-term below this sup-norm
  double mds = 1e-6;             // reverse-MDS residual bound checked by verify
  double mass = 1e-12;           // Ulam column-sum deviation
  double recursion = 1e-10;      // truncated h vs recursion
};

struct ExperimentConfig {
  FamilyConfig family;
  Observable observable = Observable::cosine();
  std::size_t grid = 1024;
  std::vector<std::size_t> horizons{64, 128, 256, 512, 1024};
  std::size_t ensemble_size = 512;
  double p = 2.0;
  TransportOptions transport;
  Tolerances tolerances;
  PathConvention convention = PathConvention::standard;
  std::size_t replicates = 4;       // independent K-ensembles for the CI
  bool double_ensemble = true;      // also run at 2K and report the gap
  double slope_low = -0.75, slope_high = -0.25;
  std::size_t bm_min_points = 256;
  std::size_t dec_steps = 200;
  std::size_t memory_cap_mb = 1024;
  std::size_t verify_orbits = 2000;
  bool record_runtime = false;
  std::uint64_t seed = 1;
  std::string output = "out";

  std::size_t max_horizon() const { return horizons.empty() ? 0 : horizons.back(); }
};

struct ConfigResult {
  ExperimentConfig config;
  std::vector<std::string> errors;
  bool ok() const noexcept { return errors.empty(); }
};

namespace detail {

template <class T>
void read_field(const json& obj, const char* key, T& out, const std::string& where, std::vector<std::string>& errs) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const std::exception&) {
    errs.push_back(where + "." + key + ": wrong type");
  }
}

inline void require_section(const json& j, const char* key, std::vector<std::string>& errs) {
  if (!j.contains(key)) errs.push_back(std::string("missing section '") + key + "'");
  else if (j[key].is_object() && j[key].empty()) errs.push_back(std::string("section '") + key + "' is empty");
}

inline std::vector<BranchSpec> parse_branches(const json& arr, std::vector<std::string>& errs) {
  std::vector<BranchSpec> bs;
  if (!arr.is_array()) {
    errs.push_back("family.branches: expected an array");
    return bs;
  }
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& b = arr[i];
    const std::string where = "family.branches[" + std::to_string(i) + "]";
    BranchSpec s{0.0, 1.0, AffineForm{2.0, 0.0}, 0.0};
    read_field(b, "left", s.domain_left, where, errs);
    read_field(b, "right", s.domain_right, where, errs);
    read_field(b, "shift", s.shift, where, errs);
    if (b.contains("samples")) {
      std::vector<double> ys;
      read_field(b, "samples", ys, where, errs);
      try {
        s.forward = std::make_shared<const TabulatedForm>(s.domain_left, s.domain_right, ys);
      } catch (const std::exception& e) {
        errs.push_back(where + ": " + e.what());
      }
    } else {
      AffineForm a{2.0, 0.0};
      read_field(b, "slope", a.slope, where, errs);
      read_field(b, "intercept", a.intercept, where, errs);
      s.forward = a;
    }
    bs.push_back(std::move(s));
  }
  return bs;
}

inline FamilyConfig parse_family(const json& f, std::vector<std::string>& errs) {
  FamilyConfig c;
  std::string kind = "constant";
  read_field(f, "kind", kind, "family", errs);
  if (kind == "beta_sequence") c.kind = FamilyKind::beta_sequence;
  else if (kind == "perturbed_expanding") c.kind = FamilyKind::perturbed_expanding;
  else if (kind == "constant") c.kind = FamilyKind::constant;
  else errs.push_back("family.kind: unknown kind '" + kind + "'");
  read_field(f, "beta", c.beta, "family", errs);
  read_field(f, "theta", c.theta, "family", errs);
  read_field(f, "c", c.c, "family", errs);
  read_field(f, "length_hint", c.length_hint, "family", errs);
  if (f.contains("branches")) c.base_branches = parse_branches(f["branches"], errs);
  if (f.contains("noise")) {
    const auto& n = f["noise"];
    read_field(n, "amplitude", c.noise.amplitude, "family.noise", errs);
    read_field(n, "theta", c.noise.theta, "family.noise", errs);
    std::string pat = "alternating";
    read_field(n, "pattern", pat, "family.noise", errs);
    if (pat == "alternating") c.noise.pattern = NoisePattern::alternating;
    else if (pat == "positive") c.noise.pattern = NoisePattern::positive;
    else if (pat == "negative") c.noise.pattern = NoisePattern::negative;
    else if (pat == "explicit") c.noise.pattern = NoisePattern::explicit_list;
    else errs.push_back("family.noise.pattern: unknown pattern '" + pat + "'");
    read_field(n, "values", c.noise.values, "family.noise", errs);
  }
  return c;
}

inline Observable parse_observable(const json& o, std::vector<std::string>& errs) {
  std::string kind = "trig";
  read_field(o, "kind", kind, "observable", errs);
  Observable out = Observable::cosine();
  if (kind == "trig") {
    std::vector<TrigTerm> terms;
    if (o.contains("terms") && o["terms"].is_array()) {
      for (const auto& t : o["terms"]) {
        TrigTerm tt;
        read_field(t, "amplitude", tt.amplitude, "observable.terms", errs);
        read_field(t, "frequency", tt.frequency, "observable.terms", errs);
        read_field(t, "phase", tt.phase, "observable.terms", errs);
        terms.push_back(tt);
      }
    } else {
      errs.push_back("observable.terms: expected an array for kind 'trig'");
    }
    out = Observable::trig(std::move(terms));
  } else if (kind == "polynomial") {
    std::vector<double> cs;
    read_field(o, "coefficients", cs, "observable", errs);
    if (cs.empty()) errs.push_back("observable.coefficients: empty");
    else out = Observable::polynomial(std::move(cs));
  } else if (kind == "tabulated") {
    std::vector<double> vs;
    read_field(o, "values", vs, "observable", errs);
    if (vs.empty()) errs.push_back("observable.values: empty");
    else out = Observable::tabulated(std::move(vs));
  } else {
    errs.push_back("observable.kind: unknown kind '" + kind + "'");
  }
  if (o.contains("modulation")) {
    double a = 0.0, d = 1.0;
    read_field(o["modulation"], "amplitude", a, "observable.modulation", errs);
    read_field(o["modulation"], "decay", d, "observable.modulation", errs);
    out.with_modulation(a, d);
  }
  return out;
}

}  // namespace detail

/// Parses and validates; on any error `errors` is non-empty and the config
/// must not be run.
inline ConfigResult parse_config(const json& j) {
  ConfigResult r;
  auto& c = r.config;
  auto& errs = r.errors;
  if (!j.is_object()) {
    errs.push_back("config root must be an object");
    return r;
  }
  int version = kConfigSchemaVersion;
  detail::read_field(j, "schema_version", version, "config", errs);
  if (version != kConfigSchemaVersion) errs.push_back("schema_version " + std::to_string(version) + " unsupported");

  detail::require_section(j, "family", errs);
  detail::require_section(j, "observable", errs);
  if (j.contains("family") && j["family"].is_object() && !j["family"].empty())
    c.family = detail::parse_family(j["family"], errs);
  if (j.contains("observable") && j["observable"].is_object() && !j["observable"].empty())
    c.observable = detail::parse_observable(j["observable"], errs);

  detail::read_field(j, "grid", c.grid, "config", errs);
  detail::read_field(j, "horizons", c.horizons, "config", errs);
  detail::read_field(j, "ensemble_size", c.ensemble_size, "config", errs);
  detail::read_field(j, "p", c.p, "config", errs);
  detail::read_field(j, "replicates", c.replicates, "config", errs);
  detail::read_field(j, "double_ensemble", c.double_ensemble, "config", errs);
  detail::read_field(j, "bm_min_points", c.bm_min_points, "config", errs);
  detail::read_field(j, "dec_steps", c.dec_steps, "config", errs);
  detail::read_field(j, "memory_cap_mb", c.memory_cap_mb, "config", errs);
  detail::read_field(j, "verify_orbits", c.verify_orbits, "config", errs);
  detail::read_field(j, "record_runtime", c.record_runtime, "config", errs);
  detail::read_field(j, "seed", c.seed, "config", errs);
  detail::read_field(j, "output", c.output, "config", errs);
  if (j.contains("slope_band")) {
    std::vector<double> band;
    detail::read_field(j, "slope_band", band, "config", errs);
    if (band.size() == 2) c.slope_low = band[0], c.slope_high = band[1];
    else errs.push_back("slope_band: expected [low, high]");
  }
  std::string conv = "standard";
  detail::read_field(j, "convention", conv, "config", errs);
  if (conv == "verbatim") c.convention = PathConvention::verbatim;
  else if (conv != "standard") errs.push_back("convention: expected 'standard' or 'verbatim'");

  if (j.contains("transport")) {
    const auto& t = j["transport"];
    std::string mode = "exact";
    detail::read_field(t, "mode", mode, "transport", errs);
    if (mode == "entropic") c.transport.mode = TransportMode::entropic;
    else if (mode != "exact") errs.push_back("transport.mode: expected 'exact' or 'entropic'");
    detail::read_field(t, "exact_cap", c.transport.exact_cap, "transport", errs);
    detail::read_field(t, "epsilon", c.transport.entropic.epsilon, "transport", errs);
    detail::read_field(t, "max_iterations", c.transport.entropic.max_iterations, "transport", errs);
    detail::read_field(t, "tolerance", c.transport.entropic.tolerance, "transport", errs);
  }
  if (j.contains("tolerances")) {
    const auto& t = j["tolerances"];
    detail::read_field(t, "h_tol", c.tolerances.h_tol, "tolerances", errs);
    detail::read_field(t, "mds", c.tolerances.mds, "tolerances", errs);
    detail::read_field(t, "mass", c.tolerances.mass, "tolerances", errs);
    detail::read_field(t, "recursion", c.tolerances.recursion, "tolerances", errs);
  }

  // invariants
  if (c.ensemble_size < 32) errs.push_back("ensemble_size must be >= 32");
  if (c.grid < 2) errs.push_back("grid must be >= 2");
  if (c.horizons.empty()) errs.push_back("horizons must be non-empty");
  for (std::size_t i = 0; i < c.horizons.size(); ++i) {
    if (c.horizons[i] == 0) errs.push_back("horizons must be positive");
    if (i > 0 && c.horizons[i] <= c.horizons[i - 1]) errs.push_back("horizons must be strictly increasing");
  }
  if (!(c.p >= 1.0)) errs.push_back("p must be >= 1");
  if (c.replicates < 1) errs.push_back("replicates must be >= 1");
  if (!(c.slope_low < c.slope_high)) errs.push_back("slope_band must satisfy low < high");
  for (double t : {c.tolerances.h_tol, c.tolerances.mds, c.tolerances.mass, c.tolerances.recursion,
                   c.transport.entropic.epsilon, c.transport.entropic.tolerance})
    if (!(t > 0.0)) {
      errs.push_back("all tolerances must be > 0");
      break;
    }
  if (errs.empty()) {
    try {
      MapFamily check(c.family);
    } catch (const std::exception& e) {
      errs.push_back(std::string("family: ") + e.what());
    }
  }
  return r;
}

inline ConfigResult parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    ConfigResult r;
    r.errors.push_back(std::string("JSON parse error: ") + e.what());
    return r;
  }
  return parse_config(j);
}

inline ConfigResult load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    ConfigResult r;
    r.errors.push_back("cannot open config file " + path);
    return r;
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace seqwip
