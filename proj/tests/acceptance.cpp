// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--allow-fail 7,...] [--threads k]
//
// Exit status is nonzero when a criterion fails that is not listed in
// --allow-fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "seqwip/seqwip.hpp"

using namespace seqwip;
namespace fs = std::filesystem;

namespace {

const std::string kSource = SEQWIP_SOURCE_DIR;
const std::string kCli = SEQWIP_CLI;
unsigned g_threads = 1;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

OperatorChain make_chain(const MapFamily& fam, std::size_t N, std::size_t len) {
  ChainOptions co;
  co.threads = g_threads;
  co.memory_cap_bytes = std::size_t{4} << 30;
  return OperatorChain(fam, N, len, co);
}

DecompositionSet decompose(const OperatorChain& chain, std::size_t n) {
  const auto props = check_properties(chain, std::min<std::size_t>(200, chain.length()));
  DecompositionOptions o;
  o.dec = &props.dec;
  return build_decomposition(chain, Observable::cosine(), n, o);
}

double max_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, x);
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

// Same header lines, same text fields, numbers within 1e-9 relative.
bool csv_matches(const std::string& got, const std::string& want) {
  const auto gl = split(got, '\n'), wl = split(want, '\n');
  if (want.empty() || gl.size() != wl.size()) return false;
  for (std::size_t i = 0; i < gl.size(); ++i) {
    if (i < 2) {
      if (gl[i] != wl[i]) return false;
      continue;
    }
    const auto g = split(gl[i], ','), w = split(wl[i], ',');
    if (g.size() != w.size()) return false;
    for (std::size_t c = 0; c < g.size(); ++c) {
      if (g[c] == w[c]) continue;
      char* end = nullptr;
      const double a = std::strtod(g[c].c_str(), &end), b = std::strtod(w[c].c_str(), nullptr);
      if (*end != '\0' || !(std::abs(a - b) <= 1e-9 * (1.0 + std::abs(b)))) return false;
    }
  }
  return true;
}

// 1. Ulam operator
Outcome operator_correctness() {
  bool ok = true;
  std::string d;
  for (std::size_t N : {std::size_t{256}, std::size_t{4096}}) {
    const auto m = ulam_discretize(constant_beta_family(2.0), 1, N);
    const auto p1 = m.apply(GridFunction(N, 1.0));
    double dev = 0.0;
    for (std::size_t i = 0; i < N; ++i) dev = std::max(dev, std::abs(p1[i] - 1.0));
    const double mass = m.mass_conservation_error();
    ok = ok && mass <= 1e-12 && dev == 0.0;
    d += fmt("doubling N=%zu mass=%.2e |P1-1|=%.1e; ", N, mass, dev);
  }
  for (std::size_t N : {std::size_t{1000}, std::size_t{4096}}) {
    const auto p1 = ulam_discretize(constant_beta_family(1.5), 1, N).apply(GridFunction(N, 1.0));
    double err = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double x = GridFunction::midpoint(i, N);
      err = std::max(err, std::abs(p1[i] - (x < 0.5 ? 4.0 / 3.0 : 2.0 / 3.0)));
    }
    ok = ok && err <= 2.0 / N;
    d += fmt("beta=1.5 N=%zu err=%.2e (<= %.2e); ", N, err, 2.0 / N);
  }
  return {ok, d};
}

// 2. decomposition certificate
Outcome decomposition_certificate() {
  bool ok = true;
  std::string d;
  {
    const auto chain = make_chain(constant_beta_family(2.0), 4096, 1026);
    const auto set = decompose(chain, 1024);
    double hs = 0.0;
    for (std::size_t k = 0; k <= 1024; ++k) hs = std::max(hs, sup_norm(set.h[k]));
    const double mds = max_of(set.mds_residual);
    ok = ok && hs <= 1e-6 && mds <= 1e-6;
    d += fmt("doubling/cos N=4096 n=1024: max|h|=%.2e max MDS=%.2e; ", hs, mds);
  }
  const auto fam = beta_sequence_family(2.0, 1.0, 0.5);
  const std::size_t n = 128;
  std::vector<double> res;
  for (std::size_t N : {std::size_t{1024}, std::size_t{2048}, std::size_t{4096}}) {
    const auto chain = make_chain(fam, N, n + 2);
    res.push_back(max_of(decompose(chain, n).mds_residual));
    d += fmt("beta_k N=%zu MDS=%.2e; ", N, res.back());
  }
  ok = ok && res.back() <= 1e-3 && res[1] < res[0] && res[2] < res[1];
  return {ok, d};
}

// 3 and 4 share the β_k decomposition at n = 4096
struct BetaTables {
  DecompositionSet set;
};

const BetaTables& beta_tables() {
  static const BetaTables t = [] {
    const auto chain = make_chain(beta_sequence_family(2.0, 1.0, 0.5), 2048, 4098);
    return BetaTables{decompose(chain, 4096)};
  }();
  return t;
}

Outcome variance_laws() {
  bool ok = true;
  std::string d;
  const auto chain = make_chain(constant_beta_family(2.0), 2048, 4098);
  const auto ds = decompose(chain, 4096);
  double worst = 0.0;
  for (std::size_t n = 1; n <= 4096; ++n)
    worst = std::max({worst, std::abs(ds.Sigma2[n] - 0.5 * n) / n, std::abs(ds.sigma2[n] - 0.5 * n) / n});
  ok = ok && worst <= 1e-4;
  d += fmt("doubling/cos max |Sigma2-n/2|/n, |sigma2-n/2|/n = %.2e; ", worst);

  for (const auto* set : {&ds, &beta_tables().set}) {
    const char* name = set == &ds ? "doubling" : "beta_k";
    double gap = 0.0;
    for (std::size_t n = 1; n <= set->n; ++n)
      gap = std::max(gap, std::abs(std::sqrt(set->Sigma2[n]) - std::sqrt(set->sigma2[n])));
    const double hb = set->h_bound;
    ok = ok && gap <= 2.0 * hb + 0.01;
    // (Σ² − σ²)/σ = (Σ − σ)(Σ + σ)/σ, so |ratio| ≤ 2‖h‖(2 + 2‖h‖/σ)
    double ratio = 0.0, sig_min = std::sqrt(set->sigma2[16]);
    for (std::size_t n = 16; n <= 4096; n *= 2)
      ratio = std::max(ratio, std::abs(set->Sigma2[n] - set->sigma2[n]) / std::sqrt(set->sigma2[n]));
    const double bound = 2.0 * hb * (2.0 + 2.0 * hb / sig_min) + 0.01;
    ok = ok && ratio <= bound;
    d += fmt("%s: max|Sigma-sigma|=%.3e (<= %.3e), max ratio=%.3e (<= %.3e); ", name, gap, 2.0 * hb + 0.01, ratio,
             bound);
  }
  return {ok, d};
}

Outcome variance_growth_converges() {
  const auto& s = beta_tables().set;
  const double a = s.Sigma2[2048] / 2048.0, b = s.Sigma2[4096] / 4096.0;
  const double rel = std::abs(b - a) / b;
  return {rel <= 0.05, fmt("beta_k Sigma2/n: n=2048 %.6f, n=4096 %.6f, relative change %.2e (<= 0.05)", a, b, rel)};
}

// 5. OT oracle and Brownian marginal
Outcome ot_oracle() {
  RandomStream r(5151);
  std::size_t mism = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + trial % 7;
    std::vector<double> c(k * k);
    for (auto& v : c) v = std::floor(r.uniform() * 100.0);
    if (solve_assignment(c, k).cost != brute_force_assignment(c, k)) ++mism;
  }
  double dev = 0.0;
  for (double p : {1.0, 2.0, 3.0}) {
    PathEnsemble a, b;
    std::vector<double> xa, xb;
    for (int i = 0; i < 64; ++i) {
      xa.push_back(r.normal()), xb.push_back(1.0 + r.normal());
      a.push_back(PolygonalPath{{0.0, 1.0}, {xa.back(), xa.back()}});
      b.push_back(PolygonalPath{{0.0, 0.5, 1.0}, {xb.back(), xb.back(), xb.back()}});
    }
    dev = std::max(dev, std::abs(empirical_wp_paths(a, b, p).value - wp_1d(xa, xb, p)));
  }
  const auto bm = sample_bm(10000, 16, 99, g_threads);
  std::vector<double> b1;
  for (const auto& p : bm) b1.push_back(p.values.back());
  const double ks = kolmogorov_distance(b1), eps = dkw_epsilon(b1.size(), 0.99);
  return {mism == 0 && dev <= 1e-12 && ks <= eps,
          fmt("assignment mismatches %zu/200; constant-path |W-wp_1d| = %.1e; B(1) Kolmogorov %.4f (<= %.4f)", mism, dev,
              ks, eps)};
}

// 6 and 8 share 10^4 doubling orbits at n = 1024
struct DoublingOrbits {
  DecompositionSet set;
  std::vector<Orbit> orbits;
};

const DoublingOrbits& doubling_orbits() {
  static const DoublingOrbits d = [] {
    const auto fam = constant_beta_family(2.0);
    const auto chain = make_chain(fam, 4096, 1026);
    return DoublingOrbits{decompose(chain, 1024), sample_orbits(fam, 10000, 1025, 2024, 0, g_threads)};
  }();
  return d;
}

Outcome clt_marginal() {
  const auto& d = doubling_orbits();
  std::vector<double> x1(d.orbits.size());
  parallel_for(d.orbits.size(), g_threads, [&](std::size_t i) { x1[i] = build_xn(d.orbits[i], d.set, 1024).values.back(); });
  const double ks = kolmogorov_distance(x1);
  return {ks <= 0.02, fmt("Kolmogorov distance of X_n(1), n=1024, 10^4 orbits: %.4f (<= 0.02)", ks)};
}

Outcome quadratic_variation_mean() {
  const auto& d = doubling_orbits();
  std::vector<double> q(d.orbits.size());
  parallel_for(d.orbits.size(), g_threads, [&](std::size_t i) { q[i] = quadratic_variation(d.orbits[i], d.set, 1024)[1024]; });
  const double m = std::accumulate(q.begin(), q.end(), 0.0) / q.size();
  double ss = 0.0;
  for (double v : q) ss += (v - m) * (v - m);
  const double se = std::sqrt(ss / (q.size() - 1) / q.size());
  return {std::abs(m - 1.0) <= 3.0 * se, fmt("mean V_nn = %.5f, SE = %.5f, |mean-1|/SE = %.2f (<= 3)", m, se,
                                             std::abs(m - 1.0) / se)};
}

// 7. rate study on the two shipped configs
Outcome rate_study() {
  bool ok = true;
  std::string d;
  const fs::path out = fs::current_path() / "acceptance_out";
  for (const char* name : {"doubling_cos", "beta_sequence_cos"}) {
    const auto cr = load_config(kSource + "/configs/" + name + ".json");
    if (!cr.ok()) return {false, std::string("config error: ") + cr.errors.front()};
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = run_rate_experiment(cr.config, RunOptions{false, g_threads});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream os;
    write_rate_csv(os, rep, cr.config.p, cr.config.transport.mode);
    write_text(out / (std::string(name) + "_rate.csv"), os.str());
    std::cout << "  " << name << " rate table (" << fmt("%.0f", secs) << " s):\n" << os.str();
    // reference level: W_2 between two independent K-ensembles of Brownian paths on the same grid
    const auto grid = bm_comparison_grid(prepare(cr.config, RunOptions{false, g_threads}, 64).set, 64, 256);
    const double floor_k = empirical_wp_paths(sample_bm(cr.config.ensemble_size, grid, 1, 0),
                                              sample_bm(cr.config.ensemble_size, grid, 2, 0), 2.0)
                               .value;
    const double slope = rep.fit ? rep.fit->slope : std::nan("");
    const bool golden = csv_matches(os.str(), slurp(kSource + "/tests/golden/" + name + "_rate.csv"));
    ok = ok && rep.pass && golden;
    d += fmt("%s: slope %.3f +- %.3f (band [%.2f, %.2f]), violations %zu, BM-vs-BM W_2 at K %.3f, golden %s; ", name,
             slope, rep.fit ? rep.fit->stderr_ : 0.0, rep.slope_low, rep.slope_high, rep.violations, floor_k,
             golden ? "match" : "MISMATCH");
  }
  return {ok, d};
}

// 9. CLI determinism
Outcome determinism() {
  const fs::path base = fs::current_path() / "acceptance_det";
  std::string first_rate, first_runs;
  bool ok = true;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = base / std::to_string(run);
    fs::remove_all(dir);
    const std::string cmd = "\"" + kCli + "\" --config \"" + kSource + "/configs/smoke.json\" --out \"" + dir.string() +
                            "\" rate > \"" + (base / "log.txt").string() + "\" 2>&1";
    fs::create_directories(base);
    // exit status reflects the slope band, which the small smoke study may miss; only outputs are compared
    [[maybe_unused]] const int rc = std::system(cmd.c_str());
    const auto a = slurp(dir / "rate.csv"), b = slurp(dir / "wasserstein.csv");
    if (a.empty() || b.empty()) return {false, "rate outputs missing in " + dir.string()};
    if (run == 0) first_rate = a, first_runs = b;
    else ok = a == first_rate && b == first_runs;
  }
  return {ok, fmt("rate.csv %zu bytes, wasserstein.csv %zu bytes, identical: %s", first_rate.size(), first_runs.size(),
                  ok ? "yes" : "no")};
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.insert(std::stoi(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, allow;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string a = argv[i];
    if (a == "--only") only = parse_list(argv[i + 1]);
    else if (a == "--allow-fail") allow = parse_list(argv[i + 1]);
    else if (a == "--threads") g_threads = static_cast<unsigned>(std::max(1, std::atoi(argv[i + 1])));
    else {
      std::cerr << "unknown argument " << a << '\n';
      return 2;
    }
  }
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, operator_correctness}, {2, decomposition_certificate}, {3, variance_laws},
      {4, variance_growth_converges},      {5, ot_oracle},                 {6, clt_marginal},
      {7, rate_study},           {8, quadratic_variation_mean},  {9, determinism}};
  int hard_failures = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  (" << fmt("%.1f s", secs) << ") "
              << o.detail << (o.pass || !allow.count(id) ? "" : " [failure allowed]") << std::endl;
    if (!o.pass && !allow.count(id)) ++hard_failures;
  }
  return hard_failures == 0 ? 0 : 1;
}
