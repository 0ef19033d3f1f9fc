// Command-line front end: build-operators, decompose, simulate, wasserstein,
// rate, verify.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "seqwip/seqwip.hpp"

namespace fs = std::filesystem;
using namespace seqwip;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned threads = 1;
  bool force = false;
};

ConfigResult load(const Globals& g) {
  if (g.config.empty()) {
    ConfigResult r;
    r.errors.push_back("--config is required");
    return r;
  }
  auto r = load_config(g.config);
  if (g.seed) r.config.seed = *g.seed;
  if (!g.out.empty()) r.config.output = g.out;
  return r;
}

ExperimentConfig require(const ConfigResult& r) {
  if (!r.ok()) throw InvalidConfig(r.errors);
  return r.config;
}

RunOptions run_options(const Globals& g) { return {g.force, std::max(1u, g.threads)}; }

template <class F>
std::string render(F&& f) {
  std::ostringstream os;
  f(os);
  return os.str();
}

void warn_all(const std::vector<std::string>& ws) {
  for (const auto& w : ws) std::cerr << "warning: " << w << '\n';
}

int cmd_build_operators(const Globals& g, std::size_t cache_count) {
  const auto cfg = require(load(g));
  const auto run = run_options(g);
  const MapFamily family(cfg.family);
  warn_all(family.warnings());
  ChainOptions co;
  co.memory_cap_bytes = cfg.memory_cap_mb << 20;
  co.threads = run.threads;
  const OperatorChain chain(family, cfg.grid, cfg.max_horizon() + 2, co);
  const auto props = check_properties(chain, std::min(cfg.dec_steps, chain.length()));
  double mass = 0.0;
  for (std::size_t k = 1; k <= chain.length(); ++k) mass = std::max(mass, chain.matrix(k)->mass_conservation_error());
  json j = to_json(props);
  j["mass_conservation_error"] = mass;
  j["family_hash"] = family.hash();
  const fs::path out(cfg.output);
  write_text(out / "properties.json", j.dump(2) + "\n");
  for (std::size_t k = 1; k <= std::min(cache_count, chain.length()); ++k)
    write_ulam_cache((out / ("ulam_" + std::to_string(k) + ".bin")).string(), *chain.matrix(k), family.hash());
  std::cout << j.dump(2) << '\n';
  return props.min_sup.min_ok && props.dec.ok ? 0 : 2;
}

int cmd_decompose(const Globals& g) {
  const auto cfg = require(load(g));
  const auto prep = prepare(cfg, run_options(g));
  warn_all(prep.warnings);
  const fs::path out(cfg.output);
  write_text(out / "decomposition.csv", render([&](std::ostream& os) { write_decomposition_csv(os, prep.set); }));
  json j = decomposition_summary(prep.set);
  j["properties"] = to_json(prep.properties);
  write_text(out / "decomposition.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_simulate(const Globals& g, bool csv) {
  const auto cfg = require(load(g));
  const auto run = run_options(g);
  const auto prep = prepare(cfg, run);
  warn_all(prep.warnings);
  const fs::path out(cfg.output);
  fs::create_directories(out);
  const auto orbits = sample_orbits(prep.family, cfg.ensemble_size, cfg.max_horizon() + 1, cfg.seed, 0, run.threads);
  for (auto n : cfg.horizons) {
    const auto e = wn_ensemble(orbits, prep.set, n, cfg.convention, run.threads);
    const auto base = out / ("wn_" + std::to_string(n));
    write_ensemble(base.string() + ".bin", e);
    if (csv) write_text(base.string() + ".csv", render([&](std::ostream& os) { write_ensemble_csv(os, e); }));
  }
  const auto grid = bm_comparison_grid(prep.set, cfg.max_horizon(), cfg.bm_min_points);
  const auto bm = sample_bm(cfg.ensemble_size, grid, cfg.seed, 0, run.threads);
  write_ensemble((out / "bm.bin").string(), bm);
  if (csv) write_text(out / "bm.csv", render([&](std::ostream& os) { write_ensemble_csv(os, bm); }));
  std::cout << "wrote " << cfg.horizons.size() << " W_n ensembles and one Brownian ensemble of size "
            << cfg.ensemble_size << " to " << out << '\n';
  return 0;
}

int cmd_wasserstein(const Globals& g, const std::string& a, const std::string& b, double p, bool entropic,
                    double epsilon) {
  TransportOptions opt;
  if (!g.config.empty()) opt = require(load(g)).transport;
  if (entropic) opt.mode = TransportMode::entropic;
  if (epsilon > 0.0) opt.entropic.epsilon = epsilon;
  opt.threads = std::max(1u, g.threads);
  const auto A = read_ensemble(a), B = read_ensemble(b);
  const auto r = empirical_wp_paths(A, B, p, opt);
  json j{{"a", a},
         {"b", b},
         {"K", A.size()},
         {"p", p},
         {"mode", to_string(r.mode)},
         {"solver", r.solver},
         {"value", r.value},
         {"levy_prokhorov_bound", levy_prokhorov_bound(r.value, p)}};
  if (r.mode == TransportMode::entropic) j["marginal_error"] = r.marginal_error, j["epsilon"] = r.epsilon;
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_rate(const Globals& g) {
  const auto cfg = require(load(g));
  const auto run = run_options(g);
  const auto rep = run_rate_experiment(cfg, run);
  warn_all(rep.warnings);
  const fs::path out(cfg.output);
  write_text(out / "rate.csv", render([&](std::ostream& os) { write_rate_csv(os, rep, cfg.p, cfg.transport.mode); }));
  write_text(out / "wasserstein.csv", render([&](std::ostream& os) { write_wasserstein_csv(os, rep.runs); }));
  write_text(out / "rate_fit.json", to_json(rep).dump(2) + "\n");
  write_rate_csv(std::cout, rep, cfg.p, cfg.transport.mode);
  if (rep.fit)
    std::cout << "slope " << rep.fit->slope << " +/- " << rep.fit->stderr_ << " band [" << cfg.slope_low << ", "
              << cfg.slope_high << "] monotone violations " << rep.violations << '\n';
  std::cout << (rep.pass ? "rate study: PASS" : "rate study: FAIL") << '\n';
  return rep.pass ? 0 : 1;
}

int cmd_verify(const Globals& g) {
  const auto cr = load(g);
  const auto rep = verify_suite(cr, run_options(g));
  const auto j = to_json(rep);
  if (!cr.config.output.empty() && cr.ok()) write_text(fs::path(cr.config.output) / "verify.json", j.dump(2) + "\n");
  for (const auto& e : rep.config_errors) std::cerr << "config error: " << e << '\n';
  for (const auto& e : rep.entries)
    std::cout << (e.pass ? "pass  " : "FAIL  ") << e.id << "  measured=" << e.measured << "  threshold=" << e.threshold
              << (e.note.empty() ? "" : "  (" + e.note + ")") << '\n';
  std::cout << (rep.pass() ? "verify: PASS" : "verify: FAIL") << '\n';
  return rep.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential-dynamics invariance principle: operators, decompositions and Wasserstein rates"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "experiment config (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--out", g.out, "output directory (overrides the config)");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "run even when the MIN/DEC checks fail");

  std::size_t cache_count = 0;
  auto* build = app.add_subcommand("build-operators", "assemble Ulam matrices and check MIN/SUP/DEC");
  build->add_option("--cache", cache_count, "write binary caches for the first k operators");
  auto* decompose = app.add_subcommand("decompose", "martingale-coboundary tables and variances");
  bool csv = false;
  auto* simulate = app.add_subcommand("simulate", "sample W_n and Brownian ensembles");
  simulate->add_flag("--csv", csv, "also write long-format CSV ensembles");
  std::string a, b;
  double p = 2.0, eps = 0.0;
  bool entropic = false;
  auto* wass = app.add_subcommand("wasserstein", "empirical W_p between two stored ensembles");
  wass->add_option("--a", a, "first ensemble (.bin)")->required();
  wass->add_option("--b", b, "second ensemble (.bin)")->required();
  wass->add_option("--p", p, "order p >= 1");
  wass->add_flag("--entropic", entropic, "use Sinkhorn instead of exact assignment");
  wass->add_option("--epsilon", eps, "entropic regularization relative to the mean cost");
  auto* rate = app.add_subcommand("rate", "rate study of W_p(W_n, B) against Sigma_n");
  auto* verify = app.add_subcommand("verify", "run every invariant and write a JSON report");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;

  try {
    if (*build) return cmd_build_operators(g, cache_count);
    if (*decompose) return cmd_decompose(g);
    if (*simulate) return cmd_simulate(g, csv);
    if (*wass) return cmd_wasserstein(g, a, b, p, entropic, eps);
    if (*rate) return cmd_rate(g);
    if (*verify) return cmd_verify(g);
  } catch (const InvalidConfig& e) {
    std::cerr << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
