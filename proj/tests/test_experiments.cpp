#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "seqwip/experiments.hpp"

using namespace seqwip;

namespace {

const std::string kSource = SEQWIP_SOURCE_DIR;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
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

json minimal_config() {
  return json::parse(R"({
    "schema_version": 1,
    "family": {"kind": "constant", "beta": 2.0},
    "observable": {"kind": "trig", "terms": [{"amplitude": 1.0, "frequency": 1.0, "phase": 0.0}]},
    "grid": 128,
    "horizons": [8, 16, 32, 64],
    "ensemble_size": 32,
    "replicates": 2,
    "verify_orbits": 200,
    "seed": 5
  })");
}

std::string rate_csv(const ExperimentConfig& cfg) {
  const auto rep = run_rate_experiment(cfg, RunOptions{false, 2});
  std::ostringstream os;
  write_rate_csv(os, rep, cfg.p, cfg.transport.mode);
  return os.str();
}

bool has_error(const ConfigResult& r, const std::string& needle) {
  for (const auto& e : r.errors)
    if (e.find(needle) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST(Config, MinimalConfigParses) {
  const auto r = parse_config(minimal_config());
  ASSERT_TRUE(r.ok()) << r.errors.front();
  EXPECT_EQ(r.config.grid, 128u);
  EXPECT_EQ(r.config.max_horizon(), 64u);
  EXPECT_EQ(r.config.transport.mode, TransportMode::exact);
}

TEST(Config, RejectsZeroEnsemble) {
  auto j = minimal_config();
  j["ensemble_size"] = 0;
  const auto r = parse_config(j);
  EXPECT_FALSE(r.ok());
  EXPECT_TRUE(has_error(r, "ensemble_size"));
  EXPECT_THROW(prepare(r, RunOptions{}), InvalidConfig);
}

TEST(Config, RejectsUnorderedHorizonsAndBadTolerances) {
  auto j = minimal_config();
  j["horizons"] = {16, 16, 32};
  j["tolerances"] = {{"mds", 0.0}};
  const auto r = parse_config(j);
  EXPECT_TRUE(has_error(r, "strictly increasing"));
  EXPECT_TRUE(has_error(r, "tolerances"));
}

TEST(Config, BadFileListsEveryProblem) {
  const auto r = load_config(kSource + "/tests/data/bad_config.json");
  EXPECT_TRUE(has_error(r, "family"));
  EXPECT_TRUE(has_error(r, "observable"));
  EXPECT_TRUE(has_error(r, "ensemble_size"));
  EXPECT_TRUE(has_error(r, "horizons"));
  EXPECT_FALSE(load_config(kSource + "/no/such/file.json").ok());
  EXPECT_FALSE(parse_config_text("{not json").ok());
}

TEST(Config, ShippedConfigsParse) {
  for (const auto& e : std::filesystem::directory_iterator(kSource + "/configs")) {
    const auto r = load_config(e.path().string());
    EXPECT_TRUE(r.ok()) << e.path() << ": " << (r.ok() ? "" : r.errors.front());
  }
}

TEST(FitRate, ExactPowerLaw) {
  std::vector<double> s{1, 2, 4, 8, 16, 32}, w, c(6, 0.7), w3;
  for (double x : s) w.push_back(1.0 / std::sqrt(x)), w3.push_back(3.0 * std::pow(x, -0.4));
  EXPECT_NEAR(fit_rate(s, w).slope, -0.5, 1e-12);
  EXPECT_NEAR(fit_rate(s, w).stderr_, 0.0, 1e-12);
  EXPECT_NEAR(fit_rate(s, c).slope, 0.0, 1e-15);
  const auto f = fit_rate(s, w3);
  EXPECT_NEAR(f.slope, -0.4, 1e-12);
  EXPECT_NEAR(std::exp(f.intercept), 3.0, 1e-12);
}

TEST(FitRate, NonpositiveRowsExcluded) {
  std::vector<double> s{1, 2, 4, 8, 16}, w{1.0, 0.0, 0.5, std::sqrt(0.125), 0.25};
  const auto f = fit_rate(s, w);
  EXPECT_EQ(f.used, 4u);
  EXPECT_EQ(f.warnings.size(), 1u);
  EXPECT_NEAR(f.slope, -0.5, 1e-12);
  EXPECT_THROW(fit_rate(std::vector<double>{1, 2, 4}, std::vector<double>{1, 1, 1}), std::invalid_argument);
  EXPECT_THROW(fit_rate(std::vector<double>{1, 2, 4, 8}, std::vector<double>{1, -1, 1, 1}), std::invalid_argument);
}

TEST(Monotone, CountsRisesBeyondCi) {
  std::vector<RateRow> rows(4);
  const double wp[] = {1.0, 0.8, 0.85, 0.6};
  for (std::size_t i = 0; i < 4; ++i) rows[i].wp = wp[i], rows[i].ci_half = 0.02;
  EXPECT_EQ(monotone_violations(rows), 1u);
  rows[2].ci_half = 0.1;
  EXPECT_EQ(monotone_violations(rows), 0u);
}

TEST(Rate, BmGridContainsWnVertices) {
  const auto cfg = parse_config(minimal_config()).config;
  const auto prep = prepare(cfg, RunOptions{});
  const auto t = bm_comparison_grid(prep.set, 64, 256);
  EXPECT_GE(t.size(), 256u);
  EXPECT_EQ(t.front(), 0.0);
  EXPECT_EQ(t.back(), 1.0);
  for (std::size_t k = 0; k <= 64; ++k) {
    const double s = prep.set.Sigma2[k] / prep.set.Sigma2[64];
    EXPECT_TRUE(std::binary_search(t.begin(), t.end(), s) || std::abs(s - 1.0) < 1e-15) << k;
  }
}

TEST(Rate, DeterministicAndThreadIndependent) {
  const auto cfg = parse_config(minimal_config()).config;
  const auto a = rate_csv(cfg);
  EXPECT_EQ(a, rate_csv(cfg));
  const auto rep = run_rate_experiment(cfg, RunOptions{false, 1});
  std::ostringstream os;
  write_rate_csv(os, rep, cfg.p, cfg.transport.mode);
  EXPECT_EQ(a, os.str());
}

TEST(Rate, ReportShape) {
  const auto cfg = parse_config(minimal_config()).config;
  const auto rep = run_rate_experiment(cfg, RunOptions{false, 2});
  ASSERT_EQ(rep.rows.size(), 4u);
  ASSERT_TRUE(rep.fit.has_value());
  EXPECT_EQ(rep.runs.size(), 4u * 3u);
  for (const auto& r : rep.rows) {
    EXPECT_NEAR(r.Sigma_n * r.Sigma_n, 0.5 * static_cast<double>(r.n), 1e-6 * static_cast<double>(r.n));
    EXPECT_GT(r.wp, 0.0);
    EXPECT_EQ(r.replicate_values.size(), 2u);
    EXPECT_DOUBLE_EQ(r.lp_bound, levy_prokhorov_bound(r.wp, 2.0));
    EXPECT_NEAR(r.bias_gap, r.wp - r.wp_2k, 1e-15);
  }
  for (const auto& w : rep.runs) EXPECT_EQ(w.runtime_ms, 0.0);
}

TEST(Rate, FewHorizonsSkipFit) {
  auto j = minimal_config();
  j["horizons"] = {16, 32};
  const auto rep = run_rate_experiment(parse_config(j).config, RunOptions{});
  EXPECT_FALSE(rep.fit.has_value());
  EXPECT_FALSE(rep.pass);
}

TEST(Rate, ExactCapEnforced) {
  auto j = minimal_config();
  j["transport"] = {{"mode", "exact"}, {"exact_cap", 40}};
  EXPECT_THROW(run_rate_experiment(parse_config(j).config, RunOptions{}), ExactCapExceeded);
}

TEST(Rate, PropertyFailureNeedsForce) {
  // both branches map onto [0.05, 0.95], so the density vanishes near the ends
  auto j = minimal_config();
  j["family"] = json::parse(R"({"kind": "perturbed_expanding", "branches": [
    {"left": 0.0, "right": 0.5, "slope": 1.8, "intercept": 0.05},
    {"left": 0.5, "right": 1.0, "slope": 1.8, "intercept": -0.85}]})");
  const auto cfg = parse_config(j);
  ASSERT_TRUE(cfg.ok()) << cfg.errors.front();
  try {
    prepare(cfg.config, RunOptions{});
    ADD_FAILURE() << "expected PropertyCheckFailed";
  } catch (const PropertyCheckFailed& e) {
    EXPECT_NE(std::string(e.what()).find("--force"), std::string::npos);
  }
  // forcing gets past the check; the decomposition then hits the zero density itself
  EXPECT_THROW(prepare(cfg.config, RunOptions{true, 1}), MinFailure);
}

TEST(Rate, GoldenSmokeTable) {
  const auto cr = load_config(kSource + "/configs/smoke.json");
  ASSERT_TRUE(cr.ok());
  const auto got = rate_csv(cr.config);
  const std::string golden_path = kSource + "/tests/golden/smoke_rate.csv";
  if (std::getenv("SEQWIP_UPDATE_GOLDEN")) write_text(golden_path, got);
  const auto want = slurp(golden_path);
  ASSERT_FALSE(want.empty()) << "missing " << golden_path;
  const auto gl = split(got, '\n'), wl = split(want, '\n');
  ASSERT_EQ(gl.size(), wl.size());
  EXPECT_EQ(gl[0], wl[0]);
  EXPECT_EQ(gl[1], wl[1]);
  for (std::size_t i = 2; i < gl.size(); ++i) {
    const auto g = split(gl[i], ','), w = split(wl[i], ',');
    ASSERT_EQ(g.size(), w.size());
    for (std::size_t c = 0; c < g.size(); ++c) {
      if (c == 5 || w[c] == "nan") {
        EXPECT_EQ(g[c], w[c]);
        continue;
      }
      const double a = std::stod(g[c]), b = std::stod(w[c]);
      EXPECT_NEAR(a, b, 1e-9 * (1.0 + std::abs(b))) << "row " << i << " col " << c;
    }
  }
}

TEST(Csv, SchemaHeaders) {
  std::ostringstream r, w, d;
  write_rate_csv(r, RateReport{}, 2.0, TransportMode::exact);
  EXPECT_EQ(r.str(), "# seqwip rate table, schema 1\n"
                     "n,Sigma_n,sigma_n,K,p,mode,W_p,LP_bound,CI_half_width,W_p_2K,bias_gap_2K\n");
  write_wasserstein_csv(w, {});
  EXPECT_EQ(split(w.str(), '\n')[1], "n,Sigma_n,K,p,mode,value,runtime_ms,seed,replicate");
  EXPECT_EQ(fmt_double(std::nan("")), "nan");
  EXPECT_EQ(fmt_double(0.1), "0.10000000000000001");
}

TEST(Verify, CorruptedOperatorFails) {
  auto m = ulam_discretize(constant_beta_family(2.0), 1, 16);
  VerifyReport clean;
  verify_operator(clean, m, 1e-12);
  clean.ran = true;
  EXPECT_TRUE(clean.pass());

  auto d = m.dense();
  d[3 * 16 + 5] = -0.25;
  VerifyReport bad;
  bad.ran = true;
  verify_operator(bad, UlamMatrix::from_dense(16, 1, d), 1e-12);
  EXPECT_FALSE(bad.pass());
  std::size_t failed = 0;
  for (const auto& e : bad.entries) failed += e.pass ? 0 : 1;
  EXPECT_EQ(failed, 2u);
}

TEST(Verify, EmptySectionsReportedWithoutRunning) {
  const auto rep = verify_suite(load_config(kSource + "/tests/data/bad_config.json"), RunOptions{});
  EXPECT_FALSE(rep.ran);
  EXPECT_FALSE(rep.pass());
  EXPECT_TRUE(rep.entries.empty());
  EXPECT_GE(rep.config_errors.size(), 3u);
  EXPECT_EQ(to_json(rep)["pass"], false);
}

TEST(Verify, SmokeSuitePasses) {
  const auto rep = verify_suite(load_config(kSource + "/configs/smoke.json"), RunOptions{false, 4});
  ASSERT_TRUE(rep.ran);
  for (const auto& e : rep.entries) EXPECT_TRUE(e.pass) << e.id << " measured " << e.measured << " threshold " << e.threshold;
  EXPECT_TRUE(rep.pass());
}
