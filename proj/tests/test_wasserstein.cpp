#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "seqwip/brownian.hpp"
#include "seqwip/wasserstein.hpp"

using namespace seqwip;

namespace {

double brute_force(const std::vector<double>& c, std::size_t k) {
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += c[i * k + perm[i]];
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

PathEnsemble constant_paths(const std::vector<double>& levels) {
  PathEnsemble e;
  for (double v : levels) e.push_back(PolygonalPath{{0.0, 0.5, 1.0}, {v, v, v}});
  return e;
}

PathEnsemble random_walks(std::size_t count, std::uint64_t seed, double drift = 0.0) {
  auto e = sample_bm(count, 16, seed);
  for (auto& p : e)
    for (std::size_t j = 0; j < p.size(); ++j) p.values[j] += drift * p.times[j];
  return e;
}

}  // namespace

TEST(Wp1d, Examples) {
  EXPECT_EQ(wp_1d({0.3, -1.0, 2.0}, {2.0, 0.3, -1.0}, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(wp_1d({0.0, 1.0}, {0.0, 0.0}, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(wp_1d({-1.0, 1.0}, {0.0, 0.0}, 2.0), 1.0);
  EXPECT_THROW(wp_1d({1.0}, {1.0, 2.0}, 1.0), std::invalid_argument);
  EXPECT_THROW(wp_1d({1.0}, {1.0}, 0.5), std::invalid_argument);
}

TEST(SupDistance, Examples) {
  PolygonalPath id{{0.0, 1.0}, {0.0, 1.0}};
  PolygonalPath zero{{0.0, 0.3, 1.0}, {0.0, 0.0, 0.0}};
  PolygonalPath rev{{0.0, 1.0}, {1.0, 0.0}};
  EXPECT_EQ(path_sup_distance(id, id), 0.0);
  EXPECT_DOUBLE_EQ(path_sup_distance(id, zero), 1.0);
  EXPECT_DOUBLE_EQ(path_sup_distance(id, rev), 1.0);
  // peak of the difference sits on a vertex of one grid only
  PolygonalPath tent{{0.0, 0.4, 1.0}, {0.0, 2.0, 0.0}};
  EXPECT_DOUBLE_EQ(path_sup_distance(tent, zero), 2.0);
}

TEST(Assignment, SmallExamples) {
  EXPECT_EQ(solve_assignment(std::vector<double>{0, 1, 1, 0}, 2).cost, 0.0);
  const auto a = solve_assignment(std::vector<double>{4, 1, 3, 2, 0, 5, 3, 2, 2}, 3);
  EXPECT_EQ(a.cost, 5.0);
  EXPECT_EQ(a.row_to_col, (std::vector<std::size_t>{1, 0, 2}));
  EXPECT_EQ(solve_assignment(std::vector<double>{}, 0).cost, 0.0);
  EXPECT_THROW(solve_assignment(std::vector<double>{1, 2, 3}, 2), std::invalid_argument);
}

TEST(Assignment, MatchesBruteForce) {
  RandomStream r(1234);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + trial % 7;
    std::vector<double> c(k * k);
    for (auto& v : c) v = static_cast<double>(r.next_u64() % 20);
    const auto a = solve_assignment(c, k);
    EXPECT_EQ(a.cost, brute_force(c, k)) << "trial " << trial;
    std::vector<std::size_t> seen(a.row_to_col);
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < k; ++i) EXPECT_EQ(seen[i], i);
  }
}

TEST(Assignment, RealValuedMatchesBruteForce) {
  RandomStream r(99);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + trial % 6;
    std::vector<double> c(k * k);
    for (auto& v : c) v = r.uniform() * 1e3;
    EXPECT_NEAR(solve_assignment(c, k).cost, brute_force(c, k), 1e-9);
  }
}

TEST(EmpiricalWp, IdenticalEnsemblesGiveZero) {
  const auto a = random_walks(20, 4);
  const auto res = empirical_wp_paths(a, a, 2.0);
  EXPECT_EQ(res.value, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(res.permutation[i], i);
}

TEST(EmpiricalWp, ConstantPathsReduceToOneDimension) {
  RandomStream r(6);
  for (double p : {1.0, 2.0, 3.5}) {
    std::vector<double> x(40), y(40);
    for (auto& v : x) v = r.normal();
    for (auto& v : y) v = 0.5 + 2.0 * r.normal();
    EXPECT_NEAR(empirical_wp_paths(constant_paths(x), constant_paths(y), p).value, wp_1d(x, y, p), 1e-12);
  }
}

TEST(EmpiricalWp, TriangleInequality) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto a = random_walks(30, 100 + s), b = random_walks(30, 200 + s, 0.5), c = random_walks(30, 300 + s, -1.0);
    const double ab = empirical_wp_paths(a, b, 2.0).value, bc = empirical_wp_paths(b, c, 2.0).value;
    EXPECT_LE(empirical_wp_paths(a, c, 2.0).value, ab + bc + 1e-10);
  }
}

TEST(EmpiricalWp, MonotoneInP) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto a = random_walks(25, 400 + s), b = random_walks(25, 500 + s, 0.3);
    double prev = 0.0;
    for (double p : {1.0, 1.5, 2.0, 3.0}) {
      const double w = empirical_wp_paths(a, b, p).value;
      EXPECT_GE(w, prev - 1e-12) << "p=" << p;
      prev = w;
    }
  }
}

TEST(EmpiricalWp, CostMatrixSymmetricForSameEnsemble) {
  const auto a = random_walks(12, 8);
  const auto c = path_cost_matrix(a, a, 2.0);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j) {
      EXPECT_EQ(c(i, j), c(j, i));
      EXPECT_GE(c(i, j), 0.0);
    }
}

TEST(EmpiricalWp, MixedGridsUseExactSupDistance) {
  PathEnsemble a{PolygonalPath{{0.0, 0.4, 1.0}, {0.0, 2.0, 0.0}}};
  PathEnsemble b{PolygonalPath{{0.0, 0.7, 1.0}, {0.0, 0.0, 0.0}}};
  EXPECT_DOUBLE_EQ(empirical_wp_paths(a, b, 1.0).value, 2.0);
}

TEST(EmpiricalWp, ExactCapAndInputChecks) {
  const auto a = random_walks(10, 1);
  TransportOptions opt;
  opt.exact_cap = 5;
  EXPECT_THROW(empirical_wp_paths(a, a, 2.0, opt), ExactCapExceeded);
  EXPECT_THROW(empirical_wp_paths(a, random_walks(9, 2), 2.0), std::invalid_argument);
  EXPECT_THROW(empirical_wp_paths(a, a, 0.5), std::invalid_argument);
}

TEST(Sinkhorn, MarginalsAndUpperBound) {
  const auto a = random_walks(32, 11), b = random_walks(32, 12, 0.4);
  const auto c = path_cost_matrix(a, b, 2.0);
  const auto exact = exact_transport(c);
  EntropicOptions eo;
  eo.epsilon = 0.05;
  const auto ent = sinkhorn(c, eo);
  ASSERT_EQ(ent.plan.size(), 32u * 32u);
  for (std::size_t i = 0; i < 32; ++i) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < 32; ++j) row += ent.plan[i * 32 + j], col += ent.plan[j * 32 + i];
    EXPECT_NEAR(row, 1.0 / 32, 1e-8);
    EXPECT_NEAR(col, 1.0 / 32, 1e-8);
  }
  EXPECT_GE(ent.value, exact.value - 1e-12);
}

TEST(Sinkhorn, ConvergesToExactAsEpsilonShrinks) {
  const auto a = random_walks(32, 21), b = random_walks(32, 22, 0.4);
  const auto c = path_cost_matrix(a, b, 2.0);
  const double exact = exact_transport(c).value;
  EntropicOptions eo;
  eo.max_iterations = 200000;
  eo.tolerance = 1e-8;
  double prev = std::numeric_limits<double>::infinity();
  for (double eps : {0.3, 0.1, 0.03}) {
    eo.epsilon = eps;
    const double v = sinkhorn(c, eo).value;
    EXPECT_GE(v, exact - 1e-9);
    EXPECT_LE(v, prev + 1e-9);
    prev = v;
  }
  EXPECT_LE(prev, 1.02 * exact);
}

TEST(Sinkhorn, ReportsNonConvergence) {
  const auto a = random_walks(16, 31), b = random_walks(16, 32);
  EntropicOptions eo;
  eo.epsilon = 1e-4;
  eo.max_iterations = 3;
  EXPECT_THROW(sinkhorn(path_cost_matrix(a, b, 2.0), eo), EntropicNotConverged);
}

TEST(LevyProkhorov, Examples) {
  EXPECT_EQ(levy_prokhorov_bound(0.0, 2.0), 0.0);
  for (double p : {1.0, 2.0, 7.0}) EXPECT_DOUBLE_EQ(levy_prokhorov_bound(1.0, p), 1.0);
  EXPECT_NEAR(levy_prokhorov_bound(0.04, 1.0), 0.2, 1e-15);
  EXPECT_THROW(levy_prokhorov_bound(-1.0, 2.0), std::invalid_argument);
}
