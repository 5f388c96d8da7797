#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cbo/measures.hpp"
#include "cbo/model.hpp"

using namespace cbo;

TEST(Sobolev, TwoDiracsMatchesOracle) {
  const SobolevNorm n = sobolev_dual_norm(EmpiricalMeasure::dirac({0.1}), EmpiricalMeasure::dirac({0.0}), 4.5);
  EXPECT_NEAR(n.squared, 0.0587180760669561138694, 1e-9 + n.tail_bound);
  EXPECT_NEAR(n.norm, 0.242318129876730671894, 1e-8);
  EXPECT_LT(n.tail_bound, 1e-6);
}

TEST(Sobolev, GaussRuleAgreesWithTrapezoid) {
  QuadratureSpec g;
  g.rule = QuadratureRule::gauss;
  g.n_nodes = 512;
  const double a = sobolev_dual_norm(EmpiricalMeasure::dirac({0.1}), EmpiricalMeasure::dirac({0.0}), 4.5).squared;
  const double b = sobolev_dual_norm(EmpiricalMeasure::dirac({0.1}), EmpiricalMeasure::dirac({0.0}), 4.5, g).squared;
  EXPECT_NEAR(a, b, 1e-9);
}

TEST(Sobolev, IdenticalMeasuresHaveZeroDistance) {
  const EmpiricalMeasure mu = EmpiricalMeasure::uniform({-0.2, 0.1, 0.3});
  EXPECT_NEAR(sobolev_dual_norm(mu, mu, 4.5).squared, 0.0, 1e-15);
}

TEST(Sobolev, RejectsLowSmoothness) {
  const EmpiricalMeasure mu = EmpiricalMeasure::dirac({0.0});
  EXPECT_THROW(sobolev_dual_norm(mu, mu, 0.4), std::invalid_argument);
}

TEST(Consensus, TwoPointOracle) {
  const ObjectiveSpec lin{1, [](std::span<const double> x) { return x[0]; }, {0.0}, 0.0, 1.0, 0.0, "linear"};
  const Point m = consensus(EmpiricalMeasure::uniform({0.0, 1.0}), lin, 1.0);
  EXPECT_NEAR(m[0], 0.268941421369995120749, 1e-15);
}

TEST(Consensus, StableForLargeAlpha) {
  const ObjectiveSpec obj = quadratic_objective({0.0}, 1.0);
  const Point m = consensus(EmpiricalMeasure::uniform({0.1, 0.5}), obj, 1e5);
  EXPECT_NEAR(m[0], 0.1, 1e-12);
}

TEST(Consensus, GridAgreesWithAtoms) {
  const ObjectiveSpec obj = quadratic_objective({0.0}, 1.0);
  const GridDensity g = GridDensity::uniform_law(-1.0, 1.0, 400, -0.2, 0.4);
  std::vector<double> x, w;
  for (std::size_t i = 0; i < g.n_cells(); ++i)
    if (g.values[i] > 0) {
      x.push_back(g.center(i));
      w.push_back(g.values[i]);
    }
  EmpiricalMeasure mu = EmpiricalMeasure::uniform(x);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) mu.weights[i] = w[i] / total;
  EXPECT_NEAR(consensus(g, obj, 0.5), consensus(mu, obj, 0.5)[0], 1e-12);
}

TEST(GridDensity, UniformLawMassAndMoments) {
  const GridDensity g = GridDensity::uniform_law(-1.0, 1.0, 1000, -0.4, 0.4);
  EXPECT_NEAR(g.mass(), 1.0, 1e-14);
  EXPECT_NEAR(mean(g), 0.0, 1e-14);
  EXPECT_NEAR(variance(g), 0.64 / 12.0, 1e-6);
}

TEST(W2, MatchesBruteForceAssignment) {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t n = 1; n <= 7; ++n) {
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = u(gen);
    for (auto& v : y) v = u(gen);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = INFINITY;
    do {
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i) c += (x[i] - y[perm[i]]) * (x[i] - y[perm[i]]);
      best = std::min(best, c / static_cast<double>(n));
    } while (std::next_permutation(perm.begin(), perm.end()));
    const double w = w2_1d(EmpiricalMeasure::uniform(x), EmpiricalMeasure::uniform(y));
    EXPECT_NEAR(w * w, best, 1e-14) << "n = " << n;
  }
}

TEST(W2, ShiftedDiracs) {
  EXPECT_NEAR(w2_1d(EmpiricalMeasure::dirac({0.3}), EmpiricalMeasure::dirac({-0.1})), 0.4, 1e-15);
}

TEST(W2, CenteredDistanceIsStandardDeviation) {
  const EmpiricalMeasure mu = EmpiricalMeasure::uniform({-0.3, 0.1, 0.5, 0.9});
  EXPECT_NEAR(w2_centered_to_delta0(mu), w2_1d(center(mu), EmpiricalMeasure::dirac({0.0})), 1e-14);
}

TEST(Variance, TranslationInvariant) {
  const EmpiricalMeasure mu = EmpiricalMeasure::uniform({-0.3, 0.1, 0.5});
  const Point z{0.7};
  EXPECT_NEAR(variance(mu), variance(translate(mu, z)), 1e-15);
}

TEST(Dictionary, NormsIncreaseWithOrder) {
  const TestDictionary d(-1.0, 1.0, 12, 3);
  ASSERT_EQ(d.size(), 12u);
  for (std::size_t j = 0; j < d.size(); ++j) {
    EXPECT_GT(d.norm(j, 0), 0.0);
    for (int n = 1; n <= TestDictionary::kMaxOrder; ++n) EXPECT_GE(d.norm(j, n), d.norm(j, n - 1));
  }
}

TEST(Dictionary, DerivativesMatchFiniteDifferences) {
  const TestDictionary d(-1.0, 1.0, 12, 3);
  const double x = 0.17, h = 1e-5;
  for (std::size_t j = 0; j < d.size(); ++j) {
    const auto v = d.derivatives(j, x);
    const double fd = (d.value(j, x + h) - d.value(j, x - h)) / (2 * h);
    EXPECT_NEAR(v[1], fd, 1e-5 * std::max(1.0, std::abs(fd))) << "item " << j;
  }
}

TEST(Dictionary, ProbeIsZeroOnZeroAndPositiveOtherwise) {
  GridDensity q = GridDensity::zeros(-1.0, 1.0, 200);
  EXPECT_EQ(dual_norm_probe(q, 2), 0.0);
  q.values[50] = 1.0;
  q.values[150] = -1.0;
  EXPECT_GT(dual_norm_probe(q, 2), 0.0);
  EXPECT_GE(dual_norm_probe(q, 1), dual_norm_probe(q, 2));
  EXPECT_THROW(dual_norm_probe(q, 3), std::invalid_argument);
}
