#include <gtest/gtest.h>

#include <cmath>

#include "cbo/chaos.hpp"

using namespace cbo;

namespace {

struct Bench {
  ObjectiveSpec obj = quadratic_objective({0.0}, 1.0);
  CutoffBump bump = make_cutoff({0.0}, 0.5);
  CboParams p;
  Bench() {
    p.lambda = 5.0;
    p.sigma = 0.3;
    p.alpha = 0.5;
    p.c0 = {0.0};
    p.r_cut = 0.5;
    p.dt = 1e-3;
    p.horizon = 0.1;
    p.snapshot_times = uniform_time_grid(0.1, 3);
  }
};

}  // namespace

TEST(LogLog, ExactPowerLaw) {
  const std::vector<double> x{1, 2, 4, 8, 16}, y{3.0, 1.5, 0.75, 0.375, 0.1875};
  const LogLogFit f = fit_loglog(x, y);
  EXPECT_NEAR(f.slope, -1.0, 1e-12);
  EXPECT_NEAR(f.intercept, std::log(3.0), 1e-12);
  EXPECT_NEAR(f.ci_lo, -1.0, 1e-9);
  EXPECT_NEAR(f.ci_hi, -1.0, 1e-9);
}

TEST(LogLog, IntervalCoversNoisySlope) {
  const std::vector<double> x{1, 2, 4, 8, 16, 32}, y{1.0, 0.55, 0.24, 0.13, 0.061, 0.032};
  const LogLogFit f = fit_loglog(x, y);
  EXPECT_LT(f.ci_lo, f.slope);
  EXPECT_GT(f.ci_hi, f.slope);
  EXPECT_NEAR(f.slope, -1.0, 0.1);
}

TEST(LogLog, RejectsBadInput) {
  const std::vector<double> two{1, 2}, pos{1, 2, 3}, neg{1, -2, 3};
  EXPECT_THROW(fit_loglog(two, two), std::invalid_argument);
  EXPECT_THROW(fit_loglog(pos, neg), std::invalid_argument);
}

TEST(Seeds, DistinctPerSize) {
  EXPECT_NE(seed_for_size(1, 16), seed_for_size(1, 32));
  EXPECT_NE(seed_for_size(1, 16), seed_for_size(2, 16));
  EXPECT_EQ(seed_for_size(7, 64), seed_for_size(7, 64));
}

// With sigma = 0 and alpha = 0 the t = 0 error is the sample-variance bias
// -Var/N exactly in expectation.
TEST(WeakError, SamplingBiasOracle) {
  Bench s;
  s.p.sigma = 0.0;
  s.p.alpha = 0.0;
  s.p.snapshot_times = {0.0, 0.1};
  const double var = 0.64 / 12.0;
  const std::vector<double> reference{var, var * std::exp(-2.0 * 5.0 * 0.1)};
  const std::vector<std::size_t> ns{4, 8, 16};
  const WeakErrorStudy st = weak_error_study(s.p, s.obj, s.bump, InitialLaw::uniform(-0.4, 0.4),
                                             FunctionalSpec::variance(), ns, 4000, 3, reference, 1);
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const Estimate& e0 = st.errors[i][0];
    EXPECT_NEAR(e0.mean, -var / static_cast<double>(ns[i]), 4.0 * e0.se);
  }
  ASSERT_TRUE(st.slope.has_value());
  EXPECT_NEAR(st.slope->slope, -1.0, 0.15);
}

TEST(WeakError, SingleSizeHasNoSlope) {
  Bench s;
  const std::vector<double> reference(3, 0.0);
  const std::vector<std::size_t> ns{8};
  const WeakErrorStudy st = weak_error_study(s.p, s.obj, s.bump, InitialLaw::uniform(-0.4, 0.4),
                                             FunctionalSpec::variance(), ns, 200, 1, reference, 1);
  EXPECT_FALSE(st.slope.has_value());
  EXPECT_EQ(st.errors.size(), 1u);
}

TEST(WeakError, Preconditions) {
  Bench s;
  const std::vector<double> reference(3, 0.0), short_ref(2, 0.0);
  const std::vector<std::size_t> ns{8};
  const InitialLaw init = InitialLaw::uniform(-0.4, 0.4);
  EXPECT_THROW(weak_error_study(s.p, s.obj, s.bump, init, FunctionalSpec::variance(), ns, 100, 1, reference),
               std::invalid_argument);
  EXPECT_THROW(weak_error_study(s.p, s.obj, s.bump, init, FunctionalSpec::variance(), ns, 200, 1, short_ref),
               std::invalid_argument);
}

TEST(JointDecay, PointMassGivesZero) {
  Bench s;
  const std::vector<std::size_t> ns{4, 8};
  const JointDecayStudy st = joint_decay_study(s.p, s.obj, s.bump, InitialLaw::point_mass({0.1}),
                                               DistanceMetric::w2(), ns, 5, 1, 9.4455);
  for (const auto& row : st.values)
    for (const auto& e : row) EXPECT_NEAR(e.mean, 0.0, 1e-15);
  EXPECT_FALSE(st.pass());
}

TEST(JointDecay, ModelFitRecoversSynthetic) {
  const std::vector<std::size_t> ns{16, 64, 256};
  const std::vector<double> t{0.0, 0.1, 0.2, 0.4, 0.8};
  std::vector<std::vector<double>> v(ns.size(), std::vector<double>(t.size()));
  for (std::size_t i = 0; i < ns.size(); ++i)
    for (std::size_t k = 0; k < t.size(); ++k) v[i][k] = 0.3 * (1.0 / ns[i] + std::exp(-7.0 * t[k]));
  const JointFit f = fit_joint_model(ns, t, v, 9.0);
  EXPECT_TRUE(f.converged);
  EXPECT_NEAR(f.rate, 7.0, 1e-3);
  EXPECT_NEAR(f.c, 0.3, 1e-3);
}

TEST(Metric, FwSquaredVanishesAtDirac) {
  EXPECT_NEAR(DistanceMetric::fw(4.5).squared(EmpiricalMeasure::dirac({0.2})), 0.0, 1e-14);
  const EmpiricalMeasure mu = EmpiricalMeasure::uniform({-0.1, 0.3});
  EXPECT_NEAR(DistanceMetric::w2().squared(mu), 0.04, 1e-15);
  EXPECT_EQ(DistanceMetric::fw(4.5).rate_multiple(), 2.0);
}
