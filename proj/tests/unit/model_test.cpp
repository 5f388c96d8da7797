#include <gtest/gtest.h>

#include <cmath>

#include "cbo/model.hpp"

using namespace cbo;

namespace {

CboParams benchmark() {
  CboParams p;
  p.lambda = 5.0;
  p.sigma = 0.3;
  p.alpha = 0.5;
  p.dim = 1;
  p.c0 = {0.0};
  p.r_cut = 0.5;
  p.dt = 2e-4;
  return p;
}

}  // namespace

TEST(Kappa, BenchmarkValues) {
  const KappaResult k = kappa(benchmark(), quadratic_objective({0.0}, 1.0));
  EXPECT_NEAR(k.value, 9.44556096719475437590, 1e-12);
  EXPECT_NEAR(k.required_lambda, 3.93411307419029855985, 1e-12);
  EXPECT_FALSE(k.below_gate);
}

TEST(Kappa, SmallLambdaFailsGate) {
  CboParams p = benchmark();
  p.lambda = 0.1;
  EXPECT_TRUE(kappa(p, quadratic_objective({0.0}, 1.0)).below_gate);
}

TEST(Kappa, GateBoundaryIsStrict) {
  CboParams p = benchmark();
  const ObjectiveSpec obj = quadratic_objective({0.0}, 1.0);
  p.lambda = required_lambda(p, obj);
  EXPECT_TRUE(kappa(p, obj).below_gate);
}

TEST(Objective, QuadraticConstants) {
  const ObjectiveSpec obj = quadratic_objective({0.1, -0.2}, 2.0);
  EXPECT_EQ(obj.dim, 2u);
  EXPECT_DOUBLE_EQ(obj.c_E, 2.0);
  EXPECT_DOUBLE_EQ(obj.ell_E, 4.0);
  const Point x{0.4, 0.2};
  EXPECT_NEAR(obj(x), 2.0 * (0.09 + 0.16), 1e-15);
  EXPECT_THROW(quadratic_objective({0.0}, 0.0), std::invalid_argument);
}

TEST(Objective, CertifiesQuadratic) {
  const ObjectiveSpec obj = quadratic_objective({0.0}, 1.0);
  const Certification c = certify(obj, Point{0.0}, 0.5, 2000);
  EXPECT_TRUE(c.ok) << c.message;
  EXPECT_LT(c.gradient_norm, 1e-6);
}

TEST(Objective, RejectsWrongGrowthConstant) {
  ObjectiveSpec obj = quadratic_objective({0.0}, 1.0);
  obj.c_E = 2.0;
  EXPECT_FALSE(certify(obj, Point{0.0}, 0.5, 2000).ok);
}

TEST(Cutoff, PlateauAndSupport) {
  const CutoffBump b = make_cutoff({0.0}, 0.5);
  EXPECT_DOUBLE_EQ(b(0.0), 1.0);
  EXPECT_DOUBLE_EQ(b(0.5), 1.0);
  EXPECT_DOUBLE_EQ(b(-0.49), 1.0);
  EXPECT_DOUBLE_EQ(b(1.0), 0.0);
  EXPECT_DOUBLE_EQ(b(1.3), 0.0);
  const double mid = b(0.75);
  EXPECT_GT(mid, 0.0);
  EXPECT_LT(mid, 1.0);
}

TEST(Cutoff, ScaledConstantsIndependentOfRadius) {
  const auto a = make_cutoff({0.0}, 0.25).derivative_constants;
  const auto b = make_cutoff({1.0}, 2.0).derivative_constants;
  for (int k = 0; k < kCutoffOrders; ++k) EXPECT_NEAR(a[k], b[k], 1e-8 * a[k]) << "order " << k;
  EXPECT_DOUBLE_EQ(a[0], 1.0);
}

TEST(Cutoff, JetMatchesFiniteDifference) {
  const CutoffBump b = make_cutoff({0.0}, 0.5);
  const double x = 0.7, h = 1e-5;
  const Jet<2> j = b.jet(Jet<2>::variable(x));
  EXPECT_NEAR(j.derivative(1), (b(x + h) - b(x - h)) / (2 * h), 1e-6);
  EXPECT_NEAR(j.derivative(2), (b(x + h) - 2 * b(x) + b(x - h)) / (h * h), 1e-3);
}

TEST(Params, ValidationErrors) {
  CboParams p = benchmark();
  p.snapshot_times = uniform_time_grid(1.0, 11);
  EXPECT_NO_THROW(p.validate());
  CboParams q = p;
  q.lambda = 0.0;
  EXPECT_THROW(q.validate(), std::invalid_argument);
  q = p;
  q.n_particles = 1;
  EXPECT_THROW(q.validate(), std::invalid_argument);
  q = p;
  q.snapshot_times = {0.0, 0.5, 0.5};
  EXPECT_THROW(q.validate(), std::invalid_argument);
  q = p;
  q.alpha = -1.0;
  EXPECT_THROW(q.validate(), std::invalid_argument);
}

TEST(TimeGrid, EndpointsExact) {
  const auto t = uniform_time_grid(0.3, 7);
  ASSERT_EQ(t.size(), 7u);
  EXPECT_EQ(t.front(), 0.0);
  EXPECT_EQ(t.back(), 0.3);
}
