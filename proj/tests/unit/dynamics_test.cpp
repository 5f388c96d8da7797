#include <gtest/gtest.h>

#include <cmath>

#include "cbo/dynamics.hpp"

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
    p.dt = 2e-4;
    p.horizon = 0.5;
    p.snapshot_times = uniform_time_grid(0.5, 6);
    p.n_particles = 64;
  }
};

}  // namespace

TEST(Simulate, DeterministicForSeed) {
  const Bench s;
  const EmpiricalMeasure init = InitialLaw::uniform(-0.4, 0.4).sample(64, 1, 5, 0);
  const EnsemblePath a = simulate(s.p, s.obj, s.bump, init, 17);
  const EnsemblePath b = simulate(s.p, s.obj, s.bump, init, 17);
  const EnsemblePath c = simulate(s.p, s.obj, s.bump, init, 18);
  EXPECT_EQ(a.snapshots.back().points, b.snapshots.back().points);
  EXPECT_NE(a.snapshots.back().points, c.snapshots.back().points);
}

TEST(Simulate, SnapshotsAtRequestedTimes) {
  const Bench s;
  const EnsemblePath path = simulate(s.p, s.obj, s.bump, InitialLaw::uniform(-0.4, 0.4).sample(64, 1, 1, 0), 1);
  EXPECT_EQ(path.times, s.p.snapshot_times);
  ASSERT_EQ(path.consensus_path.size(), path.times.size());
  EXPECT_EQ(path.snapshots.front().points, InitialLaw::uniform(-0.4, 0.4).sample(64, 1, 1, 0).points);
}

TEST(Simulate, PointMassIsFixed) {
  const Bench s;
  const EmpiricalMeasure init = InitialLaw::point_mass({0.2}).sample(16, 1, 1, 0);
  const EnsemblePath path = simulate(s.p, s.obj, s.bump, init, 3);
  for (double x : path.snapshots.back().points) EXPECT_NEAR(x, 0.2, 1e-14);
}

TEST(Simulate, ConsensusContracts) {
  Bench s;
  s.p.horizon = 1.0;
  s.p.snapshot_times = {0.0, 1.0};
  const EnsemblePath path = simulate(s.p, s.obj, s.bump, InitialLaw::uniform(-0.4, 0.4).sample(128, 1, 2, 0), 2);
  EXPECT_LT(variance(path.snapshots.back()), 1e-3 * variance(path.snapshots.front()));
}

TEST(Simulate, StaysInOuterBall) {
  Bench s;
  s.p.sigma = 3.0;
  s.p.dt = 0.02;
  s.p.horizon = 1.0;
  s.p.snapshot_times = uniform_time_grid(1.0, 11);
  s.p.n_particles = 256;
  const EnsemblePath path = simulate(s.p, s.obj, s.bump, InitialLaw::uniform(-0.5, 0.5).sample(256, 1, 4, 0), 4);
  for (const auto& m : path.snapshots)
    for (double x : m.points) EXPECT_LE(std::abs(x), 1.0 + 1e-12);
}

TEST(Simulate, RejectsInitOutsideSupport) {
  const Bench s;
  EXPECT_THROW(simulate(s.p, s.obj, s.bump, EmpiricalMeasure::uniform({0.0, 0.8}), 1), std::invalid_argument);
}

TEST(InitialLaw, SamplesInBoxAndReproducible) {
  const InitialLaw law = InitialLaw::uniform(-0.4, 0.4);
  const EmpiricalMeasure a = law.sample(1000, 1, 9, 2), b = law.sample(1000, 1, 9, 2), c = law.sample(1000, 1, 9, 3);
  EXPECT_EQ(a.points, b.points);
  EXPECT_NE(a.points, c.points);
  for (double x : a.points) {
    EXPECT_GT(x, -0.4);
    EXPECT_LT(x, 0.4);
  }
}

TEST(InitialLaw, PointMassGrid) {
  const GridDensity g = InitialLaw::point_mass({0.3}).grid(-1.0, 1.0, 100);
  EXPECT_NEAR(g.mass(), 1.0, 1e-14);
  EXPECT_NEAR(mean(g), 0.3, g.h());
}

TEST(Tangent, NoiselessFlowIsExact) {
  const CutoffBump bump = make_cutoff({0.0}, 0.5);
  const std::vector<double> u{0.0, 0.1, 0.5};
  TangentOptions opt;
  opt.dt = 1e-3;
  const auto rows = tangent_flow_y(5.0, 0.0, bump, [](double) { return 0.05; }, 0.0, 0.3, u, 4, 1, opt);
  for (const auto& r : rows) {
    EXPECT_NEAR(r.d1.mean, std::exp(-5.0 * r.u), 1e-12);
    EXPECT_NEAR(r.d2.mean, 0.0, 1e-12);
  }
}

TEST(Tangent, MeanDerivativeIdentity) {
  const CutoffBump bump = make_cutoff({0.0}, 0.5);
  const std::vector<double> u{0.0, 0.2};
  TangentOptions opt;
  opt.dt = 1e-3;
  const auto rows = tangent_flow_y(5.0, 0.3, bump, [](double) { return 0.05; }, 0.0, 0.3, u, 20000, 2, opt);
  EXPECT_NEAR(rows[1].d1.mean, std::exp(-1.0), 4.0 * rows[1].d1.se);
}

TEST(Tangent, OrderZeroIsOneAtStart) {
  const CutoffBump bump = make_cutoff({0.0}, 0.5);
  const std::vector<double> u{0.0, 0.1};
  const std::vector<TangentOrder> orders{{1, 0}, {0, 1}};
  const auto rows = tangent_flow_s(5.0, 0.3, bump, 0.0, 0.3, u, 100, 3, orders);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows)
    if (r.u == 0.0) EXPECT_NEAR(r.estimate.mean, r.order.beta == 0 ? 1.0 : 0.0, 1e-14);
}

TEST(Tangent, RejectsBadInputs) {
  const CutoffBump bump = make_cutoff({0.0}, 0.5);
  const std::vector<double> u{0.0, 0.1};
  const std::vector<TangentOrder> bad{{4, 2}};
  EXPECT_THROW(tangent_flow_s(5.0, 0.3, bump, 0.0, 0.3, u, 10, 3, bad), std::invalid_argument);
  EXPECT_THROW(tangent_flow_y(5.0, 0.3, bump, [](double) { return 0.0; }, 0.0, 0.3, u, 0, 1), std::invalid_argument);
}
