#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "cbo/lfpe.hpp"

using namespace cbo;

namespace {

struct Bench {
  ObjectiveSpec obj = quadratic_objective({0.0}, 1.0);
  CutoffBump bump = make_cutoff({0.0}, 0.5);
  CboParams p;
  explicit Bench(double horizon = 0.5, std::size_t snaps = 11) {
    p.lambda = 5.0;
    p.sigma = 0.3;
    p.alpha = 0.5;
    p.c0 = {0.0};
    p.r_cut = 0.5;
    p.dt = 2e-4;
    p.horizon = horizon;
    p.snapshot_times = uniform_time_grid(horizon, snaps);
  }
  std::shared_ptr<const DensityFlow> flow(std::size_t cells) const {
    FpeSettings st;
    st.n_cells = cells;
    return std::make_shared<const DensityFlow>(
        fpe_solve_1d(InitialLaw::uniform(-0.2, 0.4).grid(-1.0, 1.0, cells), p, obj, bump, st));
  }
};

// Right-hand side of the grid equation with the consensus taken from rho.
std::vector<double> fpe_rhs(const GridDensity& rho, const Bench& s) {
  GridOperator op(rho, s.p, s.obj, s.bump);
  op.set_consensus(op.consensus_of(rho.values));
  std::vector<double> out(rho.n_cells());
  op.apply_transpose(rho.values, out);
  return out;
}

GridDensity smooth_density(std::size_t cells) {
  GridDensity g = GridDensity::zeros(-1.0, 1.0, cells);
  for (std::size_t i = 0; i < cells; ++i) {
    const double x = g.center(i);
    g.values[i] = std::exp(-40.0 * (x - 0.1) * (x - 0.1));
  }
  const double m = g.mass();
  for (auto& v : g.values) v /= m;
  return g;
}

GridDensity direction(const GridDensity& layout, double a, double b) {
  GridDensity q = mollified_dirac(layout, a, 0.08);
  const GridDensity e = mollified_dirac(layout, b, 0.05);
  for (std::size_t i = 0; i < q.n_cells(); ++i) q.values[i] -= e.values[i];
  return q;
}

GridDensity plus(const GridDensity& rho, double e1, const GridDensity& q1, double e2, const GridDensity& q2) {
  GridDensity r = rho;
  for (std::size_t i = 0; i < r.n_cells(); ++i) r.values[i] += e1 * q1.values[i] + e2 * q2.values[i];
  return r;
}

}  // namespace

TEST(Linearization, FirstVariationOfGridEquation) {
  const Bench s;
  const GridDensity rho = smooth_density(200);
  const GridDensity q = direction(rho, -0.1, 0.3);
  GridOperator op(rho, s.p, s.obj, s.bump);
  op.set_consensus(op.consensus_of(rho.values));
  LinearizationFrame frame;
  frame.update(op, rho, s.p);
  std::vector<double> lin(rho.n_cells());
  frame.apply_linearized(q.values, lin);
  const double e = 1e-6;
  const auto fp = fpe_rhs(plus(rho, e, q, 0, q), s), fm = fpe_rhs(plus(rho, -e, q, 0, q), s);
  double scale = 0.0, err = 0.0;
  for (std::size_t i = 0; i < lin.size(); ++i) {
    scale = std::max(scale, std::abs(lin[i]));
    err = std::max(err, std::abs((fp[i] - fm[i]) / (2 * e) - lin[i]));
  }
  EXPECT_LT(err, 1e-6 * scale);
}

TEST(Linearization, SecondVariationOfGridEquation) {
  const Bench s;
  const GridDensity rho = smooth_density(200);
  const GridDensity q1 = direction(rho, -0.1, 0.3), q2 = direction(rho, 0.4, 0.0);
  const GridDensity b = source_B(rho, q1, q2, s.p, s.obj, s.bump);
  const double e = 1e-4;
  const auto fpp = fpe_rhs(plus(rho, e, q1, e, q2), s), fpm = fpe_rhs(plus(rho, e, q1, -e, q2), s);
  const auto fmp = fpe_rhs(plus(rho, -e, q1, e, q2), s), fmm = fpe_rhs(plus(rho, -e, q1, -e, q2), s);
  double scale = 0.0, err = 0.0;
  for (std::size_t i = 0; i < rho.n_cells(); ++i) {
    const double fd = (fpp[i] - fpm[i] - fmp[i] + fmm[i]) / (4 * e * e);
    scale = std::max(scale, std::abs(b.values[i]));
    err = std::max(err, std::abs(fd - b.values[i]));
  }
  EXPECT_GT(scale, 0.0);
  EXPECT_LT(err, 1e-4 * scale);
}

TEST(Linearization, SourceIsSymmetricAndMassFree) {
  const Bench s;
  const GridDensity rho = smooth_density(150);
  const GridDensity q1 = direction(rho, -0.1, 0.3), q2 = direction(rho, 0.4, 0.0);
  const GridDensity a = source_B(rho, q1, q2, s.p, s.obj, s.bump), b = source_B(rho, q2, q1, s.p, s.obj, s.bump);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NEAR(a.mass(), 0.0, 1e-10);
}

TEST(Generator, CenteredStencilIsSecondOrder) {
  const Bench s;
  auto err_at = [&](std::size_t cells) {
    const GridDensity mu = smooth_density(cells);
    std::vector<double> f(cells);
    for (std::size_t i = 0; i < cells; ++i) f[i] = std::sin(2.0 * mu.center(i));
    const auto lf = lin_apply(f, mu, s.p, s.obj, s.bump);
    const double m = consensus(mu, s.obj, s.p.alpha);
    double worst = 0.0;
    for (std::size_t i = 1; i + 1 < cells; ++i) {
      const double x = mu.center(i), ph = s.bump(x);
      const double exact = 0.5 * 0.09 * (x - m) * (x - m) * ph * ph * (-4.0 * std::sin(2.0 * x)) -
                           5.0 * (x - m) * 2.0 * std::cos(2.0 * x);
      worst = std::max(worst, std::abs(lf[i] - exact));
    }
    return worst;
  };
  EXPECT_GT(err_at(100) / err_at(200), 3.5);
}

TEST(Flows, MassFreeAndDeterministic) {
  const Bench s;
  const auto bg = s.flow(256);
  const double w = default_mollify_width(bg->setup->init);
  const LinearizedFlow m = m1_flow(bg, -0.2, w), d = d1_flow(bg, -0.2, w);
  for (const auto* f : {&m, &d}) {
    ASSERT_EQ(f->times.size(), bg->times.size());
    EXPECT_LT(f->max_mass_drift, 1e-8 * bg->times.back());
    for (const auto& q : f->states) EXPECT_NEAR(q.mass(), 0.0, 1e-8);
  }
  EXPECT_EQ(m1_flow(bg, -0.2, w).states.back().values, m.states.back().values);
}

TEST(Flows, DiracAtStartCancelsPointMassInit) {
  Bench s;
  FpeSettings st;
  st.n_cells = 128;
  const GridDensity init = InitialLaw::point_mass({0.1}).grid(-1.0, 1.0, 128);
  auto bg = std::make_shared<const DensityFlow>(fpe_solve_1d(init, s.p, s.obj, s.bump, st));
  LinearizedSystem sys(bg);
  sys.add(GridDensity::zeros_like(init));
  const auto flows = sys.run();
  for (const auto& q : flows[0].states)
    for (double v : q.values) EXPECT_EQ(v, 0.0);
}

TEST(Flows, ZeroStartWithoutSourceStaysZero) {
  const Bench s;
  const auto bg = s.flow(128);
  const LinearizedFlow f = lfpe_solve(bg, GridDensity::zeros_like(bg->setup->init));
  for (const auto& q : f.states)
    for (double v : q.values) EXPECT_EQ(v, 0.0);
  GridDensity bad = GridDensity::zeros_like(bg->setup->init);
  bad.values[10] = 1.0;
  EXPECT_THROW(lfpe_solve(bg, bad), std::invalid_argument);
}

TEST(Flows, SecondOrderComposeIsZeroForZeroFlows) {
  const Bench s;
  const auto bg = s.flow(128);
  SecondOrderFlows z;
  for (auto* f : {&z.first_a, &z.first_b, &z.second}) {
    f->times = bg->times;
    f->states.assign(bg->times.size(), GridDensity::zeros_like(bg->setup->init));
  }
  const ComposeCurve c = compose_dU2(z, FunctionalSpec::variance(), *bg);
  for (double v : c.values) EXPECT_EQ(v, 0.0);
}

TEST(Flows, RejectsStartOutsideDomain) {
  const Bench s;
  const auto bg = s.flow(64);
  EXPECT_THROW(m1_initial(*bg, 1.5, 0.1), std::invalid_argument);
}

TEST(Projection, ZeroFlowHasZeroLimit) {
  const Bench s;
  const auto bg = s.flow(128);
  LinearizedFlow f;
  f.background = bg;
  f.times = bg->times;
  f.states.assign(bg->times.size(), GridDensity::zeros_like(bg->setup->init));
  const ProjectionReport r = projection_decay(f, 0.1, TestDictionary(-1.0, 1.0, 16, 1));
  EXPECT_EQ(r.q_infty, 0.0);
  for (double v : r.residual_curve) EXPECT_EQ(v, 0.0);
}

TEST(Projection, ConstantDipoleIsRecovered) {
  const Bench s;
  const auto bg = s.flow(512);
  const GridDensity dip = mollified_dipole(bg->setup->init, 0.1, 0.02);
  LinearizedFlow f;
  f.background = bg;
  f.times = bg->times;
  GridDensity scaled = dip;
  for (auto& v : scaled.values) v *= 2.5;
  f.states.assign(bg->times.size(), scaled);
  const ProjectionReport r = projection_decay(f, 0.1, TestDictionary(-1.0, 1.0, 32, 1));
  EXPECT_NEAR(r.q_infty, -2.5, 0.05);  // the dipole is minus the derivative of a Dirac
  EXPECT_LT(r.residual_curve.back(), 0.05);
}

TEST(Bounded, SupAfterReference) {
  const std::vector<double> t{0.0, 0.5, 1.0, 1.5, 2.0}, v{5.0, 2.0, 1.0, 1.5, 1.9};
  const BoundednessCheck c = check_bounded(t, v);
  EXPECT_EQ(c.reference, 1.0);
  EXPECT_EQ(c.sup_after, 1.9);
  EXPECT_EQ(c.sup_all, 5.0);
  EXPECT_TRUE(c.pass);
  const std::vector<double> w{0.0, 0.5, 1.0, 2.5, 0.0};
  EXPECT_FALSE(check_bounded(t, w).pass);
}

TEST(Coefficients, DerivativeOfDriftMatchesDifference) {
  const Bench s;
  const EmpiricalMeasure mu = EmpiricalMeasure::uniform({-0.2, 0.0, 0.1, 0.35});
  const double x = 0.2, y = 0.3, e = 1e-6;
  const CoeffDerivatives d = coeff_derivatives(x, mu, y, s.p, s.obj, s.bump);
  auto drift = [&](double w) {
    EmpiricalMeasure m = mu;
    for (auto& v : m.weights) v *= 1.0 - w;
    m.points.push_back(y);
    m.weights.push_back(w);
    return -s.p.lambda * (x - consensus(m, s.obj, s.p.alpha)[0]);
  };
  EXPECT_NEAR(d.db, (drift(e) - drift(-e)) / (2 * e), 1e-6);
}
