#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cbo/functionals.hpp"

using namespace cbo;

namespace {

EmpiricalMeasure random_measure(std::mt19937_64& gen, std::size_t n) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<double> x(n);
  for (auto& v : x) v = u(gen);
  return EmpiricalMeasure::uniform(x);
}

}  // namespace

TEST(Functionals, TranslationInvariance) {
  std::mt19937_64 gen(1);
  const FunctionalSpec specs[] = {FunctionalSpec::variance(), FunctionalSpec::centered_fw(4.5),
                                  FunctionalSpec::centered_moment({0.0, 0.0, 1.0, 0.5})};
  for (int m = 0; m < 20; ++m) {
    const EmpiricalMeasure mu = random_measure(gen, 3 + m);
    for (const auto& s : specs) EXPECT_LE(check_translation_invariance(s, mu, 0.1), 1e-6) << s.name();
  }
}

TEST(Functionals, FirstMomentIsNotAdmissible) {
  const auto first = [](const EmpiricalMeasure& mu) { return mean(mu)[0]; };
  EXPECT_GE(check_translation_invariance(first, EmpiricalMeasure::uniform({-0.1, 0.2}), 0.1), 0.5);
}

TEST(Functionals, CenteredMomentOfOrderTwoIsVariance) {
  std::mt19937_64 gen(2);
  const EmpiricalMeasure mu = random_measure(gen, 9);
  EXPECT_NEAR(eval_phi(FunctionalSpec::centered_moment({0.0, 0.0, 1.0}), mu), variance(mu), 1e-15);
}

TEST(Functionals, CenteredFwVanishesAtDirac) {
  EXPECT_NEAR(eval_phi(FunctionalSpec::centered_fw(4.5), EmpiricalMeasure::dirac({0.3})), 0.0, 1e-14);
}

TEST(Functionals, VarianceLinearDerivativeGateaux) {
  std::mt19937_64 gen(3);
  const EmpiricalMeasure mu = random_measure(gen, 6);
  const FunctionalSpec var = FunctionalSpec::variance();
  for (double y : {-0.7, 0.0, 0.4}) {
    double avg = 0.0;
    for (double x : mu.points) avg += linear_derivative(var, mu, x) / static_cast<double>(mu.size());
    const double e = 1e-6;
    EmpiricalMeasure mix = mu;
    for (auto& w : mix.weights) w *= 1.0 - e;
    mix.points.push_back(y);
    mix.weights.push_back(e);
    EXPECT_NEAR((eval_phi(var, mix) - eval_phi(var, mu)) / e, linear_derivative(var, mu, y) - avg, 1e-5);
  }
}

TEST(Functionals, SecondDerivativeMatchesMixedDifference) {
  std::mt19937_64 gen(4);
  const EmpiricalMeasure mu = random_measure(gen, 5);
  const FunctionalSpec var = FunctionalSpec::variance();
  const double y1 = 0.3, y2 = -0.2, e = 1e-4;
  auto phi = [&](double a, double b) {
    EmpiricalMeasure m = mu;
    for (auto& w : m.weights) w *= 1.0 - a - b;
    m.points.insert(m.points.end(), {y1, y2});
    m.weights.insert(m.weights.end(), {a, b});
    return eval_phi(var, m);
  };
  const double mixed = (phi(e, e) - phi(e, 0) - phi(0, e) + phi(0, 0)) / (e * e);
  // second Gateaux derivative in directions delta_y1 - mu and delta_y2 - mu
  double s11 = 0, s12 = 0, s21 = 0, s22 = 0;
  const double n = static_cast<double>(mu.size());
  for (double a : mu.points) {
    s12 += second_derivative(var, mu, y1, a) / n;
    s21 += second_derivative(var, mu, a, y2) / n;
    for (double b : mu.points) s22 += second_derivative(var, mu, a, b) / (n * n);
  }
  s11 = second_derivative(var, mu, y1, y2);
  EXPECT_NEAR(mixed, s11 - s12 - s21 + s22, 1e-6);
}

TEST(Functionals, PairingsAgreeWithPointwiseDerivatives) {
  const GridDensity mu = GridDensity::uniform_law(-1.0, 1.0, 400, -0.3, 0.5);
  GridDensity q = GridDensity::zeros_like(mu);
  for (std::size_t i = 0; i < q.n_cells(); ++i) q.values[i] = std::sin(3.0 * q.center(i));
  const FunctionalSpec var = FunctionalSpec::variance();
  double direct = 0.0;
  for (std::size_t i = 0; i < q.n_cells(); ++i) direct += linear_derivative(var, mu, q.center(i)) * q.values[i] * q.h();
  EXPECT_NEAR(pair_first(var, mu, q), direct, 1e-12);
  const GridDensity zero = GridDensity::zeros_like(mu);
  EXPECT_EQ(pair_second(var, mu, zero, zero), 0.0);
}

// Mass-free directions keep mu + e q a unit-mass perturbation.
TEST(Functionals, PairingsAreDirectionalDerivatives) {
  const GridDensity mu = GridDensity::uniform_law(-1.0, 1.0, 400, -0.3, 0.5);
  GridDensity q1 = GridDensity::zeros_like(mu), q2 = q1;
  for (std::size_t i = 0; i < mu.n_cells(); ++i) {
    const double x = mu.center(i);
    q1.values[i] = std::sin(3.0 * x);
    q2.values[i] = x * x - 1.0 / 3.0 + 0.2 * std::cos(5.0 * x);
  }
  const double m2 = q2.mass() / 2.0;
  for (auto& v : q2.values) v -= m2;
  ASSERT_NEAR(q1.mass(), 0.0, 1e-12);
  ASSERT_NEAR(q2.mass(), 0.0, 1e-12);
  const FunctionalSpec specs[] = {FunctionalSpec::variance(), FunctionalSpec::centered_moment({0.0, 0.0, 1.0, 2.0}),
                                  FunctionalSpec::centered_fw(4.5)};
  for (const auto& s : specs) {
    auto phi = [&](double a, double b) {
      GridDensity m = mu;
      for (std::size_t i = 0; i < m.n_cells(); ++i) m.values[i] += a * q1.values[i] + b * q2.values[i];
      return eval_phi(s, m);
    };
    const double e = 1e-4;
    const double first = (phi(e, 0) - phi(-e, 0)) / (2 * e);
    const double mixed = (phi(e, e) - phi(e, -e) - phi(-e, e) + phi(-e, -e)) / (4 * e * e);
    const double scale = std::max(1.0, std::abs(pair_second(s, mu, q1, q2)));
    EXPECT_NEAR(pair_first(s, mu, q1), first, 1e-6) << s.name();
    EXPECT_NEAR(pair_second(s, mu, q1, q2), mixed, 1e-4 * scale) << s.name();
    EXPECT_NEAR(pair_second(s, mu, q1, q2), pair_second(s, mu, q2, q1), 1e-12 * scale) << s.name();
  }
}

TEST(Functionals, RejectsUnsupportedDimension) {
  EXPECT_THROW(FunctionalSpec::centered_moment({0.0, 0.0, 1.0}).validate(2), std::invalid_argument);
}
