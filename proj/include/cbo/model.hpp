#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbo/jet.hpp"

namespace cbo {

using Point = std::vector<double>;

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

// Objective with its growth constants: E(x) - e_min >= c_E |x - x*|^2 and
// every second partial derivative bounded by ell_E.
struct ObjectiveSpec {
  std::size_t dim = 1;
  std::function<double(std::span<const double>)> eval;
  Point minimizer;
  double e_min = 0.0;
  double c_E = 1.0;
  double ell_E = 2.0;
  std::string name;

  double operator()(std::span<const double> x) const { return eval(x); }
  double operator()(double x) const { return eval(std::span<const double>(&x, 1)); }
};

inline ObjectiveSpec quadratic_objective(Point x_star, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("quadratic_objective: scale must be positive");
  if (x_star.empty()) throw std::invalid_argument("quadratic_objective: empty minimizer");
  ObjectiveSpec obj;
  obj.dim = x_star.size();
  obj.minimizer = x_star;
  obj.e_min = 0.0;
  obj.c_E = scale;
  obj.ell_E = 2.0 * scale;
  obj.name = "quadratic";
  obj.eval = [x_star = std::move(x_star), scale](std::span<const double> x) {
    return scale * squared_distance(x, x_star);
  };
  return obj;
}

// Radical-inverse Halton point in [0,1)^d.
inline void halton_point(std::size_t index, std::span<double> out) {
  static constexpr std::array<unsigned, 16> primes{2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
  if (out.size() > primes.size()) throw std::invalid_argument("halton_point: dimension too large");
  for (std::size_t k = 0; k < out.size(); ++k) {
    const unsigned b = primes[k];
    double f = 1.0, r = 0.0;
    for (std::size_t i = index; i > 0; i /= b) {
      f /= b;
      r += f * static_cast<double>(i % b);
    }
    out[k] = r;
  }
}

struct Certification {
  bool ok = true;
  std::size_t samples = 0;
  double worst_growth_margin = 0.0;  // min over samples of E - e_min - c_E|x-x*|^2
  double gradient_norm = 0.0;        // central-difference gradient at x*
  double max_hessian_entry = 0.0;
  std::string message;
};

// Sample-based check of the objective constants on quasi-random points of
// the ball B(center, radius).
inline Certification certify(const ObjectiveSpec& obj, std::span<const double> center, double radius,
                             std::size_t n_samples = 100000) {
  const std::size_t d = obj.dim;
  if (center.size() != d || obj.minimizer.size() != d)
    throw std::invalid_argument("certify: dimension mismatch");
  Certification rep;
  auto fail = [&](std::string msg) {
    if (rep.ok) rep.message = std::move(msg);
    rep.ok = false;
  };
  if (obj.e_min < 0.0) fail("e_min is negative");
  if (!(obj.c_E > 0.0) || !(obj.ell_E > 0.0)) fail("growth constants must be positive");
  const double e_star = obj(std::span<const double>(obj.minimizer));
  if (std::abs(e_star - obj.e_min) > 1e-12 * std::max(1.0, std::abs(obj.e_min)))
    fail("E(x*) differs from e_min");

  Point x(obj.minimizer), xp(d), xm(d);
  const double hg = 1e-5;
  double g2 = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    xp = x;
    xm = x;
    xp[k] += hg;
    xm[k] -= hg;
    const double g = (obj(std::span<const double>(xp)) - obj(std::span<const double>(xm))) / (2 * hg);
    g2 += g * g;
  }
  rep.gradient_norm = std::sqrt(g2);
  if (rep.gradient_norm > 1e-6) fail("gradient at the minimizer exceeds 1e-6");

  const std::size_t hessian_samples = std::min<std::size_t>(n_samples, 2000);
  const double hh = 1e-4;
  rep.worst_growth_margin = std::numeric_limits<double>::infinity();
  Point u(d), y(d);
  std::size_t index = 1;
  while (rep.samples < n_samples) {
    halton_point(index++, u);
    double r2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      y[k] = center[k] + radius * (2.0 * u[k] - 1.0);
      r2 += (y[k] - center[k]) * (y[k] - center[k]);
    }
    if (r2 > radius * radius) continue;
    ++rep.samples;
    const double e = obj(std::span<const double>(y));
    if (!std::isfinite(e)) {
      fail("non-finite objective value");
      break;
    }
    const double margin = e - obj.e_min - obj.c_E * squared_distance(y, obj.minimizer);
    rep.worst_growth_margin = std::min(rep.worst_growth_margin, margin);
    if (margin < -1e-12 * std::max(1.0, std::abs(e))) fail("quadratic growth bound violated");

    if (rep.samples <= hessian_samples) {
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
          auto at = [&](double si, double sj) {
            Point z(y);
            z[i] += si * hh;
            z[j] += sj * hh;
            return obj(std::span<const double>(z));
          };
          double h;
          if (i == j)
            h = (at(0.5, 0.5) - 2.0 * e + at(-0.5, -0.5)) / (hh * hh);
          else
            h = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * hh * hh);
          rep.max_hessian_entry = std::max(rep.max_hessian_entry, std::abs(h));
        }
      }
    }
  }
  if (rep.max_hessian_entry > obj.ell_E * (1.0 + 1e-4) + 1e-6) fail("second derivative exceeds ell_E");
  return rep;
}

// Smooth step psi(u) = f(u) / (f(u) + f(1-u)), f(u) = exp(-1/u) for u > 0.
inline double smooth_transition(double u) {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / u), b = std::exp(-1.0 / (1.0 - u));
  return a / (a + b);
}

template <int K>
Jet<K> smooth_transition(const Jet<K>& u) {
  if (u.value() <= 0.0) return Jet<K>{};
  if (u.value() >= 1.0) return Jet<K>::constant(1.0);
  const Jet<K> one = Jet<K>::constant(1.0);
  const Jet<K> a = exp(-(one / u));
  const Jet<K> b = exp(-(one / (one - u)));
  return a / (a + b);
}

inline constexpr int kCutoffOrders = 7;  // derivative orders 0..6

// Radial bump equal to 1 on B(c, r) and 0 outside B(c, 2r).
struct CutoffBump {
  Point center;
  double inner_radius = 1.0;
  std::array<double, kCutoffOrders> derivative_constants{};

  double radial(double rho) const { return smooth_transition((2.0 * inner_radius - rho) / inner_radius); }

  double operator()(std::span<const double> x) const {
    return radial(std::sqrt(squared_distance(x, center)));
  }
  double operator()(double x) const { return radial(std::abs(x - center[0])); }

  // Taylor jet of the 1D bump (or of the radial profile along a ray).
  template <int K>
  Jet<K> jet(const Jet<K>& x) const {
    const Jet<K> rho = abs(x - center[0]);
    return smooth_transition((2.0 * inner_radius - rho) * (1.0 / inner_radius));
  }
};

// Measures r^k max|d^k phi| on a dense sample of the transition shell.
inline std::array<double, kCutoffOrders> measure_cutoff_constants(const CutoffBump& bump,
                                                                  std::size_t n_grid = 20001) {
  std::array<double, kCutoffOrders> c{};
  c[0] = 1.0;
  const double r = bump.inner_radius, c0 = bump.center[0];
  for (std::size_t i = 0; i < n_grid; ++i) {
    const double x = c0 + r + r * static_cast<double>(i) / static_cast<double>(n_grid - 1);
    const Jet<6> j = bump.jet(Jet<6>::variable(x));
    double rk = 1.0;
    for (int k = 0; k < kCutoffOrders; ++k) {
      c[k] = std::max(c[k], rk * std::abs(j.derivative(k)));
      rk *= r;
    }
  }
  return c;
}

inline CutoffBump make_cutoff(Point c, double r) {
  if (!(r > 0.0)) throw std::invalid_argument("make_cutoff: radius must be positive");
  if (c.empty()) throw std::invalid_argument("make_cutoff: empty center");
  CutoffBump bump;
  bump.center = std::move(c);
  bump.inner_radius = r;
  bump.derivative_constants = measure_cutoff_constants(bump);
  return bump;
}

inline std::vector<double> uniform_time_grid(double horizon, std::size_t n_points) {
  if (n_points == 0) return {};
  if (n_points == 1 || horizon == 0.0) return {0.0};
  std::vector<double> t(n_points);
  for (std::size_t i = 0; i < n_points; ++i)
    t[i] = horizon * static_cast<double>(i) / static_cast<double>(n_points - 1);
  t.back() = horizon;
  return t;
}

struct CboParams {
  double lambda = 1.0;
  double sigma = 0.0;
  double alpha = 1.0;
  std::size_t dim = 1;
  Point c0{0.0};
  double r_cut = 1.0;
  double dt = 1e-3;
  double horizon = 1.0;
  std::vector<double> snapshot_times{0.0, 1.0};
  std::size_t n_particles = 2;

  static double default_dt(double lambda) { return 1e-3 * std::min(1.0, 1.0 / lambda); }

  void validate() const {
    auto bad = [](const std::string& m) { throw std::invalid_argument("CboParams: " + m); };
    if (!(lambda > 0.0)) bad("lambda must be positive");
    if (!(sigma >= 0.0)) bad("sigma must be nonnegative");
    if (!(alpha >= 0.0)) bad("alpha must be nonnegative");
    if (dim == 0 || c0.size() != dim) bad("c0 must have dim entries");
    if (!(r_cut > 0.0)) bad("r_cut must be positive");
    if (!(dt > 0.0)) bad("dt must be positive");
    if (!(horizon >= 0.0)) bad("horizon must be nonnegative");
    if (horizon > 0.0 && dt > horizon) bad("dt exceeds horizon");
    if (n_particles < 2) bad("n_particles must be at least 2");
    if (snapshot_times.empty()) bad("snapshot grid is empty");
    for (std::size_t i = 0; i < snapshot_times.size(); ++i) {
      if (snapshot_times[i] < 0.0 || snapshot_times[i] > horizon) bad("snapshot time outside [0, horizon]");
      if (i > 0 && !(snapshot_times[i] > snapshot_times[i - 1])) bad("snapshot times must increase");
    }
  }
};

inline double required_lambda(const CboParams& p, const ObjectiveSpec& obj) {
  const double d = static_cast<double>(p.dim);
  const double s = obj.c_E * p.alpha * p.r_cut * p.r_cut;
  return d * p.sigma * p.sigma * std::exp(18.0 * s - p.alpha * obj.e_min) +
         4.0 * p.r_cut * p.r_cut * std::exp(9.0 * s);
}

struct KappaResult {
  double value = 0.0;
  double required_lambda = 0.0;
  bool below_gate = false;  // lambda does not exceed required_lambda
};

inline KappaResult kappa(const CboParams& p, const ObjectiveSpec& obj) {
  const double d = static_cast<double>(p.dim);
  KappaResult k;
  k.value = 2.0 * (p.lambda - d * p.sigma * p.sigma *
                                  std::exp(9.0 * p.alpha * obj.c_E * p.r_cut * p.r_cut - p.alpha * obj.e_min));
  k.required_lambda = required_lambda(p, obj);
  k.below_gate = !(p.lambda > k.required_lambda);
  return k;
}

}  // namespace cbo
