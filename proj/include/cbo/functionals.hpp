#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbo/measures.hpp"

namespace cbo {

enum class FunctionalKind { variance, centered_fw, centered_moment };

// Test functional Phi. centered_moment uses the polynomial
// g(u) = sum_k coeffs[k] u^k of degree at most 6 (one dimension).
struct FunctionalSpec {
  FunctionalKind kind = FunctionalKind::variance;
  double s = 4.5;
  QuadratureSpec quad{};
  std::vector<double> coeffs;
  std::optional<double> declared_c_phi;

  static FunctionalSpec variance() { return {}; }
  static FunctionalSpec centered_fw(double s, QuadratureSpec quad = {}) {
    FunctionalSpec f;
    f.kind = FunctionalKind::centered_fw;
    f.s = s;
    f.quad = quad;
    return f;
  }
  static FunctionalSpec centered_moment(std::vector<double> coeffs) {
    FunctionalSpec f;
    f.kind = FunctionalKind::centered_moment;
    f.coeffs = std::move(coeffs);
    return f;
  }

  std::string name() const {
    switch (kind) {
      case FunctionalKind::variance: return "variance";
      case FunctionalKind::centered_fw: return "centered_fw";
      case FunctionalKind::centered_moment: return "centered_moment";
    }
    return "unknown";
  }

  void validate(std::size_t dim) const {
    if (kind == FunctionalKind::centered_fw) {
      quad.validate();
      if (!(s > 0.5 * (static_cast<double>(dim) + 7.0)))
        throw std::invalid_argument("centered_fw: need s > (d + 7) / 2");
      if (dim > 2) throw std::invalid_argument("centered_fw: only d <= 2 is supported");
    }
    if (kind == FunctionalKind::centered_moment) {
      if (coeffs.empty() || coeffs.size() > 7) throw std::invalid_argument("centered_moment: need degree 0..6");
      if (dim != 1) throw std::invalid_argument("centered_moment: only d = 1 is supported");
    }
  }
};

namespace detail {

inline double poly(std::span<const double> c, double u, int deriv = 0) {
  double v = 0.0;
  for (std::size_t k = c.size(); k-- > static_cast<std::size_t>(deriv);) {
    double f = 1.0;
    for (int j = 0; j < deriv; ++j) f *= static_cast<double>(k - static_cast<std::size_t>(j));
    v = v * u + f * c[k];
  }
  return v;
}

// Atoms (x_j, w_j) of a 1D measure with weights normalized to total mass 1.
struct Atoms1d {
  std::vector<double> x, w;
  double mean = 0.0;
};

inline Atoms1d normalized_atoms(const EmpiricalMeasure& mu) {
  if (mu.dim != 1) throw std::invalid_argument("functional: expected a one-dimensional measure");
  Atoms1d a;
  atoms_1d(mu, a.x, a.w);
  a.mean = mean(mu)[0];
  return a;
}

inline Atoms1d normalized_atoms(const GridDensity& g) {
  Atoms1d a;
  atoms_1d(g, a.x, a.w);
  const double m = compensated_sum(a.w);
  for (auto& v : a.w) v /= m;
  a.mean = mean(g);
  return a;
}

// Transform of the centred measure, H(xi) = sum w_j e^{-i 2 pi xi (x_j - m)}.
struct CenteredSpectrum {
  HalfLineRule rule;
  std::vector<std::complex<double>> H;
  double mean = 0.0;
  double s = 0.0;

  double weight(std::size_t k) const {
    return 2.0 * rule.weights[k] * sobolev_weight(rule.nodes[k] * rule.nodes[k], s);
  }
  double kappa(std::size_t k) const { return 2.0 * std::numbers::pi * rule.nodes[k]; }
};

inline CenteredSpectrum centered_spectrum(const Atoms1d& a, double s, const QuadratureSpec& quad) {
  CenteredSpectrum sp;
  sp.rule = make_half_line_rule(quad);
  sp.mean = a.mean;
  sp.s = s;
  sp.H.assign(sp.rule.nodes.size(), {});
  accumulate_transform_1d(a.x, a.w, a.mean, sp.rule, 1.0, sp.H);
  return sp;
}

inline std::vector<std::complex<double>> shifted_transform(const GridDensity& q, const CenteredSpectrum& sp) {
  std::vector<double> x, w;
  atoms_1d(q, x, w);
  std::vector<std::complex<double>> out(sp.rule.nodes.size());
  accumulate_transform_1d(x, w, sp.mean, sp.rule, 1.0, out);
  return out;
}

template <class Measure>
double eval_fw(const Measure& mu, double s, const QuadratureSpec& quad) {
  const CenteredSpectrum sp = centered_spectrum(normalized_atoms(mu), s, quad);
  NeumaierSum acc;
  for (std::size_t k = 0; k < sp.H.size(); ++k) acc.add(sp.weight(k) * std::norm(sp.H[k] - 1.0));
  return acc.value();
}

}  // namespace detail

template <class Measure>
double eval_phi(const FunctionalSpec& spec, const Measure& mu) {
  if constexpr (std::is_same_v<Measure, EmpiricalMeasure>) {
    spec.validate(mu.dim);
    if (spec.kind == FunctionalKind::variance) return variance(mu);
    if (spec.kind == FunctionalKind::centered_fw && mu.dim == 2) {
      const EmpiricalMeasure c = center(mu);
      return sobolev_dual_norm(c, EmpiricalMeasure::dirac(Point(2, 0.0)), spec.s, spec.quad).squared;
    }
  } else {
    spec.validate(1);
    if (spec.kind == FunctionalKind::variance) return variance(mu);
  }
  if (spec.kind == FunctionalKind::centered_fw) return detail::eval_fw(mu, spec.s, spec.quad);
  const detail::Atoms1d a = detail::normalized_atoms(mu);
  NeumaierSum acc;
  for (std::size_t j = 0; j < a.x.size(); ++j) acc.add(a.w[j] * detail::poly(spec.coeffs, a.x[j] - a.mean));
  return acc.value();
}

// delta Phi / delta m (mu, y), normalized so that the Gateaux derivative in
// direction delta_y - mu is linear_derivative(y) - <linear_derivative, mu>.
template <class Measure>
double linear_derivative(const FunctionalSpec& spec, const Measure& mu, double y) {
  spec.validate(1);
  const detail::Atoms1d a = detail::normalized_atoms(mu);
  const double u = y - a.mean;
  switch (spec.kind) {
    case FunctionalKind::variance:
      return u * u;
    case FunctionalKind::centered_moment: {
      double g1 = 0.0;
      for (std::size_t j = 0; j < a.x.size(); ++j) g1 += a.w[j] * detail::poly(spec.coeffs, a.x[j] - a.mean, 1);
      return detail::poly(spec.coeffs, u) - g1 * u;
    }
    case FunctionalKind::centered_fw: {
      const detail::CenteredSpectrum sp = detail::centered_spectrum(a, spec.s, spec.quad);
      NeumaierSum acc;
      for (std::size_t k = 0; k < sp.H.size(); ++k) {
        const double kap = sp.kappa(k);
        const std::complex<double> e = std::polar(1.0, -kap * u);
        const std::complex<double> t = std::conj(sp.H[k] - 1.0) * (e + std::complex<double>(0.0, kap * u) * sp.H[k]);
        acc.add(2.0 * sp.weight(k) * t.real());
      }
      return acc.value();
    }
  }
  throw std::invalid_argument("linear_derivative: unsupported functional");
}

// Derivative of linear_derivative(., y1) in direction delta_{y2} - mu. As a
// bilinear form on mass-free perturbations it is the second derivative; the
// variance case is -2 (y1 - mean) y2.
template <class Measure>
double second_derivative(const FunctionalSpec& spec, const Measure& mu, double y1, double y2) {
  spec.validate(1);
  const detail::Atoms1d a = detail::normalized_atoms(mu);
  const double a1 = y1 - a.mean, b2 = y2 - a.mean;
  switch (spec.kind) {
    case FunctionalKind::variance:
      return -2.0 * a1 * y2;
    case FunctionalKind::centered_moment: {
      double g1 = 0.0, g2 = 0.0;
      for (std::size_t j = 0; j < a.x.size(); ++j) {
        g1 += a.w[j] * detail::poly(spec.coeffs, a.x[j] - a.mean, 1);
        g2 += a.w[j] * detail::poly(spec.coeffs, a.x[j] - a.mean, 2);
      }
      (void)g1;
      return -detail::poly(spec.coeffs, a1, 1) * b2 - detail::poly(spec.coeffs, b2, 1) * a1 + g2 * a1 * b2;
    }
    case FunctionalKind::centered_fw: {
      const detail::CenteredSpectrum sp = detail::centered_spectrum(a, spec.s, spec.quad);
      const std::complex<double> I(0.0, 1.0);
      NeumaierSum acc;
      for (std::size_t k = 0; k < sp.H.size(); ++k) {
        const double kap = sp.kappa(k);
        const std::complex<double> H = sp.H[k];
        const std::complex<double> e1 = std::polar(1.0, -kap * a1), e2 = std::polar(1.0, -kap * b2);
        const std::complex<double> dH = e2 - H + I * kap * b2 * H;
        const std::complex<double> t = std::conj(dH) * (e1 + I * kap * a1 * H) +
                                       std::conj(H - 1.0) * (I * kap * b2 * e1 - I * kap * b2 * H + I * kap * a1 * dH);
        acc.add(2.0 * sp.weight(k) * t.real());
      }
      return acc.value();
    }
  }
  throw std::invalid_argument("second_derivative: unsupported functional");
}

// <delta Phi / delta m (mu, .), q> for a grid background and grid q.
inline double pair_first(const FunctionalSpec& spec, const GridDensity& mu, const GridDensity& q) {
  spec.validate(1);
  require_grid_match(mu, q, "pair_first");
  const detail::Atoms1d a = detail::normalized_atoms(mu);
  const double h = q.h();
  switch (spec.kind) {
    case FunctionalKind::variance: {
      NeumaierSum acc;
      for (std::size_t i = 0; i < q.n_cells(); ++i) {
        const double u = q.center(i) - a.mean;
        acc.add(u * u * q.values[i]);
      }
      return acc.value() * h;
    }
    case FunctionalKind::centered_moment: {
      double g1 = 0.0;
      for (std::size_t j = 0; j < a.x.size(); ++j) g1 += a.w[j] * detail::poly(spec.coeffs, a.x[j] - a.mean, 1);
      NeumaierSum acc;
      for (std::size_t i = 0; i < q.n_cells(); ++i) {
        const double u = q.center(i) - a.mean;
        acc.add((detail::poly(spec.coeffs, u) - g1 * u) * q.values[i]);
      }
      return acc.value() * h;
    }
    case FunctionalKind::centered_fw: {
      const detail::CenteredSpectrum sp = detail::centered_spectrum(a, spec.s, spec.quad);
      const std::vector<std::complex<double>> Q = detail::shifted_transform(q, sp);
      double A = 0.0;
      for (std::size_t i = 0; i < q.n_cells(); ++i) A += (q.center(i) - a.mean) * q.values[i] * h;
      const std::complex<double> I(0.0, 1.0);
      NeumaierSum acc;
      for (std::size_t k = 0; k < Q.size(); ++k) {
        const double kap = sp.kappa(k);
        acc.add(2.0 * sp.weight(k) * (std::conj(sp.H[k] - 1.0) * (Q[k] + I * kap * A * sp.H[k])).real());
      }
      return acc.value();
    }
  }
  throw std::invalid_argument("pair_first: unsupported functional");
}

// <second_derivative(mu; ., .), q1 (x) q2>.
inline double pair_second(const FunctionalSpec& spec, const GridDensity& mu, const GridDensity& q1,
                          const GridDensity& q2) {
  spec.validate(1);
  require_grid_match(mu, q1, "pair_second");
  require_grid_match(mu, q2, "pair_second");
  const detail::Atoms1d a = detail::normalized_atoms(mu);
  const double h = mu.h();
  double A1 = 0.0, A2 = 0.0, X2 = 0.0, m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < mu.n_cells(); ++i) {
    const double x = mu.center(i);
    A1 += (x - a.mean) * q1.values[i] * h;
    A2 += (x - a.mean) * q2.values[i] * h;
    X2 += x * q2.values[i] * h;
    m1 += q1.values[i] * h;
    m2 += q2.values[i] * h;
  }
  switch (spec.kind) {
    case FunctionalKind::variance:
      return -2.0 * A1 * X2;
    case FunctionalKind::centered_moment: {
      double g2 = 0.0;
      for (std::size_t j = 0; j < a.x.size(); ++j) g2 += a.w[j] * detail::poly(spec.coeffs, a.x[j] - a.mean, 2);
      double G1 = 0.0, G2 = 0.0;  // <g'(. - m), q1>, <g'(. - m), q2>
      for (std::size_t i = 0; i < mu.n_cells(); ++i) {
        const double u = mu.center(i) - a.mean;
        G1 += detail::poly(spec.coeffs, u, 1) * q1.values[i] * h;
        G2 += detail::poly(spec.coeffs, u, 1) * q2.values[i] * h;
      }
      return -G1 * A2 - G2 * A1 + g2 * A1 * A2;
    }
    case FunctionalKind::centered_fw: {
      const detail::CenteredSpectrum sp = detail::centered_spectrum(a, spec.s, spec.quad);
      const std::vector<std::complex<double>> Q1 = detail::shifted_transform(q1, sp);
      const std::vector<std::complex<double>> Q2 = detail::shifted_transform(q2, sp);
      const std::complex<double> I(0.0, 1.0);
      NeumaierSum acc;
      for (std::size_t k = 0; k < Q1.size(); ++k) {
        const double kap = sp.kappa(k);
        const std::complex<double> H = sp.H[k];
        const std::complex<double> dH = Q2[k] - m2 * H + I * kap * A2 * H;
        const std::complex<double> t =
            std::conj(dH) * (Q1[k] + I * kap * A1 * H) +
            std::conj(H - 1.0) * (I * kap * A2 * Q1[k] - I * kap * A2 * m1 * H + I * kap * A1 * dH);
        acc.add(2.0 * sp.weight(k) * t.real());
      }
      return acc.value();
    }
  }
  throw std::invalid_argument("pair_second: unsupported functional");
}

// max over coordinates of |Phi(mu shifted by -h) - Phi(mu shifted by +h)| / (2h)
inline double check_translation_invariance(const std::function<double(const EmpiricalMeasure&)>& phi,
                                           const EmpiricalMeasure& mu, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("check_translation_invariance: h must be positive");
  double worst = 0.0;
  Point z(mu.dim, 0.0);
  for (std::size_t k = 0; k < mu.dim; ++k) {
    z.assign(mu.dim, 0.0);
    z[k] = -h;
    const double minus = phi(translate(mu, z));
    z[k] = h;
    const double plus = phi(translate(mu, z));
    worst = std::max(worst, std::abs((minus - plus) / (2.0 * h)));
  }
  return worst;
}

inline double check_translation_invariance(const FunctionalSpec& spec, const EmpiricalMeasure& mu, double h) {
  return check_translation_invariance([&](const EmpiricalMeasure& m) { return eval_phi(spec, m); }, mu, h);
}

struct RegularityReport {
  std::array<double, 7> max_abs{};  // sup over samples of |d^k/dy^k delta Phi / delta m|
  double sup = 0.0;
  std::optional<double> declared;
  bool within_declared = true;
  bool sampled = true;  // a sampled bound, not a proof
};

// Finite-difference estimates of y-derivatives (orders 0..6) of
// delta Phi / delta m at the probe points.
inline RegularityReport check_regularity(const FunctionalSpec& spec, std::span<const EmpiricalMeasure> samples,
                                         std::span<const double> probes, double step = 0.05) {
  RegularityReport rep;
  rep.declared = spec.declared_c_phi;
  for (const auto& mu : samples) {
    for (double y : probes) {
      for (int k = 0; k <= 6; ++k) {
        double acc = 0.0, binom = 1.0;
        for (int j = 0; j <= k; ++j) {
          const double yj = y + (0.5 * k - j) * step;
          acc += ((j % 2) ? -binom : binom) * linear_derivative(spec, mu, yj);
          binom = binom * (k - j) / (j + 1);
        }
        const double dk = std::abs(acc / std::pow(step, k));
        rep.max_abs[k] = std::max(rep.max_abs[k], dk);
      }
    }
  }
  for (double v : rep.max_abs) rep.sup = std::max(rep.sup, v);
  if (rep.declared) rep.within_declared = rep.sup <= *rep.declared;
  return rep;
}

}  // namespace cbo
