#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "cbo/model.hpp"
#include "cbo/rng.hpp"
#include "cbo/stats.hpp"

namespace cbo {

// Weighted point cloud; points stored row-major (size() x dim).
struct EmpiricalMeasure {
  std::size_t dim = 1;
  std::vector<double> points;
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
  std::span<const double> point(std::size_t i) const { return {points.data() + i * dim, dim}; }
  std::span<double> point(std::size_t i) { return {points.data() + i * dim, dim}; }
  double total_weight() const { return compensated_sum(weights); }

  static EmpiricalMeasure uniform(std::vector<double> pts, std::size_t dim = 1) {
    if (dim == 0 || pts.size() % dim != 0) throw std::invalid_argument("EmpiricalMeasure: bad point array");
    EmpiricalMeasure m;
    m.dim = dim;
    const std::size_t n = pts.size() / dim;
    m.points = std::move(pts);
    m.weights.assign(n, 1.0 / static_cast<double>(n));
    return m;
  }
  static EmpiricalMeasure dirac(const Point& z) { return uniform(std::vector<double>(z), z.size()); }
};

// Density on a uniform cell-centred grid over [lo, hi]. Signed states of the
// linearized equations use the same type.
struct GridDensity {
  double lo = -1.0, hi = 1.0;
  std::vector<double> values;

  std::size_t n_cells() const { return values.size(); }
  double h() const { return (hi - lo) / static_cast<double>(values.size()); }
  double center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * h(); }
  double mass() const { return compensated_sum(values) * h(); }
  bool same_grid(const GridDensity& o) const { return lo == o.lo && hi == o.hi && n_cells() == o.n_cells(); }

  static GridDensity zeros(double lo, double hi, std::size_t n) {
    if (n == 0 || !(hi > lo)) throw std::invalid_argument("GridDensity: bad grid");
    return GridDensity{lo, hi, std::vector<double>(n, 0.0)};
  }
  static GridDensity zeros_like(const GridDensity& g) { return zeros(g.lo, g.hi, g.n_cells()); }

  // Cell averages of the uniform law on [a, b].
  static GridDensity uniform_law(double lo, double hi, std::size_t n, double a, double b) {
    if (!(b > a)) throw std::invalid_argument("GridDensity::uniform_law: empty interval");
    GridDensity g = zeros(lo, hi, n);
    const double h = g.h();
    for (std::size_t i = 0; i < n; ++i) {
      const double l = lo + static_cast<double>(i) * h, r = l + h;
      const double overlap = std::max(0.0, std::min(r, b) - std::max(l, a));
      g.values[i] = overlap / (h * (b - a));
    }
    return g;
  }
};

inline void require_grid_match(const GridDensity& a, const GridDensity& b, const char* who) {
  if (!a.same_grid(b)) throw std::invalid_argument(std::string(who) + ": grid mismatch");
}

// <f, q> = sum f_i q_i h
inline double pair(std::span<const double> f, const GridDensity& q) {
  if (f.size() != q.n_cells()) throw std::invalid_argument("pair: grid mismatch");
  NeumaierSum s;
  for (std::size_t i = 0; i < f.size(); ++i) s.add(f[i] * q.values[i]);
  return s.value() * q.h();
}

inline std::vector<double> grid_centers(const GridDensity& g) {
  std::vector<double> x(g.n_cells());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = g.center(i);
  return x;
}

inline Point mean(const EmpiricalMeasure& mu) {
  Point m(mu.dim, 0.0);
  for (std::size_t k = 0; k < mu.dim; ++k) {
    NeumaierSum s;
    for (std::size_t i = 0; i < mu.size(); ++i) s.add(mu.weights[i] * mu.points[i * mu.dim + k]);
    m[k] = s.value();
  }
  return m;
}

inline double mean(const GridDensity& g) {
  NeumaierSum s, w;
  for (std::size_t i = 0; i < g.n_cells(); ++i) {
    s.add(g.center(i) * g.values[i]);
    w.add(g.values[i]);
  }
  return s.value() / w.value();
}

// Weighted mean with weights w_i exp(-alpha (E_i - min E)), the minimum taken
// over the support so that the largest weight is exactly w_i.
inline Point consensus(const EmpiricalMeasure& mu, const ObjectiveSpec& obj, double alpha) {
  if (mu.size() == 0) throw std::invalid_argument("consensus: empty measure");
  std::vector<double> e(mu.size());
  double e_min = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < mu.size(); ++i) {
    e[i] = obj(mu.point(i));
    if (!std::isfinite(e[i])) throw std::invalid_argument("consensus: non-finite objective value");
    if (mu.weights[i] > 0.0) e_min = std::min(e_min, e[i]);
  }
  if (!std::isfinite(e_min)) throw std::invalid_argument("consensus: measure has no mass");
  Point m(mu.dim, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double w = mu.weights[i] * std::exp(-alpha * (e[i] - e_min));
    z += w;
    for (std::size_t k = 0; k < mu.dim; ++k) m[k] += w * mu.points[i * mu.dim + k];
  }
  for (auto& v : m) v /= z;
  return m;
}

inline double consensus(const GridDensity& g, const ObjectiveSpec& obj, double alpha) {
  double e_min = std::numeric_limits<double>::infinity();
  std::vector<double> e(g.n_cells());
  for (std::size_t i = 0; i < g.n_cells(); ++i) {
    e[i] = obj(g.center(i));
    if (!std::isfinite(e[i])) throw std::invalid_argument("consensus: non-finite objective value");
    if (g.values[i] > 0.0) e_min = std::min(e_min, e[i]);
  }
  if (!std::isfinite(e_min)) throw std::invalid_argument("consensus: measure has no mass");
  double num = 0.0, z = 0.0;
  for (std::size_t i = 0; i < g.n_cells(); ++i) {
    if (g.values[i] <= 0.0) continue;
    const double w = g.values[i] * std::exp(-alpha * (e[i] - e_min));
    z += w;
    num += w * g.center(i);
  }
  return num / z;
}

inline EmpiricalMeasure translate(EmpiricalMeasure mu, std::span<const double> z) {
  for (std::size_t i = 0; i < mu.size(); ++i)
    for (std::size_t k = 0; k < mu.dim; ++k) mu.points[i * mu.dim + k] += z[k];
  return mu;
}

// Pushforward under x -> x - mean. A measure whose mean is already zero up to
// rounding is returned unchanged, which makes the map idempotent.
inline EmpiricalMeasure center(const EmpiricalMeasure& mu) {
  const Point m = mean(mu);
  double scale = 0.0;
  for (double v : mu.points) scale = std::max(scale, std::abs(v));
  bool centred = true;
  for (double v : m) centred = centred && std::abs(v) <= 8.0 * std::numeric_limits<double>::epsilon() * scale;
  if (centred) return mu;
  Point shift(m);
  for (auto& v : shift) v = -v;
  return translate(mu, shift);
}

inline double variance(const EmpiricalMeasure& mu) {
  const Point m = mean(mu);
  NeumaierSum s;
  for (std::size_t i = 0; i < mu.size(); ++i) s.add(mu.weights[i] * squared_distance(mu.point(i), m));
  return s.value();
}

inline double variance(const GridDensity& g) {
  const double m = mean(g);
  NeumaierSum s, w;
  for (std::size_t i = 0; i < g.n_cells(); ++i) {
    const double d = g.center(i) - m;
    s.add(d * d * g.values[i]);
    w.add(g.values[i]);
  }
  return s.value() / w.value();
}

inline double w2_centered_to_delta0(const EmpiricalMeasure& mu) { return std::sqrt(variance(mu)); }

inline std::complex<double> fourier(const EmpiricalMeasure& mu, std::span<const double> xi) {
  if (xi.size() != mu.dim) throw std::invalid_argument("fourier: frequency dimension mismatch");
  double re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    double phase = 0.0;
    for (std::size_t k = 0; k < mu.dim; ++k) phase += xi[k] * mu.points[i * mu.dim + k];
    phase *= -2.0 * std::numbers::pi;
    re += mu.weights[i] * std::cos(phase);
    im += mu.weights[i] * std::sin(phase);
  }
  return {re, im};
}

inline std::complex<double> fourier(const EmpiricalMeasure& mu, double xi) {
  return fourier(mu, std::span<const double>(&xi, 1));
}

inline std::complex<double> fourier(const GridDensity& g, double xi) {
  double re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < g.n_cells(); ++i) {
    const double phase = -2.0 * std::numbers::pi * xi * g.center(i);
    re += g.values[i] * std::cos(phase);
    im += g.values[i] * std::sin(phase);
  }
  return {re * g.h(), im * g.h()};
}

enum class QuadratureRule { trapezoid, gauss };

struct QuadratureSpec {
  double xi_max = 64.0;
  std::size_t n_nodes = 1024;
  QuadratureRule rule = QuadratureRule::trapezoid;

  void validate() const {
    if (!(xi_max > 0.0)) throw std::invalid_argument("QuadratureSpec: xi_max must be positive");
    if (n_nodes < 16) throw std::invalid_argument("QuadratureSpec: n_nodes must be at least 16");
  }
};

// Gauss-Legendre nodes and weights on [a, b] (Newton on P_n).
inline void gauss_legendre(std::size_t n, double a, double b, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (std::size_t j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / static_cast<double>(j);
      }
      pp = static_cast<double>(n) * (z * p1 - p2) / (z * z - 1.0);
      const double dz = p1 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[i] = mid - half * z;
    x[n - 1 - i] = mid + half * z;
    w[i] = w[n - 1 - i] = 2.0 * half / ((1.0 - z * z) * pp * pp);
  }
}

// Nodes and weights on [0, xi_max].
struct HalfLineRule {
  std::vector<double> nodes, weights;
  bool uniform = false;
  double spacing = 0.0;
};

inline HalfLineRule make_half_line_rule(const QuadratureSpec& q) {
  q.validate();
  HalfLineRule r;
  if (q.rule == QuadratureRule::trapezoid) {
    const std::size_t n = q.n_nodes;
    r.uniform = true;
    r.spacing = q.xi_max / static_cast<double>(n - 1);
    r.nodes.resize(n);
    r.weights.assign(n, r.spacing);
    for (std::size_t k = 0; k < n; ++k) r.nodes[k] = r.spacing * static_cast<double>(k);
    r.nodes.back() = q.xi_max;
    r.weights.front() *= 0.5;
    r.weights.back() *= 0.5;
  } else {
    gauss_legendre(q.n_nodes, 0.0, q.xi_max, r.nodes, r.weights);
  }
  return r;
}

// Adds sum_j w_j exp(-i 2 pi xi_k (x_j - shift)) at the rule nodes.
// Uniform nodes use a rotation recurrence re-anchored every 64 nodes.
inline void accumulate_transform_1d(std::span<const double> x, std::span<const double> w, double shift,
                                    const HalfLineRule& rule, double sign, std::vector<std::complex<double>>& out) {
  const std::size_t n = rule.nodes.size();
  out.resize(n);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double wj = sign * w[j];
    if (wj == 0.0) continue;
    const double y = x[j] - shift;
    if (rule.uniform) {
      const std::complex<double> rot = std::polar(1.0, -two_pi * rule.spacing * y);
      std::complex<double> cur;
      for (std::size_t k = 0; k < n; ++k) {
        if ((k & 63u) == 0) cur = std::polar(1.0, -two_pi * rule.nodes[k] * y);
        out[k] += wj * cur;
        cur *= rot;
      }
    } else {
      for (std::size_t k = 0; k < n; ++k) out[k] += wj * std::polar(1.0, -two_pi * rule.nodes[k] * y);
    }
  }
}

inline double sobolev_weight(double xi2, double s) { return std::pow(1.0 + xi2, -s); }

struct SobolevNorm {
  double norm = 0.0;
  double squared = 0.0;
  double tail_bound = 0.0;  // bound on the omitted part of `squared`
};

namespace detail {

inline double total_variation_bound(const EmpiricalMeasure& mu) {
  double s = 0.0;
  for (double w : mu.weights) s += std::abs(w);
  return s;
}
inline double total_variation_bound(const GridDensity& g) {
  double s = 0.0;
  for (double v : g.values) s += std::abs(v);
  return s * g.h();
}
inline double total_variation_of_difference(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  return total_variation_bound(a) + total_variation_bound(b);
}
inline double total_variation_of_difference(const GridDensity& a, const GridDensity& b) {
  if (!a.same_grid(b)) return total_variation_bound(a) + total_variation_bound(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.n_cells(); ++i) s += std::abs(a.values[i] - b.values[i]);
  return s * a.h();
}
inline double total_variation_of_difference(const EmpiricalMeasure& a, const GridDensity& b) {
  return total_variation_bound(a) + total_variation_bound(b);
}
inline double total_variation_of_difference(const GridDensity& a, const EmpiricalMeasure& b) {
  return total_variation_bound(a) + total_variation_bound(b);
}

inline std::size_t dim_of(const EmpiricalMeasure& m) { return m.dim; }
inline std::size_t dim_of(const GridDensity&) { return 1; }

inline void atoms_1d(const EmpiricalMeasure& m, std::vector<double>& x, std::vector<double>& w) {
  x = m.points;
  w = m.weights;
}
inline void atoms_1d(const GridDensity& g, std::vector<double>& x, std::vector<double>& w) {
  x = grid_centers(g);
  w = g.values;
  for (auto& v : w) v *= g.h();
}

// Squared (-s,2) norm of plus - minus in d = 2 by a tensor rule over the
// half plane xi_1 >= 0.
inline double sobolev_squared_2d(const EmpiricalMeasure& plus, const EmpiricalMeasure& minus, double s,
                                 const HalfLineRule& rule) {
  const std::size_t n = rule.nodes.size();
  double total = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      for (int sgn : {1, -1}) {
        if (sgn < 0 && rule.nodes[b] == 0.0) continue;
        const std::array<double, 2> xi{rule.nodes[a], sgn * rule.nodes[b]};
        const std::complex<double> f = fourier(plus, xi) - fourier(minus, xi);
        total += rule.weights[a] * rule.weights[b] * sobolev_weight(xi[0] * xi[0] + xi[1] * xi[1], s) *
                 std::norm(f);
      }
    }
  }
  return 2.0 * total;
}

}  // namespace detail

// (-s,2) norm of the signed measure plus - minus, truncated to |xi| <= xi_max.
// The integrand is even in xi, so only xi >= 0 is integrated.
template <class A, class B>
SobolevNorm sobolev_dual_norm(const A& plus, const B& minus, double s, const QuadratureSpec& quad = {}) {
  const std::size_t d = detail::dim_of(plus);
  if (d != detail::dim_of(minus)) throw std::invalid_argument("sobolev_dual_norm: dimension mismatch");
  if (!(s > 0.5 * static_cast<double>(d))) throw std::invalid_argument("sobolev_dual_norm: need s > d/2");
  const HalfLineRule rule = make_half_line_rule(quad);
  SobolevNorm out;
  if (d == 1) {
    std::vector<double> x, w;
    std::vector<std::complex<double>> f(rule.nodes.size());
    detail::atoms_1d(plus, x, w);
    accumulate_transform_1d(x, w, 0.0, rule, 1.0, f);
    detail::atoms_1d(minus, x, w);
    accumulate_transform_1d(x, w, 0.0, rule, -1.0, f);
    double total = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k)
      total += rule.weights[k] * sobolev_weight(rule.nodes[k] * rule.nodes[k], s) * std::norm(f[k]);
    out.squared = 2.0 * total;
  } else if (d == 2) {
    if constexpr (std::is_same_v<A, EmpiricalMeasure> && std::is_same_v<B, EmpiricalMeasure>) {
      if (quad.n_nodes > 512) throw std::invalid_argument("sobolev_dual_norm: at most 512 nodes per axis in d = 2");
      out.squared = detail::sobolev_squared_2d(plus, minus, s, rule);
    }
  } else {
    throw std::invalid_argument("sobolev_dual_norm: only d <= 2 is supported");
  }
  out.norm = std::sqrt(out.squared);
  const double tv = detail::total_variation_of_difference(plus, minus);
  out.tail_bound = std::pow(1.0 + quad.xi_max * quad.xi_max, -s + 0.5 * static_cast<double>(d)) * tv * tv;
  return out;
}

// Quantile coupling of two weighted 1D measures.
inline double w2_1d_atoms(std::vector<double> x, std::vector<double> wx, std::vector<double> y,
                          std::vector<double> wy) {
  auto sort_by_position = [](std::vector<double>& p, std::vector<double>& w) {
    std::vector<std::size_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    std::vector<double> ps(p.size()), ws(p.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      ps[i] = p[idx[i]];
      ws[i] = w[idx[i]];
    }
    p.swap(ps);
    w.swap(ws);
  };
  for (double v : wx)
    if (v < 0.0) throw std::invalid_argument("w2_1d: negative weight");
  for (double v : wy)
    if (v < 0.0) throw std::invalid_argument("w2_1d: negative weight");
  const double mx = compensated_sum(wx), my = compensated_sum(wy);
  if (!(mx > 0.0) || std::abs(mx - my) > 1e-9 * mx) throw std::invalid_argument("w2_1d: masses differ");
  sort_by_position(x, wx);
  sort_by_position(y, wy);
  std::size_t i = 0, j = 0;
  double ri = wx.empty() ? 0.0 : wx[0], rj = wy.empty() ? 0.0 : wy[0];
  NeumaierSum cost;
  while (i < x.size() && j < y.size()) {
    const double m = std::min(ri, rj);
    const double d = x[i] - y[j];
    cost.add(m * d * d);
    ri -= m;
    rj -= m;
    // Advance whichever side is exhausted; equal residuals advance both.
    const bool adv_i = ri <= rj, adv_j = rj <= ri;
    if (adv_i && ++i < x.size()) ri = wx[i];
    if (adv_j && ++j < y.size()) rj = wy[j];
  }
  return std::sqrt(std::max(0.0, cost.value()));
}

inline double w2_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.dim != 1 || nu.dim != 1) throw std::invalid_argument("w2_1d: measures must be one-dimensional");
  return w2_1d_atoms(mu.points, mu.weights, nu.points, nu.weights);
}

inline double w2_1d(const GridDensity& mu, const GridDensity& nu) {
  std::vector<double> x, wx, y, wy;
  detail::atoms_1d(mu, x, wx);
  detail::atoms_1d(nu, y, wy);
  return w2_1d_atoms(std::move(x), std::move(wx), std::move(y), std::move(wy));
}

// Reproducible family of smooth test functions on [lo, hi]: sinusoids,
// Legendre polynomials and Gaussian bumps. Item j depends only on (seed, j),
// so a smaller dictionary is a prefix of a larger one.
class TestDictionary {
 public:
  static constexpr int kMaxOrder = 6;
  using Derivatives = std::array<double, kMaxOrder + 1>;

  TestDictionary(double lo, double hi, std::size_t size, std::uint64_t seed) : lo_(lo), hi_(hi) {
    if (!(hi > lo)) throw std::invalid_argument("TestDictionary: empty interval");
    const rng::CounterRng gen(seed, rng::Domain::dictionary);
    items_.reserve(size);
    for (std::size_t j = 0; j < size; ++j) {
      const auto u = gen.uniform_pair(static_cast<std::uint32_t>(j), 0, 0);
      Item it;
      it.family = static_cast<int>(j % 3);
      const double len = hi - lo;
      switch (it.family) {
        case 0:  // sinusoid
          it.a = 2.0 * std::numbers::pi * (1.0 + std::floor(8.0 * u[0])) / len;
          it.b = 2.0 * std::numbers::pi * u[1];
          break;
        case 1:  // Legendre polynomial in the rescaled variable
          it.degree = 1 + static_cast<int>(std::floor(8.0 * u[0]));
          it.coeffs = legendre_monomials(it.degree);
          it.a = 2.0 / len;
          it.b = u[1] < 0.5 ? 1.0 : -1.0;
          break;
        default:  // Gaussian bump
          it.a = lo + len * u[0];
          it.b = len * (1.0 / 40.0 + (1.0 / 4.0 - 1.0 / 40.0) * u[1]);
          break;
      }
      items_.push_back(std::move(it));
    }
    compute_norms();
  }

  std::size_t size() const { return items_.size(); }
  double lo() const { return lo_; }
  double hi() const { return hi_; }

  Derivatives derivatives(std::size_t j, double x) const {
    const Item& it = items_[j];
    Derivatives d{};
    switch (it.family) {
      case 0: {
        double wk = 1.0;
        const double theta = it.a * (x - lo_) + it.b;
        for (int k = 0; k <= kMaxOrder; ++k) {
          d[k] = wk * std::sin(theta + 0.5 * std::numbers::pi * k);
          wk *= it.a;
        }
        break;
      }
      case 1: {
        const double t = it.a * (x - 0.5 * (lo_ + hi_));
        std::vector<double> c = it.coeffs;
        double scale = it.b;
        for (int k = 0; k <= kMaxOrder; ++k) {
          double v = 0.0;
          for (std::size_t m = c.size(); m-- > 0;) v = v * t + c[m];
          d[k] = scale * v;
          // differentiate the polynomial in t
          for (std::size_t m = 1; m < c.size(); ++m) c[m - 1] = static_cast<double>(m) * c[m];
          if (!c.empty()) c.back() = 0.0;
          scale *= it.a;
        }
        break;
      }
      default: {
        const double z = (x - it.a) / it.b;
        const double g = std::exp(-0.5 * z * z);
        double he_prev = 0.0, he = 1.0, factor = 1.0;
        for (int k = 0; k <= kMaxOrder; ++k) {
          d[k] = factor * he * g;
          const double next = z * he - static_cast<double>(k) * he_prev;
          he_prev = he;
          he = next;
          factor *= -1.0 / it.b;
        }
        break;
      }
    }
    return d;
  }

  double value(std::size_t j, double x) const { return derivatives(j, x)[0]; }

  // sum_{k <= n} sup |xi^(k)| over a refined sample of [lo, hi]
  double norm(std::size_t j, int n) const { return norms_[j][static_cast<std::size_t>(n)]; }

  double pair_with(std::size_t j, const GridDensity& q) const {
    NeumaierSum s;
    for (std::size_t i = 0; i < q.n_cells(); ++i) s.add(value(j, q.center(i)) * q.values[i]);
    return s.value() * q.h();
  }

 private:
  struct Item {
    int family = 0;
    int degree = 0;
    double a = 0.0, b = 0.0;
    std::vector<double> coeffs;
  };

  static std::vector<double> legendre_monomials(int n) {
    std::vector<double> p0{1.0}, p1{0.0, 1.0};
    if (n == 0) return p0;
    for (int k = 1; k < n; ++k) {
      std::vector<double> p2(static_cast<std::size_t>(k) + 2, 0.0);
      for (std::size_t m = 0; m < p1.size(); ++m) p2[m + 1] += (2.0 * k + 1.0) * p1[m];
      for (std::size_t m = 0; m < p0.size(); ++m) p2[m] -= static_cast<double>(k) * p0[m];
      for (auto& v : p2) v /= static_cast<double>(k + 1);
      p0 = std::move(p1);
      p1 = std::move(p2);
    }
    return p1;
  }

  void compute_norms() {
    constexpr std::size_t samples = 8193;
    norms_.assign(items_.size(), {});
    for (std::size_t j = 0; j < items_.size(); ++j) {
      Derivatives sup{};
      for (std::size_t i = 0; i < samples; ++i) {
        const double x = lo_ + (hi_ - lo_) * static_cast<double>(i) / static_cast<double>(samples - 1);
        const Derivatives d = derivatives(j, x);
        for (int k = 0; k <= kMaxOrder; ++k) sup[k] = std::max(sup[k], std::abs(d[k]));
      }
      double acc = 0.0;
      for (int k = 0; k <= kMaxOrder; ++k) {
        acc += sup[k];
        norms_[j][k] = acc;
      }
    }
  }

  double lo_, hi_;
  std::vector<Item> items_;
  std::vector<Derivatives> norms_;
};

inline void check_probe_order(int n) {
  if (n != 1 && n != 2 && n != 4 && n != 6) throw std::invalid_argument("dual_norm_probe: order must be 1, 2, 4 or 6");
}

inline double dual_norm_probe(const GridDensity& q, int n, const TestDictionary& dict) {
  check_probe_order(n);
  double best = 0.0;
  for (std::size_t j = 0; j < dict.size(); ++j) best = std::max(best, std::abs(dict.pair_with(j, q)) / dict.norm(j, n));
  return best;
}

inline constexpr std::size_t kDefaultDictionarySize = 48;

inline double dual_norm_probe(const GridDensity& q, int n, std::size_t dictionary_size = kDefaultDictionarySize,
                              std::uint64_t seed = 0) {
  check_probe_order(n);
  return dual_norm_probe(q, n, TestDictionary(q.lo, q.hi, dictionary_size, seed));
}

}  // namespace cbo
