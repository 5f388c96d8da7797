#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cbo/jet.hpp"
#include "cbo/measures.hpp"
#include "cbo/model.hpp"
#include "cbo/rng.hpp"
#include "cbo/stats.hpp"

namespace cbo {

struct StepStats {
  std::uint64_t clamp_events = 0;
  double max_overshoot = 0.0;

  void merge(const StepStats& o) {
    clamp_events += o.clamp_events;
    max_overshoot = std::max(max_overshoot, o.max_overshoot);
  }
};

// Addresses the Brownian increments of one step. Particle i draws from
// streams id_i * dim + k, where id_i = stream_ids[i] (or i when empty).
struct StepNoise {
  const rng::CounterRng* rng = nullptr;
  std::uint32_t replica = 0;
  std::uint32_t step = 0;
  std::span<const std::uint64_t> stream_ids{};
};

class NonFiniteState : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// Projects x onto the closed ball B(c, radius); returns the overshoot.
inline double clamp_to_ball(std::span<double> x, std::span<const double> c, double radius) {
  const double rho = std::sqrt(squared_distance(x, c));
  if (rho <= radius) return 0.0;
  double f = radius / rho;
  for (;;) {
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = c[k] + (x[k] - c[k]) * f;
    if (squared_distance(x, c) <= radius * radius) break;
    f = std::nextafter(f, 0.0);
  }
  return rho - radius;
}

// Explicit Euler-Maruyama step of the cutoff system on flat coordinates
// (n particles x dim, weights w). The consensus uses the pre-step state.
inline void em_step_flat(std::span<double> x, std::span<const double> w, std::size_t dim, double h,
                         const CboParams& p, const ObjectiveSpec& obj, const CutoffBump& bump,
                         const StepNoise& noise, std::vector<double>& energy, StepStats& stats) {
  const std::size_t n = w.size();
  energy.resize(n);
  double e_min = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double e = obj(std::span<const double>(x.data() + i * dim, dim));
    if (!std::isfinite(e)) throw NonFiniteState("em_step: non-finite objective value");
    energy[i] = e;
    if (w[i] > 0.0) e_min = std::min(e_min, e);
  }
  double m1 = 0.0, z = 0.0;
  Point m(dim, 0.0);
  if (dim == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = w[i] * std::exp(-p.alpha * (energy[i] - e_min));
      z += wi;
      m1 += wi * x[i];
    }
    m[0] = m1 / z;
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = w[i] * std::exp(-p.alpha * (energy[i] - e_min));
      z += wi;
      for (std::size_t k = 0; k < dim; ++k) m[k] += wi * x[i * dim + k];
    }
    for (auto& v : m) v /= z;
  }

  const double sqrt_h = std::sqrt(h);
  const double outer = 2.0 * p.r_cut;
  rng::NormalCursor normals(*noise.rng, noise.step, noise.replica);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<double> xi(x.data() + i * dim, dim);
    const std::uint64_t sid = noise.stream_ids.empty() ? i : noise.stream_ids[i];
    const double dist = std::sqrt(squared_distance(xi, m));
    const double vol = p.sigma * dist * bump(std::span<const double>(xi)) * sqrt_h;
    for (std::size_t k = 0; k < dim; ++k) {
      const double xi_k = xi[k];
      const double dw = vol != 0.0 ? normals.at(sid * dim + k) : 0.0;
      xi[k] = xi_k - p.lambda * (xi_k - m[k]) * h + vol * dw;
      if (!std::isfinite(xi[k])) throw NonFiniteState("em_step: non-finite particle state");
    }
    const double over = clamp_to_ball(xi, p.c0, outer);
    if (over > 0.0) {
      ++stats.clamp_events;
      stats.max_overshoot = std::max(stats.max_overshoot, over);
    }
  }
}

}  // namespace detail

// One explicit step of size p.dt.
inline EmpiricalMeasure em_step(const EmpiricalMeasure& ensemble, const CboParams& p, const ObjectiveSpec& obj,
                                const CutoffBump& bump, const StepNoise& noise, StepStats* stats = nullptr) {
  if (!(p.dt > 0.0)) throw std::invalid_argument("em_step: dt must be positive");
  if (noise.rng == nullptr) throw std::invalid_argument("em_step: missing random source");
  if (!noise.stream_ids.empty() && noise.stream_ids.size() != ensemble.size())
    throw std::invalid_argument("em_step: stream id count differs from particle count");
  for (std::size_t i = 0; i < ensemble.size(); ++i)
    if (squared_distance(ensemble.point(i), p.c0) > 4.0 * p.r_cut * p.r_cut * (1.0 + 1e-12))
      throw std::invalid_argument("em_step: ensemble leaves B(c0, 2 r_cut)");
  EmpiricalMeasure out = ensemble;
  std::vector<double> scratch;
  StepStats local;
  detail::em_step_flat(out.points, out.weights, out.dim, p.dt, p, obj, bump, noise, scratch, local);
  if (stats) stats->merge(local);
  return out;
}

// Law of the initial particle positions.
struct InitialLaw {
  enum class Kind { uniform_box, point };
  Kind kind = Kind::uniform_box;
  double lo = -1.0, hi = 1.0;  // per-coordinate bounds of the box
  Point at;                    // location of the point mass

  static InitialLaw uniform(double lo, double hi) { return {Kind::uniform_box, lo, hi, {}}; }
  static InitialLaw point_mass(Point z) { return {Kind::point, 0.0, 0.0, std::move(z)}; }

  // n i.i.d. draws, addressed by (seed, replica) in the init domain.
  EmpiricalMeasure sample(std::size_t n, std::size_t dim, std::uint64_t seed, std::uint32_t replica) const {
    std::vector<double> pts(n * dim);
    if (kind == Kind::point) {
      if (at.size() != dim) throw std::invalid_argument("InitialLaw: point dimension mismatch");
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < dim; ++k) pts[i * dim + k] = at[k];
    } else {
      const rng::CounterRng gen(seed, rng::Domain::init);
      for (std::size_t s = 0; s < n * dim; ++s) pts[s] = lo + (hi - lo) * gen.uniform(0, replica, s);
    }
    return EmpiricalMeasure::uniform(std::move(pts), dim);
  }

  // Cell averages on a 1D grid (point masses occupy their cell).
  GridDensity grid(double glo, double ghi, std::size_t cells) const {
    if (kind == Kind::uniform_box) return GridDensity::uniform_law(glo, ghi, cells, lo, hi);
    GridDensity g = GridDensity::zeros(glo, ghi, cells);
    const double h = g.h();
    const auto i = static_cast<std::size_t>(std::clamp((at[0] - glo) / h, 0.0, static_cast<double>(cells - 1)));
    g.values[i] = 1.0 / h;
    return g;
  }
};

struct EnsemblePath {
  CboParams params;
  std::vector<double> times;
  std::vector<EmpiricalMeasure> snapshots;
  std::vector<Point> consensus_path;
  std::uint64_t clamp_events = 0;
  double max_overshoot = 0.0;
  std::uint64_t seed = 0;
  std::uint32_t replica = 0;
};

struct SimulationOptions {
  std::uint32_t replica = 0;
  std::vector<std::uint64_t> stream_ids;  // empty: particle index
};

inline void check_initial_support(const EmpiricalMeasure& init, const CboParams& p) {
  if (init.dim != p.dim) throw std::invalid_argument("simulate: init dimension differs from params");
  const double r2 = p.r_cut * p.r_cut * (1.0 + 1e-12);
  for (std::size_t i = 0; i < init.size(); ++i)
    if (squared_distance(init.point(i), p.c0) > r2)
      throw std::invalid_argument("simulate: initial support leaves B(c0, r_cut)");
}

// Steps the flat state through p.snapshot_times, calling
// observer(index, time, state) at each snapshot. The step that reaches a
// snapshot is shortened so the state is sampled exactly at that time.
template <class Observer>
StepStats run_particles(std::vector<double>& x, std::span<const double> w, const CboParams& p,
                        const ObjectiveSpec& obj, const CutoffBump& bump, std::uint64_t seed,
                        const SimulationOptions& opt, Observer&& observer) {
  const rng::CounterRng gen(seed, rng::Domain::step);
  StepStats stats;
  std::vector<double> scratch;
  StepNoise noise{&gen, opt.replica, 0, opt.stream_ids};
  double t = 0.0;
  std::uint64_t step = 0;
  for (std::size_t s = 0; s < p.snapshot_times.size(); ++s) {
    const double target = p.snapshot_times[s];
    while (target - t > 1e-12 * p.dt) {
      double h = p.dt;
      bool last = false;
      if (target - t <= p.dt * (1.0 + 1e-9)) {
        h = target - t;
        last = true;
      }
      noise.step = static_cast<std::uint32_t>(step++);
      detail::em_step_flat(x, w, p.dim, h, p, obj, bump, noise, scratch, stats);
      t = last ? target : t + h;
    }
    t = target;
    observer(s, t, std::span<const double>(x));
  }
  return stats;
}

inline EnsemblePath simulate(const CboParams& p, const ObjectiveSpec& obj, const CutoffBump& bump,
                             const EmpiricalMeasure& init, std::uint64_t seed, const SimulationOptions& opt = {}) {
  p.validate();
  check_initial_support(init, p);
  if (!opt.stream_ids.empty() && opt.stream_ids.size() != init.size())
    throw std::invalid_argument("simulate: stream id count differs from particle count");
  EnsemblePath path;
  path.params = p;
  path.seed = seed;
  path.replica = opt.replica;
  std::vector<double> x = init.points;
  const StepStats st = run_particles(x, init.weights, p, obj, bump, seed, opt,
                                     [&](std::size_t, double t, std::span<const double> state) {
                                       EmpiricalMeasure snap = init;
                                       snap.points.assign(state.begin(), state.end());
                                       path.times.push_back(t);
                                       path.consensus_path.push_back(consensus(snap, obj, p.alpha));
                                       path.snapshots.push_back(std::move(snap));
                                     });
  path.clamp_events = st.clamp_events;
  path.max_overshoot = st.max_overshoot;
  return path;
}

// ---------------------------------------------------------------------------
// Tangent (variational) processes in one dimension.
//
// Both processes are advanced by the exponential Euler scheme
//   Z_{n+1} = A_n + e^{-lambda h} (Z_n - A_n + sigma g(Z_n) dW_n)
// applied to Taylor jets in the initial point, so the derivative processes
// are the exact derivatives of the discrete flow.

struct TangentYRow {
  double u = 0.0;
  Estimate d1, d2, d1_sq, d1_quartic;
};

struct TangentOptions {
  double dt = 1e-3;
  unsigned threads = 1;
};

namespace detail {

inline void check_u_grid(std::span<const double> u_grid, double t) {
  for (std::size_t i = 0; i < u_grid.size(); ++i) {
    if (u_grid[i] < t) throw std::invalid_argument("tangent flow: u_grid must lie in [t, T]");
    if (i > 0 && u_grid[i] < u_grid[i - 1]) throw std::invalid_argument("tangent flow: u_grid must be sorted");
  }
}

// Advances a jet from t through the sorted u_grid, recording each time.
template <int K, class Anchor, class Record>
void tangent_path(Jet<K> z, double lambda, double sigma, const CutoffBump& bump, Anchor&& anchor, double t,
                  std::span<const double> u_grid, double dt, const rng::CounterRng& gen, std::uint32_t replica,
                  Record&& record) {
  double now = t;
  std::uint32_t step = 0;
  for (std::size_t s = 0; s < u_grid.size(); ++s) {
    const double target = u_grid[s];
    while (target - now > 1e-12 * dt) {
      const double h = (target - now <= dt * (1.0 + 1e-9)) ? target - now : dt;
      const double a = anchor(now);
      const double dw = std::sqrt(h) * gen.normal(step++, replica, 0);
      const Jet<K> rel = z - a;
      const Jet<K> g = abs(rel) * bump.jet(z);
      z = (rel + (sigma * dw) * g) * std::exp(-lambda * h) + a;
      now = (h == target - now) ? target : now + h;
    }
    now = target;
    record(s, z);
  }
}

}  // namespace detail

// dY = -lambda (Y - M_u) du + sigma |Y - M_u| phi(Y) dW, Y_t = x, with its
// first and second derivatives in x.
inline std::vector<TangentYRow> tangent_flow_y(double lambda, double sigma, const CutoffBump& bump,
                                               const std::function<double(double)>& consensus_path, double t,
                                               double x, std::span<const double> u_grid, std::size_t replicas,
                                               std::uint64_t seed, const TangentOptions& opt = {}) {
  detail::check_u_grid(u_grid, t);
  if (replicas == 0) throw std::invalid_argument("tangent_flow_y: need at least one replica");
  const rng::CounterRng gen(seed, rng::Domain::tangent);
  const std::size_t nu = u_grid.size();
  std::vector<double> v1(replicas * nu), v2(replicas * nu);
  parallel_for(replicas, opt.threads, [&](std::size_t r) {
    detail::tangent_path(Jet<2>::variable(x), lambda, sigma, bump, consensus_path, t, u_grid, opt.dt, gen,
                         static_cast<std::uint32_t>(r), [&](std::size_t s, const Jet<2>& y) {
                           v1[r * nu + s] = y.derivative(1);
                           v2[r * nu + s] = y.derivative(2);
                         });
  });
  std::vector<TangentYRow> rows(nu);
  for (std::size_t s = 0; s < nu; ++s) {
    RunningStats a, b, c, d;
    for (std::size_t r = 0; r < replicas; ++r) {
      const double g1 = v1[r * nu + s];
      a.add(g1);
      b.add(v2[r * nu + s]);
      c.add(g1 * g1);
      d.add(g1 * g1 * g1 * g1);
    }
    rows[s] = {u_grid[s], a.estimate(), b.estimate(), c.estimate(), d.estimate()};
  }
  return rows;
}

struct TangentOrder {
  int p = 0;     // power of |d_x S|
  int beta = 0;  // extra derivatives applied to d_x S
};

struct TangentSRow {
  double u = 0.0;
  TangentOrder order;
  Estimate estimate;
  double envelope = 0.0;  // exp(-lambda (u - t) / 2)
};

// dS = -lambda S du + sigma |S| phi(S) dW, S_t = x; estimates
// E[|d^beta (d_x S_u)| |d_x S_u|^p] for each requested order.
inline std::vector<TangentSRow> tangent_flow_s(double lambda, double sigma, const CutoffBump& bump, double t,
                                               double x, std::span<const double> u_grid, std::size_t replicas,
                                               std::uint64_t seed, std::span<const TangentOrder> orders,
                                               const TangentOptions& opt = {}) {
  detail::check_u_grid(u_grid, t);
  for (const auto& o : orders)
    if (o.p < 0 || o.beta < 0 || o.p + o.beta > 5)
      throw std::invalid_argument("tangent_flow_s: unsupported order (need p, beta >= 0 and p + beta <= 5)");
  if (replicas == 0) throw std::invalid_argument("tangent_flow_s: need at least one replica");
  const rng::CounterRng gen(seed, rng::Domain::tangent);
  const std::size_t nu = u_grid.size(), no = orders.size();
  std::vector<double> vals(replicas * nu * no);
  const auto zero = [](double) { return 0.0; };
  parallel_for(replicas, opt.threads, [&](std::size_t r) {
    detail::tangent_path(Jet<6>::variable(x), lambda, sigma, bump, zero, t, u_grid, opt.dt, gen,
                         static_cast<std::uint32_t>(r), [&](std::size_t s, const Jet<6>& z) {
                           const double d1 = std::abs(z.derivative(1));
                           for (std::size_t o = 0; o < no; ++o)
                             vals[(r * nu + s) * no + o] =
                                 std::abs(z.derivative(1 + orders[o].beta)) * std::pow(d1, orders[o].p);
                         });
  });
  std::vector<TangentSRow> rows;
  rows.reserve(nu * no);
  for (std::size_t s = 0; s < nu; ++s) {
    for (std::size_t o = 0; o < no; ++o) {
      RunningStats st;
      for (std::size_t r = 0; r < replicas; ++r) st.add(vals[(r * nu + s) * no + o]);
      rows.push_back({u_grid[s], orders[o], st.estimate(), std::exp(-0.5 * lambda * (u_grid[s] - t))});
    }
  }
  return rows;
}

}  // namespace cbo
