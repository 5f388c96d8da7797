#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "cbo/functionals.hpp"
#include "cbo/meanfield.hpp"

namespace cbo {

enum class Stencil { centered, upwind };

// L_mu f = (sigma^2/2) |x - M|^2 phi^2 f'' - lambda (x - M) f'. The centered
// stencil is second-order accurate; the upwind stencil is the generator used
// by the grid solvers (its transpose evolves densities).
inline std::vector<double> lin_apply(std::span<const double> f, const GridDensity& mu, const CboParams& p,
                                     const ObjectiveSpec& obj, const CutoffBump& bump,
                                     Stencil stencil = Stencil::centered) {
  if (f.size() != mu.n_cells()) throw std::invalid_argument("lin_apply: grid mismatch");
  GridOperator op(mu, p, obj, bump);
  op.set_consensus(op.consensus_of(mu.values));
  std::vector<double> out(f.size());
  if (stencil == Stencil::upwind) {
    op.apply(f, out);
    return out;
  }
  const std::size_t n = f.size();
  const double h = op.h();
  for (std::size_t j = 0; j < n; ++j) {
    double d1, d2;
    if (j == 0) {
      d1 = (f[1] - f[0]) / h;
      d2 = (f[2] - 2.0 * f[1] + f[0]) / (h * h);
    } else if (j + 1 == n) {
      d1 = (f[j] - f[j - 1]) / h;
      d2 = (f[j] - 2.0 * f[j - 1] + f[j - 2]) / (h * h);
    } else {
      d1 = (f[j + 1] - f[j - 1]) / (2.0 * h);
      d2 = (f[j + 1] - 2.0 * f[j] + f[j - 1]) / (h * h);
    }
    out[j] = op.drift()[j] * d1 + op.diffusion()[j] * d2;
  }
  return out;
}

// A_mu f = <lambda f' - sigma^2 phi^2 (. - M) f'', mu> (x - M) e^{-alpha E(x)} / <e^{-alpha E}, mu>
inline std::vector<double> a_apply(std::span<const double> f, const GridDensity& mu, const CboParams& p,
                                   const ObjectiveSpec& obj, const CutoffBump& bump,
                                   Stencil stencil = Stencil::centered) {
  if (f.size() != mu.n_cells()) throw std::invalid_argument("a_apply: grid mismatch");
  GridOperator op(mu, p, obj, bump);
  const double m = op.consensus_of(mu.values);
  op.set_consensus(m);
  const std::size_t n = f.size();
  const double h = op.h();
  std::vector<double> d1(n), d2(n);
  if (stencil == Stencil::upwind) {
    op.gradient(f, d1);
    op.laplacian(f, d2);
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == 0) {
        d1[j] = (f[1] - f[0]) / h;
        d2[j] = (f[2] - 2.0 * f[1] + f[0]) / (h * h);
      } else if (j + 1 == n) {
        d1[j] = (f[j] - f[j - 1]) / h;
        d2[j] = (f[j] - 2.0 * f[j - 1] + f[j - 2]) / (h * h);
      } else {
        d1[j] = (f[j + 1] - f[j - 1]) / (2.0 * h);
        d2[j] = (f[j + 1] - 2.0 * f[j] + f[j - 1]) / (h * h);
      }
    }
  }
  const double z = op.gibbs_mass(mu.values);
  if (!(z > 0.0)) throw std::invalid_argument("a_apply: vanishing weight integral");
  NeumaierSum c;
  for (std::size_t j = 0; j < n; ++j) {
    const double kap = p.sigma * p.sigma * op.phi2()[j] * (op.x()[j] - m);
    c.add((p.lambda * d1[j] - kap * d2[j]) * mu.values[j]);
  }
  const double coef = c.value() * h;
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = coef * (op.x()[j] - m) * op.gibbs()[j] / z;
  return out;
}

struct CoeffDerivatives {
  double db = 0.0;   // delta b / delta m (x, mu, y1)
  double da = 0.0;   // delta a / delta m (x, mu, y1)
  double d2b = 0.0;  // delta^2 b / delta m^2 (x, mu, y1, y2)
  double d2a = 0.0;  // delta^2 a / delta m^2 (x, mu, y1, y2)
};

// Kernels of b(x, mu) = -lambda (x - M(mu)) and a(x, mu) = sigma^2 phi(x)^2 |x - M(mu)|^2.
template <class Measure>
CoeffDerivatives coeff_derivatives(double x, const Measure& mu, double y1, double y2, const CboParams& p,
                                   const ObjectiveSpec& obj, const CutoffBump& bump) {
  double m, z;
  if constexpr (std::is_same_v<Measure, GridDensity>) {
    m = consensus(mu, obj, p.alpha);
    NeumaierSum s;
    for (std::size_t i = 0; i < mu.n_cells(); ++i) s.add(mu.values[i] * std::exp(-p.alpha * obj(mu.center(i))));
    z = s.value() * mu.h();
  } else {
    m = consensus(mu, obj, p.alpha)[0];
    NeumaierSum s;
    for (std::size_t i = 0; i < mu.size(); ++i) s.add(mu.weights[i] * std::exp(-p.alpha * obj(mu.point(i))));
    z = s.value();
  }
  const double w1 = std::exp(-p.alpha * obj(y1)), w2 = std::exp(-p.alpha * obj(y2));
  const double ph = bump(x), s2 = p.sigma * p.sigma;
  CoeffDerivatives c;
  c.db = p.lambda * (y1 - m) * w1 / z;
  c.da = -2.0 * s2 * ph * ph * w1 * (x - m) * (y1 - m) / z;
  c.d2b = -p.lambda * (y1 + y2 - 2.0 * m) * w1 * w2 / (z * z);
  c.d2a = 2.0 * s2 * ph * ph * w1 * w2 / (z * z) * ((x - m) * (y1 + y2 - 2.0 * m) + (y1 - m) * (y2 - m));
  return c;
}

template <class Measure>
CoeffDerivatives coeff_derivatives(double x, const Measure& mu, double y, const CboParams& p,
                                   const ObjectiveSpec& obj, const CutoffBump& bump) {
  return coeff_derivatives(x, mu, y, y, p, obj, bump);
}

// Per-step quantities of the linearization around rho for the operator op:
//   A^T q = <g, q> t_rho,  g = (x - M) w / Z,  t_q = lambda grad^T q - lap^T(k q),
// with k = sigma^2 phi^2 (x - M) and w = e^{-alpha E}.
class LinearizationFrame {
 public:
  void update(const GridOperator& op, const GridDensity& rho, const CboParams& p) {
    op_ = &op;
    const std::size_t n = op.size();
    const double m = op.consensus();
    const double z = op.gibbs_mass(rho.values);
    if (!(z > 0.0)) throw std::invalid_argument("linearization: vanishing weight integral");
    h_ = rho.h();
    g_.resize(n);
    wn_.resize(n);
    k_.resize(n);
    t_rho_.resize(n);
    lap_rho_.resize(n);
    tmp_.resize(n);
    t1_.resize(n);
    t2_.resize(n);
    const double s2 = p.sigma * p.sigma;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = op.x()[i] - m;
      wn_[i] = op.gibbs()[i] / z;
      g_[i] = dx * wn_[i];
      k_[i] = s2 * op.phi2()[i] * dx;
      tmp_[i] = s2 * op.phi2()[i] * rho.values[i];
    }
    transport(rho.values, t_rho_);
    op.laplacian_transpose(tmp_, lap_rho_);
  }

  double gamma(std::span<const double> q) const { return dot(g_, q); }
  double omega(std::span<const double> q) const { return dot(wn_, q); }
  const std::vector<double>& t_rho() const { return t_rho_; }

  void transport(std::span<const double> q, std::span<double> out) {
    const std::size_t n = q.size();
    const double inv_h = 1.0 / h_, inv_h2 = inv_h * inv_h, lam = op_->lambda();
    const std::vector<double>& v = op_->drift();
    for (std::size_t i = 0; i < n; ++i) {
      // lambda grad^T q
      double gt = 0.0;
      if (i > 0 && v[i - 1] >= 0.0) gt += q[i - 1];
      if (i + 1 < n && v[i + 1] < 0.0) gt -= q[i + 1];
      if (v[i] >= 0.0) {
        if (i + 1 < n) gt -= q[i];
      } else if (i > 0) {
        gt += q[i];
      }
      // lap (k q), symmetric no-flux stencil
      const double kq = k_[i] * q[i];
      double lp = 0.0;
      if (i + 1 < n) lp += k_[i + 1] * q[i + 1] - kq;
      if (i > 0) lp += k_[i - 1] * q[i - 1] - kq;
      out[i] = lam * gt * inv_h - lp * inv_h2;
    }
  }

  // (L^T + A^T) q
  void apply_linearized(std::span<const double> q, std::span<double> out) const {
    op_->apply_transpose(q, out);
    const double gm = gamma(q);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += gm * t_rho_[i];
  }

  // Adds the second-order source B(q1, q2); symmetric in its arguments bit for bit.
  void add_source_b(std::span<const double> q1, std::span<const double> q2, std::span<double> out) {
    const double g1 = gamma(q1), g2 = gamma(q2);
    const double w1 = omega(q1), w2 = omega(q2);
    const double s = g1 * w2 + w1 * g2;
    const double gg = g1 * g2;
    transport(q1, t1_);
    transport(q2, t2_);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] += ((g2 * t1_[i] + g1 * t2_[i]) - s * t_rho_[i]) + gg * lap_rho_[i];
  }

 private:
  double dot(const std::vector<double>& a, std::span<const double> q) const {
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += a[i] * q[i];
    return s * h_;
  }

  const GridOperator* op_ = nullptr;
  double h_ = 0.0;
  std::vector<double> g_, wn_, k_, t_rho_, lap_rho_, tmp_, t1_, t2_;
};

inline GridDensity source_B(const GridDensity& background_t, const GridDensity& q1, const GridDensity& q2,
                            const CboParams& p, const ObjectiveSpec& obj, const CutoffBump& bump) {
  require_grid_match(background_t, q1, "source_B");
  require_grid_match(background_t, q2, "source_B");
  GridOperator op(background_t, p, obj, bump);
  op.set_consensus(op.consensus_of(background_t.values));
  LinearizationFrame frame;
  frame.update(op, background_t, p);
  GridDensity out = GridDensity::zeros_like(background_t);
  frame.add_source_b(q1.values, q2.values, out.values);
  return out;
}

enum class FlowKind { m1, d1, m2, d2, custom };

inline const char* flow_kind_name(FlowKind k) {
  switch (k) {
    case FlowKind::m1: return "m1";
    case FlowKind::d1: return "d1";
    case FlowKind::m2: return "m2";
    case FlowKind::d2: return "d2";
    case FlowKind::custom: return "custom";
  }
  return "custom";
}

struct LinearizedFlow {
  FlowKind kind = FlowKind::custom;
  std::vector<double> times;
  std::vector<GridDensity> states;
  std::shared_ptr<const DensityFlow> background;
  double max_mass_drift = 0.0;  // max_t |mass(q_t) - mass(q_0)|
};

// External source r(t, mu_t) -> signed density on the grid.
using SourceFn = std::function<GridDensity(double, const GridDensity&)>;

// Linearized flows advanced in lockstep with a re-run of the background
// solver, so every state sees exactly the background steps of the flow.
class LinearizedSystem {
 public:
  explicit LinearizedSystem(std::shared_ptr<const DensityFlow> background) : background_(std::move(background)) {
    if (!background_ || !background_->setup) throw std::invalid_argument("LinearizedSystem: missing background");
  }

  std::size_t add(GridDensity q0, FlowKind kind = FlowKind::custom, SourceFn source = {}) {
    require_grid_match(background_->setup->init, q0, "lfpe");
    entries_.push_back({kind, std::move(q0), -1, -1, std::move(source)});
    return entries_.size() - 1;
  }

  // Flow with source B(flow a, flow b); a and b must be added first.
  std::size_t add_second_order(GridDensity q0, std::size_t a, std::size_t b, FlowKind kind) {
    if (a >= entries_.size() || b >= entries_.size())
      throw std::invalid_argument("LinearizedSystem: source flows must be added first");
    const std::size_t id = add(std::move(q0), kind);
    entries_[id].src_a = static_cast<long>(a);
    entries_[id].src_b = static_cast<long>(b);
    return id;
  }

  std::vector<LinearizedFlow> run() {
    const FpeSetup& setup = *background_->setup;
    FpeStepper stepper(setup);
    const std::size_t nf = entries_.size(), n = setup.init.n_cells();
    std::vector<LinearizedFlow> flows(nf);
    std::vector<double> mass0(nf);
    for (std::size_t k = 0; k < nf; ++k) {
      flows[k].kind = entries_[k].kind;
      flows[k].background = background_;
      mass0[k] = entries_[k].q.mass();
    }
    std::vector<std::vector<double>> rate(nf, std::vector<double>(n));
    LinearizationFrame frame;
    for (double target : background_->times) {
      while (!stepper.reached(target)) {
        const double h = stepper.prepare(target);
        frame.update(stepper.op(), stepper.density(), setup.params);
        for (std::size_t k = 0; k < nf; ++k) {
          Entry& e = entries_[k];
          frame.apply_linearized(e.q.values, rate[k]);
          if (e.src_a >= 0)
            frame.add_source_b(entries_[static_cast<std::size_t>(e.src_a)].q.values,
                               entries_[static_cast<std::size_t>(e.src_b)].q.values, rate[k]);
          if (e.source) {
            const GridDensity r = e.source(stepper.time(), stepper.density());
            require_grid_match(e.q, r, "lfpe source");
            for (std::size_t i = 0; i < n; ++i) rate[k][i] += r.values[i];
          }
        }
        for (std::size_t k = 0; k < nf; ++k)
          for (std::size_t i = 0; i < n; ++i) entries_[k].q.values[i] += h * rate[k][i];
        stepper.advance(h, target);
      }
      for (std::size_t k = 0; k < nf; ++k) {
        flows[k].times.push_back(target);
        flows[k].states.push_back(entries_[k].q);
        flows[k].max_mass_drift = std::max(flows[k].max_mass_drift, std::abs(entries_[k].q.mass() - mass0[k]));
      }
    }
    return flows;
  }

 private:
  struct Entry {
    FlowKind kind;
    GridDensity q;
    long src_a = -1, src_b = -1;
    SourceFn source;
  };
  std::shared_ptr<const DensityFlow> background_;
  std::vector<Entry> entries_;
};

// dq/dt = (L + A)^T q + r_t along the background flow.
inline LinearizedFlow lfpe_solve(std::shared_ptr<const DensityFlow> background, const GridDensity& q0,
                                 const SourceFn& source = {}) {
  if (std::abs(q0.mass()) > 1e-8) throw std::invalid_argument("lfpe_solve: initial state must be mass-free");
  LinearizedSystem sys(std::move(background));
  sys.add(q0, FlowKind::custom, source);
  return std::move(sys.run().front());
}

inline double default_mollify_width(const GridDensity& grid) { return 4.0 * grid.h(); }

// Gaussian of the given width centred at z, normalized to unit discrete mass.
inline GridDensity mollified_dirac(const GridDensity& layout, double z, double width) {
  if (!(width > 0.0)) throw std::invalid_argument("mollifier: width must be positive");
  GridDensity g = GridDensity::zeros_like(layout);
  for (std::size_t i = 0; i < g.n_cells(); ++i) {
    const double u = (g.center(i) - z) / width;
    g.values[i] = std::exp(-0.5 * u * u);
  }
  const double m = g.mass();
  for (auto& v : g.values) v /= m;
  return g;
}

// -d/dx of the mollified Dirac, with any residual mass removed along the
// mollifier itself so the state is exactly mass-free.
inline GridDensity mollified_dipole(const GridDensity& layout, double z, double width) {
  const GridDensity eta = mollified_dirac(layout, z, width);
  GridDensity q = GridDensity::zeros_like(layout);
  for (std::size_t i = 0; i < q.n_cells(); ++i)
    q.values[i] = (q.center(i) - z) / (width * width) * eta.values[i];
  const double m = q.mass();
  for (std::size_t i = 0; i < q.n_cells(); ++i) q.values[i] -= m * eta.values[i];
  return q;
}

inline void check_in_domain(const GridDensity& g, double z) {
  if (z < g.lo || z > g.hi) throw std::invalid_argument("linearized flow: z outside B(c0, 2 r_cut)");
}

inline GridDensity m1_initial(const DensityFlow& bg, double z, double width) {
  const GridDensity& mu0 = bg.setup->init;
  check_in_domain(mu0, z);
  GridDensity q = mollified_dirac(mu0, z, width);
  for (std::size_t i = 0; i < q.n_cells(); ++i) q.values[i] -= mu0.values[i];
  return q;
}

inline GridDensity d1_initial(const DensityFlow& bg, double z, double width) {
  check_in_domain(bg.setup->init, z);
  return mollified_dipole(bg.setup->init, z, width);
}

inline LinearizedFlow m1_flow(std::shared_ptr<const DensityFlow> bg, double z, double width) {
  LinearizedSystem sys(bg);
  sys.add(m1_initial(*bg, z, width), FlowKind::m1);
  return std::move(sys.run().front());
}

inline LinearizedFlow d1_flow(std::shared_ptr<const DensityFlow> bg, double z, double width) {
  LinearizedSystem sys(bg);
  sys.add(d1_initial(*bg, z, width), FlowKind::d1);
  return std::move(sys.run().front());
}

struct SecondOrderFlows {
  LinearizedFlow first_a, first_b;  // first-order flows at z1 and z2
  LinearizedFlow second;
};

inline SecondOrderFlows m2_flow(std::shared_ptr<const DensityFlow> bg, double z1, double z2, double width) {
  LinearizedSystem sys(bg);
  const std::size_t a = sys.add(m1_initial(*bg, z1, width), FlowKind::m1);
  const std::size_t b = sys.add(m1_initial(*bg, z2, width), FlowKind::m1);
  GridDensity q0 = bg->setup->init;
  const GridDensity eta = mollified_dirac(q0, z2, width);
  for (std::size_t i = 0; i < q0.n_cells(); ++i) q0.values[i] -= eta.values[i];
  sys.add_second_order(std::move(q0), a, b, FlowKind::m2);
  auto flows = sys.run();
  return {std::move(flows[0]), std::move(flows[1]), std::move(flows[2])};
}

inline SecondOrderFlows d2_flow(std::shared_ptr<const DensityFlow> bg, double z1, double z2, double width) {
  LinearizedSystem sys(bg);
  const std::size_t a = sys.add(d1_initial(*bg, z1, width), FlowKind::d1);
  const std::size_t b = sys.add(d1_initial(*bg, z2, width), FlowKind::d1);
  sys.add_second_order(GridDensity::zeros_like(bg->setup->init), a, b, FlowKind::d2);
  auto flows = sys.run();
  return {std::move(flows[0]), std::move(flows[1]), std::move(flows[2])};
}

struct ProjectionReport {
  double x_tilde = 0.0;
  double q_infty = 0.0;  // q_t -> q_infty * grad delta_{x_tilde}, i.e. <xi, q_t> -> -q_infty xi'(x_tilde)
  std::vector<double> times;
  std::vector<double> residual_curve;
  std::vector<double> probe_curve;  // dual_norm_probe(q_t, 2)
  ExponentialFit fit;          // over the grid-resolved part of the background flow
  double resolved_time = 0.0;
  std::optional<double> fitted_rate;  // set when the residual decays over >= 3 e-foldings
  double uniform_bound = 0.0;         // sup_t dual_norm_probe(q_t, 2)
};

// Least-squares q_infty over the final 10% of the time grid; residuals use
// dictionary items scaled by their (4, inf) norms. The decay fit stops where
// the background density is no longer resolved by the grid.
inline ProjectionReport projection_decay(const LinearizedFlow& flow, double x_tilde, const TestDictionary& dict) {
  ProjectionReport rep;
  rep.x_tilde = x_tilde;
  rep.times = flow.times;
  const std::size_t nt = flow.times.size(), nd = dict.size();
  if (nt == 0) return rep;
  std::vector<double> target(nd), scale(nd);
  for (std::size_t j = 0; j < nd; ++j) {
    scale[j] = 1.0 / dict.norm(j, 4);
    target[j] = -dict.derivatives(j, x_tilde)[1] * scale[j];
  }
  std::vector<std::vector<double>> proj(nt, std::vector<double>(nd));
  for (std::size_t t = 0; t < nt; ++t)
    for (std::size_t j = 0; j < nd; ++j) proj[t][j] = dict.pair_with(j, flow.states[t]) * scale[j];
  const double cut = flow.times.back() - 0.1 * (flow.times.back() - flow.times.front());
  double num = 0.0, den = 0.0;
  for (std::size_t t = 0; t < nt; ++t) {
    if (flow.times[t] < cut) continue;
    for (std::size_t j = 0; j < nd; ++j) {
      num += proj[t][j] * target[j];
      den += target[j] * target[j];
    }
  }
  rep.q_infty = den > 0.0 ? num / den : 0.0;
  rep.residual_curve.resize(nt);
  rep.probe_curve.resize(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    double r = 0.0;
    for (std::size_t j = 0; j < nd; ++j) r = std::max(r, std::abs(proj[t][j] - rep.q_infty * target[j]));
    rep.residual_curve[t] = r;
    rep.probe_curve[t] = dual_norm_probe(flow.states[t], 2, dict);
    rep.uniform_bound = std::max(rep.uniform_bound, rep.probe_curve[t]);
  }
  const std::size_t last = flow.background ? resolved_until(*flow.background) : nt - 1;
  rep.resolved_time = rep.times[last];
  rep.fit = fit_exponential_decay(rep.times, rep.residual_curve, 1e-13, last);
  if (rep.fit.valid && rep.fit.e_foldings >= 3.0) rep.fitted_rate = rep.fit.rate;
  return rep;
}

struct ComposeCurve {
  std::vector<double> times;
  std::vector<double> values;
};

// t -> d2Phi(mu_t)[q1_t, q2_t] + dPhi(mu_t)[q2nd_t]; with m-flows this is the
// second derivative of the solution map composed with Phi, with d-flows its
// z-derivative version.
inline ComposeCurve compose_dU2(const SecondOrderFlows& flows, const FunctionalSpec& phi, const DensityFlow& background) {
  ComposeCurve c;
  c.times = background.times;
  const std::size_t nt = background.times.size();
  if (flows.first_a.states.size() != nt || flows.first_b.states.size() != nt || flows.second.states.size() != nt)
    throw std::invalid_argument("compose_dU2: flows and background have different time grids");
  c.values.resize(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    const GridDensity& mu = background.densities[t];
    c.values[t] = pair_second(phi, mu, flows.first_a.states[t], flows.first_b.states[t]) +
                  pair_first(phi, mu, flows.second.states[t]);
  }
  return c;
}

// Exponential fit of |curve| over the grid-resolved part of the background.
inline ExponentialFit fit_curve_decay(const ComposeCurve& curve, const DensityFlow& background) {
  return fit_exponential_decay(curve.times, curve.values, 1e-13, resolved_until(background));
}

struct BoundednessCheck {
  double reference = 0.0;  // |value| at the snapshot nearest t_ref
  double sup_after = 0.0;  // sup of |value| over t >= t_ref
  double sup_all = 0.0;    // sup of |value| over the whole grid
  bool pass = false;       // sup_after <= factor * reference
};

inline BoundednessCheck check_bounded(std::span<const double> times, std::span<const double> values,
                                      double t_ref = 1.0, double factor = 2.0) {
  BoundednessCheck c;
  if (times.empty() || times.size() != values.size()) return c;
  std::size_t ref = 0;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (std::abs(times[i] - t_ref) < std::abs(times[ref] - t_ref)) ref = i;
  c.reference = std::abs(values[ref]);
  for (std::size_t i = 0; i < times.size(); ++i) {
    c.sup_all = std::max(c.sup_all, std::abs(values[i]));
    if (i >= ref) c.sup_after = std::max(c.sup_after, std::abs(values[i]));
  }
  c.pass = c.sup_after <= factor * c.reference;
  return c;
}

}  // namespace cbo
