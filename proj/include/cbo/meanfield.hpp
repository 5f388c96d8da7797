#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbo/dynamics.hpp"
#include "cbo/measures.hpp"
#include "cbo/model.hpp"
#include "cbo/stats.hpp"

namespace cbo {

class CflViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NoSignal : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Upwind/central discretization of
//   L f = v f' + D f'',  v = -lambda (x - M),  D = sigma^2 phi^2 (x - M)^2 / 2
// written as a Markov generator with no-flux ends:
//   (L f)_j = a_j (f_{j+1} - f_j) + b_j (f_{j-1} - f_j).
// The same one-sided gradient and three-point Laplacian give L f = v grad f +
// D lap f exactly, and their M-derivatives are used by the linearized flows.
class GridOperator {
 public:
  GridOperator(const GridDensity& layout, const CboParams& p, const ObjectiveSpec& obj, const CutoffBump& bump)
      : lambda_(p.lambda), sigma_(p.sigma), alpha_(p.alpha), lo_(layout.lo), hi_(layout.hi) {
    const std::size_t n = layout.n_cells();
    if (n < 3) throw std::invalid_argument("GridOperator: need at least 3 cells");
    h_ = layout.h();
    x_ = grid_centers(layout);
    phi2_.resize(n);
    energy_.resize(n);
    double e_min = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const double ph = bump(x_[i]);
      phi2_[i] = ph * ph;
      energy_[i] = obj(x_[i]);
      if (!std::isfinite(energy_[i])) throw std::invalid_argument("GridOperator: non-finite objective on grid");
      e_min = std::min(e_min, energy_[i]);
    }
    grid_e_min_ = e_min;
    gibbs_.resize(n);
    for (std::size_t i = 0; i < n; ++i) gibbs_[i] = std::exp(-alpha_ * (energy_[i] - e_min));
    v_.resize(n);
    diff_.resize(n);
    up_.resize(n);
    down_.resize(n);
    set_consensus(0.5 * (lo_ + hi_));
  }

  std::size_t size() const { return x_.size(); }
  double h() const { return h_; }
  double lambda() const { return lambda_; }
  double sigma() const { return sigma_; }
  double consensus() const { return m_; }
  const std::vector<double>& x() const { return x_; }
  const std::vector<double>& phi2() const { return phi2_; }   // phi^2 at cell centres
  const std::vector<double>& drift() const { return v_; }
  const std::vector<double>& diffusion() const { return diff_; }
  const std::vector<double>& gibbs() const { return gibbs_; }  // exp(-alpha (E - min_grid E))

  // M(rho) with weights exp(-alpha E); falls back to a support-relative
  // shift when the grid-relative weights underflow on the support.
  double consensus_of(std::span<const double> rho) const {
    double num = 0.0, z = 0.0;
    for (std::size_t i = 0; i < x_.size(); ++i) {
      if (rho[i] <= 0.0) continue;
      const double w = rho[i] * gibbs_[i];
      z += w;
      num += w * x_[i];
    }
    if (z > 1e-250) return num / z;
    double e_min = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < x_.size(); ++i)
      if (rho[i] > 0.0) e_min = std::min(e_min, energy_[i]);
    if (!std::isfinite(e_min)) throw std::invalid_argument("consensus: measure has no mass");
    num = z = 0.0;
    for (std::size_t i = 0; i < x_.size(); ++i) {
      if (rho[i] <= 0.0) continue;
      const double w = rho[i] * std::exp(-alpha_ * (energy_[i] - e_min));
      z += w;
      num += w * x_[i];
    }
    return num / z;
  }

  // Normalizer <exp(-alpha (E - min_grid E)), rho> matching gibbs().
  double gibbs_mass(std::span<const double> rho) const {
    NeumaierSum s;
    for (std::size_t i = 0; i < x_.size(); ++i) s.add(gibbs_[i] * rho[i]);
    return s.value() * h_;
  }

  void set_consensus(double m) {
    m_ = m;
    const double inv_h = 1.0 / h_, inv_h2 = inv_h * inv_h;
    const std::size_t n = x_.size();
    max_rate_ = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = x_[j] - m;
      v_[j] = -lambda_ * d;
      diff_[j] = 0.5 * sigma_ * sigma_ * phi2_[j] * d * d;
      const double a = j + 1 < n ? std::max(v_[j], 0.0) * inv_h + diff_[j] * inv_h2 : 0.0;
      const double b = j > 0 ? std::max(-v_[j], 0.0) * inv_h + diff_[j] * inv_h2 : 0.0;
      up_[j] = a;
      down_[j] = b;
      max_rate_ = std::max(max_rate_, a + b);
    }
  }

  // Largest total jump rate; explicit steps need dt * max_rate <= 1.
  double max_rate() const { return max_rate_; }

  bool forward(std::size_t j) const { return v_[j] >= 0.0; }

  void apply(std::span<const double> f, std::span<double> out) const {
    const std::size_t n = x_.size();
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      if (j + 1 < n) s += up_[j] * (f[j + 1] - f[j]);
      if (j > 0) s += down_[j] * (f[j - 1] - f[j]);
      out[j] = s;
    }
  }

  void apply_transpose(std::span<const double> q, std::span<double> out) const {
    const std::size_t n = x_.size();
    for (std::size_t i = 0; i < n; ++i) {
      double s = -(up_[i] + down_[i]) * q[i];
      if (i > 0) s += up_[i - 1] * q[i - 1];
      if (i + 1 < n) s += down_[i + 1] * q[i + 1];
      out[i] = s;
    }
  }

  void gradient(std::span<const double> f, std::span<double> out) const {
    const std::size_t n = x_.size();
    const double inv_h = 1.0 / h_;
    for (std::size_t j = 0; j < n; ++j) {
      if (forward(j))
        out[j] = j + 1 < n ? (f[j + 1] - f[j]) * inv_h : 0.0;
      else
        out[j] = j > 0 ? (f[j] - f[j - 1]) * inv_h : 0.0;
    }
  }

  void gradient_transpose(std::span<const double> q, std::span<double> out) const {
    const std::size_t n = x_.size();
    const double inv_h = 1.0 / h_;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      // row j = i - 1 forward, row j = i + 1 backward, and the diagonal
      if (i > 0 && forward(i - 1)) s += q[i - 1];
      if (i + 1 < n && !forward(i + 1)) s -= q[i + 1];
      if (forward(i)) {
        if (i + 1 < n) s -= q[i];
      } else if (i > 0) {
        s += q[i];
      }
      out[i] = s * inv_h;
    }
  }

  void laplacian(std::span<const double> f, std::span<double> out) const {
    const std::size_t n = x_.size();
    const double inv_h2 = 1.0 / (h_ * h_);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      if (j + 1 < n) s += f[j + 1] - f[j];
      if (j > 0) s += f[j - 1] - f[j];
      out[j] = s * inv_h2;
    }
  }

  // The Laplacian above is symmetric.
  void laplacian_transpose(std::span<const double> q, std::span<double> out) const { laplacian(q, out); }

 private:
  double lambda_, sigma_, alpha_, lo_, hi_;
  double h_ = 0.0, m_ = 0.0, max_rate_ = 0.0, grid_e_min_ = 0.0;
  std::vector<double> x_, phi2_, energy_, gibbs_, v_, diff_, up_, down_;
};

struct FpeSettings {
  std::size_t n_cells = 1024;
  double cfl = 0.9;
  double dt = 0.0;  // 0: largest stable step each step (times cfl)
};

struct FpeSetup {
  GridDensity init;
  CboParams params;
  ObjectiveSpec obj;
  CutoffBump bump;
  FpeSettings settings;
};

// Explicit scheme rho <- rho + h L^T rho with the operator refreshed from the
// current consensus before every step.
class FpeStepper {
 public:
  explicit FpeStepper(const FpeSetup& s)
      : setup_(&s), op_(s.init, s.params, s.obj, s.bump), rho_(s.init) {}

  const GridDensity& density() const { return rho_; }
  const GridOperator& op() const { return op_; }
  double time() const { return t_; }
  double clipped_mass() const { return clipped_; }
  std::uint64_t steps() const { return steps_; }

  // Sets the operator for the current state; returns the step to take
  // towards `target`.
  double prepare(double target) {
    op_.set_consensus(op_.consensus_of(rho_.values));
    const double rate = op_.max_rate();
    const double stable = rate > 0.0 ? 1.0 / rate : std::numeric_limits<double>::infinity();
    double h;
    if (setup_->settings.dt > 0.0) {
      h = setup_->settings.dt;
      if (h > stable * (1.0 + 1e-12))
        throw CflViolation("fpe: dt = " + std::to_string(h) + " exceeds the stability limit " +
                           std::to_string(stable) + " (max rate " + std::to_string(rate) + ", h = " +
                           std::to_string(op_.h()) + ")");
    } else {
      h = setup_->settings.cfl * stable;
    }
    const double remaining = target - t_;
    last_ = remaining <= h * (1.0 + 1e-9);
    return last_ ? remaining : h;
  }

  void advance(double h, double target) {
    scratch_.resize(rho_.n_cells());
    op_.apply_transpose(rho_.values, scratch_);
    for (std::size_t i = 0; i < scratch_.size(); ++i) {
      double v = rho_.values[i] + h * scratch_[i];
      if (v < 0.0) {
        clipped_ -= v * rho_.h();
        v = 0.0;
      }
      rho_.values[i] = v;
    }
    t_ = last_ ? target : t_ + h;
    ++steps_;
  }

  bool reached(double target) const { return !(target - t_ > 1e-14 * std::max(1.0, target)); }

 private:
  const FpeSetup* setup_;
  GridOperator op_;
  GridDensity rho_;
  std::vector<double> scratch_;
  double t_ = 0.0, clipped_ = 0.0;
  bool last_ = false;
  std::uint64_t steps_ = 0;
};

struct DensityFlow {
  std::vector<double> times;
  std::vector<GridDensity> densities;
  std::vector<double> consensus_path;
  std::vector<double> mean_path;
  double clipped_mass = 0.0;
  std::uint64_t steps = 0;
  std::shared_ptr<const FpeSetup> setup;
};

inline void check_fpe_inputs(const GridDensity& init, const CboParams& p) {
  if (p.dim != 1) throw std::invalid_argument("fpe_solve_1d: only d = 1 is supported");
  const double lo = p.c0[0] - 2.0 * p.r_cut, hi = p.c0[0] + 2.0 * p.r_cut;
  const double tol = 1e-12 * std::max(1.0, std::abs(hi - lo));
  if (std::abs(init.lo - lo) > tol || std::abs(init.hi - hi) > tol)
    throw std::invalid_argument("fpe_solve_1d: grid must span B(c0, 2 r_cut)");
  const double h = init.h();
  for (std::size_t i = 0; i < init.n_cells(); ++i) {
    if (init.values[i] < 0.0) throw std::invalid_argument("fpe_solve_1d: negative initial density");
    if (init.values[i] > 0.0 && std::abs(init.center(i) - p.c0[0]) > p.r_cut + 0.5 * h * (1.0 + 1e-9))
      throw std::invalid_argument("fpe_solve_1d: initial support leaves B(c0, r_cut)");
  }
  if (std::abs(init.mass() - 1.0) > 1e-10) throw std::invalid_argument("fpe_solve_1d: initial mass must be 1");
}

inline DensityFlow fpe_solve_1d(const GridDensity& init, const CboParams& p, const ObjectiveSpec& obj,
                                const CutoffBump& bump, const FpeSettings& settings = {}) {
  check_fpe_inputs(init, p);
  auto setup = std::make_shared<FpeSetup>(FpeSetup{init, p, obj, bump, settings});
  DensityFlow flow;
  flow.setup = setup;
  FpeStepper stepper(*setup);
  for (double target : p.snapshot_times) {
    while (!stepper.reached(target)) {
      const double h = stepper.prepare(target);
      stepper.advance(h, target);
    }
    const GridDensity& rho = stepper.density();
    flow.times.push_back(target);
    flow.densities.push_back(rho);
    flow.consensus_path.push_back(stepper.op().consensus_of(rho.values));
    flow.mean_path.push_back(mean(rho));
  }
  flow.clipped_mass = stepper.clipped_mass();
  flow.steps = stepper.steps();
  return flow;
}

// Monte Carlo stand-in for the mean-field law: replicated n_ref-particle runs.
struct SurrogateSummary {
  std::vector<double> times;
  std::vector<std::vector<Estimate>> mean_path;       // [time][coordinate]
  std::vector<std::vector<Estimate>> consensus_path;  // [time][coordinate]
  std::vector<Estimate> functional;                   // [time], empty without a functional
  std::size_t n_ref = 0, replicas = 0;
};

inline SurrogateSummary surrogate_reference(const CboParams& p, const ObjectiveSpec& obj, const CutoffBump& bump,
                                            const InitialLaw& init, std::size_t n_ref, std::size_t replicas,
                                            std::uint64_t seed,
                                            const std::function<double(const EmpiricalMeasure&)>& functional = {},
                                            std::size_t largest_study_n = 0, unsigned threads = 1) {
  if (largest_study_n > 0 && n_ref < 16 * largest_study_n)
    throw std::invalid_argument("surrogate_reference: n_ref must be at least 16x the largest N under study");
  if (replicas == 0) throw std::invalid_argument("surrogate_reference: need at least one replica");
  CboParams q = p;
  q.n_particles = n_ref;
  q.validate();
  const std::size_t nt = q.snapshot_times.size(), d = q.dim;
  std::vector<double> means(replicas * nt * d), cons(replicas * nt * d), phis(replicas * nt);
  parallel_for(replicas, threads, [&](std::size_t r) {
    const auto rep = static_cast<std::uint32_t>(r);
    EmpiricalMeasure mu = init.sample(n_ref, d, seed, rep);
    check_initial_support(mu, q);
    std::vector<double> x = mu.points;
    SimulationOptions opt;
    opt.replica = rep;
    run_particles(x, mu.weights, q, obj, bump, seed, opt, [&](std::size_t s, double, std::span<const double> st) {
      mu.points.assign(st.begin(), st.end());
      const Point m = mean(mu), c = consensus(mu, obj, q.alpha);
      for (std::size_t k = 0; k < d; ++k) {
        means[(r * nt + s) * d + k] = m[k];
        cons[(r * nt + s) * d + k] = c[k];
      }
      if (functional) phis[r * nt + s] = functional(mu);
    });
  });
  SurrogateSummary out;
  out.times = q.snapshot_times;
  out.n_ref = n_ref;
  out.replicas = replicas;
  out.mean_path.assign(nt, std::vector<Estimate>(d));
  out.consensus_path.assign(nt, std::vector<Estimate>(d));
  for (std::size_t s = 0; s < nt; ++s) {
    for (std::size_t k = 0; k < d; ++k) {
      RunningStats a, b;
      for (std::size_t r = 0; r < replicas; ++r) {
        a.add(means[(r * nt + s) * d + k]);
        b.add(cons[(r * nt + s) * d + k]);
      }
      out.mean_path[s][k] = a.estimate();
      out.consensus_path[s][k] = b.estimate();
    }
  }
  if (functional) {
    out.functional.resize(nt);
    for (std::size_t s = 0; s < nt; ++s) {
      RunningStats a;
      for (std::size_t r = 0; r < replicas; ++r) a.add(phis[r * nt + s]);
      out.functional[s] = a.estimate();
    }
  }
  return out;
}

struct LimitPoint {
  double x = 0.0;
  bool converged = false;
  double window_drift = 0.0;   // spread of M over the final window
  double consensus_gap = 0.0;  // |M(mu_T) - mean(mu_T)|
};

// Average of M(mu_t) over the final 10% of the time grid.
inline LimitPoint estimate_limit_point(const DensityFlow& flow, double tol = 1e-6) {
  if (flow.times.empty()) throw std::invalid_argument("estimate_limit_point: empty flow");
  const double t_end = flow.times.back(), t_start = flow.times.front();
  const double cut = t_end - 0.1 * (t_end - t_start);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < flow.times.size(); ++i) {
    if (flow.times[i] < cut) continue;
    const double m = flow.consensus_path[i];
    sum += m;
    lo = std::min(lo, m);
    hi = std::max(hi, m);
    ++n;
  }
  LimitPoint lp;
  lp.x = sum / static_cast<double>(n);
  lp.window_drift = hi - lo;
  lp.consensus_gap = std::abs(flow.consensus_path.back() - flow.mean_path.back());
  lp.converged = lp.window_drift <= tol && lp.consensus_gap <= tol;
  return lp;
}

struct ExponentialFit {
  double C = 0.0;
  double rate = 0.0;
  double rate_se = 0.0;
  double e_foldings = 0.0;  // log(signal_start / signal_end) over the window
  double floor = 0.0;
  std::size_t window = 0;   // number of points used
  bool valid = false;
};

// Least-squares fit of log s_t = log C - rate t over the leading window where
// s_t exceeds ten times the numerical floor, using indices up to last_index.
// The floor is the largest value over the final 10% of the time grid plus an
// absolute 1e-13.
inline ExponentialFit fit_exponential_decay(std::span<const double> t, std::span<const double> s,
                                            double abs_floor = 1e-13,
                                            std::size_t last_index = std::numeric_limits<std::size_t>::max()) {
  ExponentialFit fit;
  const std::size_t n = t.size();
  if (n < 3 || s.size() != n) return fit;
  const double cut = t.back() - 0.1 * (t.back() - t.front());
  double tail = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (t[i] >= cut) tail = std::max(tail, std::abs(s[i]));
  fit.floor = tail + abs_floor;
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < n && i <= last_index; ++i) {
    const double v = std::abs(s[i]);
    if (!(v > 10.0 * fit.floor)) {
      if (xs.empty()) continue;  // allow the signal to rise above the floor late
      break;
    }
    xs.push_back(t[i]);
    ys.push_back(std::log(v));
  }
  fit.window = xs.size();
  if (xs.size() < 3) return fit;
  const LinearFit lf = ols(xs, ys);
  fit.rate = -lf.slope;
  fit.rate_se = lf.slope_se;
  fit.C = std::exp(lf.intercept);
  fit.e_foldings = ys.front() - ys.back();
  fit.valid = true;
  return fit;
}

// Last snapshot index whose density has a standard deviation of at least
// `cells` grid cells. Past it the grid no longer resolves the collapse and the
// discrete state drifts on the lattice scale.
inline std::size_t resolved_until(const DensityFlow& flow, double cells = 4.0) {
  std::size_t last = 0;
  for (std::size_t t = 0; t < flow.times.size(); ++t) {
    const GridDensity& g = flow.densities[t];
    if (!(std::sqrt(variance(g)) >= cells * g.h())) break;
    last = t;
  }
  return last;
}

struct DecayReport {
  double x_tilde = 0.0;
  double kappa_theory = 0.0;
  double slack = 0.15;
  ExponentialFit mean_fit;
  ExponentialFit consensus_fit;
  double resolved_time = 0.0;  // fits use snapshots up to this time
  bool pass = false;
};

inline DecayReport decay_diagnostics(const DensityFlow& flow, double x_tilde, double kappa_theory,
                                     double slack = 0.15) {
  if (flow.times.size() < 3) throw std::invalid_argument("decay_diagnostics: flow too short");
  if (!(kappa_theory > 0.0)) throw std::invalid_argument("decay_diagnostics: kappa must be positive");
  if (flow.times.back() - flow.times.front() < 5.0 / kappa_theory * (1.0 - 1e-12))
    throw std::invalid_argument("decay_diagnostics: flow must cover at least 5/kappa time units");
  DecayReport rep;
  rep.x_tilde = x_tilde;
  rep.kappa_theory = kappa_theory;
  rep.slack = slack;
  std::vector<double> sm(flow.times.size()), sc(flow.times.size());
  for (std::size_t i = 0; i < flow.times.size(); ++i) {
    sm[i] = std::abs(flow.mean_path[i] - x_tilde);
    sc[i] = std::abs(flow.consensus_path[i] - x_tilde);
  }
  const std::size_t last = resolved_until(flow);
  rep.resolved_time = flow.times[last];
  rep.mean_fit = fit_exponential_decay(flow.times, sm, 1e-13, last);
  rep.consensus_fit = fit_exponential_decay(flow.times, sc, 1e-13, last);
  if (!rep.mean_fit.valid && !rep.consensus_fit.valid)
    throw NoSignal("decay_diagnostics: signal below the numerical floor everywhere");
  const double target = kappa_theory * (1.0 - slack);
  rep.pass = rep.mean_fit.valid && rep.consensus_fit.valid && rep.mean_fit.rate >= target &&
             rep.consensus_fit.rate >= target;
  return rep;
}

}  // namespace cbo
