#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/tools/minima.hpp>

#include "cbo/dynamics.hpp"
#include "cbo/functionals.hpp"
#include "cbo/meanfield.hpp"

namespace cbo {

struct LogLogFit {
  double slope = 0.0, intercept = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;  // 95% interval for the slope
  double slope_se = 0.0;
  std::size_t n = 0;
};

// OLS of log y on log x with a Student-t interval from the residual variance.
inline LogLogFit fit_loglog(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("fit_loglog: size mismatch");
  if (xs.size() < 3) throw std::invalid_argument("fit_loglog: need at least three points");
  std::vector<double> lx(xs.size()), ly(ys.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) throw std::invalid_argument("fit_loglog: values must be positive");
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(ys[i]);
  }
  const LinearFit f = ols(lx, ly);
  LogLogFit out;
  out.slope = f.slope;
  out.intercept = f.intercept;
  out.slope_se = f.slope_se;
  out.n = f.n;
  const double q = t_quantile(0.05, f.n - 2);
  out.ci_lo = f.slope - q * f.slope_se;
  out.ci_hi = f.slope + q * f.slope_se;
  return out;
}

// Seed of the ensemble family with N particles; distinct N never share streams.
inline std::uint64_t seed_for_size(std::uint64_t seed, std::size_t n) {
  return rng::splitmix64(seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(n));
}

// values[replica][snapshot] of f(nu^N_t) for replicated N-particle runs.
inline std::vector<std::vector<double>> replicate_functional(
    const CboParams& p, const ObjectiveSpec& obj, const CutoffBump& bump, const InitialLaw& init, std::size_t n,
    std::size_t replicas, std::uint64_t seed, const std::function<double(const EmpiricalMeasure&)>& f,
    unsigned threads) {
  CboParams q = p;
  q.n_particles = n;
  q.validate();
  const std::uint64_t s = seed_for_size(seed, n);
  std::vector<std::vector<double>> out(replicas, std::vector<double>(q.snapshot_times.size()));
  parallel_for(replicas, threads, [&](std::size_t r) {
    const auto rep = static_cast<std::uint32_t>(r);
    EmpiricalMeasure mu = init.sample(n, q.dim, s, rep);
    check_initial_support(mu, q);
    std::vector<double> x = mu.points;
    SimulationOptions opt;
    opt.replica = rep;
    run_particles(x, mu.weights, q, obj, bump, s, opt, [&](std::size_t k, double, std::span<const double> st) {
      mu.points.assign(st.begin(), st.end());
      out[r][k] = f(mu);
    });
  });
  return out;
}

struct WeakErrorStudy {
  FunctionalSpec functional;
  std::vector<std::size_t> n_list;
  std::size_t replicas = 0;
  std::vector<double> t_grid;
  std::vector<double> reference;                 // Phi(bar nu_t)
  std::vector<std::vector<Estimate>> errors;     // [N][t] of E Phi(nu^N_t) - Phi(bar nu_t)
  std::vector<Estimate> sup_errors;              // [N] entry with the largest |error|
  std::vector<double> sup_times;                 // [N]
  std::optional<LogLogFit> slope;
  bool inconclusive = false;
};

// reference: Phi(bar nu_t) on p.snapshot_times.
inline WeakErrorStudy weak_error_study(const CboParams& p, const ObjectiveSpec& obj, const CutoffBump& bump,
                                       const InitialLaw& init, const FunctionalSpec& phi,
                                       std::span<const std::size_t> n_list, std::size_t replicas, std::uint64_t seed,
                                       std::span<const double> reference, unsigned threads = 1) {
  if (replicas < 200) throw std::invalid_argument("weak_error_study: need at least 200 replicas per N");
  if (n_list.empty()) throw std::invalid_argument("weak_error_study: empty N list");
  if (reference.size() != p.snapshot_times.size())
    throw std::invalid_argument("weak_error_study: reference does not match the time grid");
  phi.validate(p.dim);
  WeakErrorStudy st;
  st.functional = phi;
  st.n_list.assign(n_list.begin(), n_list.end());
  st.replicas = replicas;
  st.t_grid = p.snapshot_times;
  st.reference.assign(reference.begin(), reference.end());
  const std::size_t nt = st.t_grid.size();
  for (std::size_t n : n_list) {
    const auto vals = replicate_functional(p, obj, bump, init, n, replicas, seed,
                                           [&](const EmpiricalMeasure& m) { return eval_phi(phi, m); }, threads);
    std::vector<Estimate> row(nt);
    std::size_t best = 0;
    for (std::size_t k = 0; k < nt; ++k) {
      RunningStats rs;
      for (std::size_t r = 0; r < replicas; ++r) rs.add(vals[r][k] - reference[k]);
      row[k] = rs.estimate();
      if (std::abs(row[k].mean) > std::abs(row[best].mean)) best = k;
    }
    st.sup_errors.push_back(row[best]);
    st.sup_times.push_back(st.t_grid[best]);
    st.errors.push_back(std::move(row));
  }
  for (const Estimate& e : st.sup_errors)
    if (std::abs(e.mean) < 2.0 * e.se) st.inconclusive = true;
  if (n_list.size() >= 3 && !st.inconclusive) {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < n_list.size(); ++i) {
      xs.push_back(static_cast<double>(n_list[i]));
      ys.push_back(std::abs(st.sup_errors[i].mean));
    }
    st.slope = fit_loglog(xs, ys);
  }
  return st;
}

struct DistanceMetric {
  enum class Kind { w2, fw };
  Kind kind = Kind::w2;
  double s = 4.5;
  QuadratureSpec quad{};

  static DistanceMetric w2() { return {}; }
  static DistanceMetric fw(double s, QuadratureSpec quad = {}) { return {Kind::fw, s, quad}; }
  std::string name() const { return kind == Kind::w2 ? "w2" : "fw"; }
  // Rate predicted for E[dist^2] in units of kappa.
  double rate_multiple() const { return kind == Kind::w2 ? 1.0 : 2.0; }

  // dist^2(centered mu, delta_0)
  double squared(const EmpiricalMeasure& mu) const {
    if (kind == Kind::w2) return variance(mu);
    return eval_phi(FunctionalSpec::centered_fw(s, quad), mu);
  }
};

struct JointFit {
  double c = 0.0, rate = 0.0;
  double rms_log_residual = 0.0;
  bool converged = false;
};

// Least squares in log space for v(N, t) = C (1/N + e^{-r t}): C in closed
// form, r by Brent minimization of the profile.
inline JointFit fit_joint_model(std::span<const std::size_t> n_list, std::span<const double> t_grid,
                                const std::vector<std::vector<double>>& values, double rate_hi) {
  struct Obs {
    double inv_n, t, log_v;
  };
  std::vector<Obs> obs;
  for (std::size_t i = 0; i < n_list.size(); ++i)
    for (std::size_t k = 0; k < t_grid.size(); ++k)
      if (values[i][k] > 0.0)
        obs.push_back({1.0 / static_cast<double>(n_list[i]), t_grid[k], std::log(values[i][k])});
  JointFit fit;
  if (obs.size() < 3) return fit;
  auto profile = [&](double r, double& log_c) {
    double acc = 0.0;
    for (const Obs& o : obs) acc += o.log_v - std::log(o.inv_n + std::exp(-r * o.t));
    log_c = acc / static_cast<double>(obs.size());
    double rss = 0.0;
    for (const Obs& o : obs) {
      const double e = o.log_v - log_c - std::log(o.inv_n + std::exp(-r * o.t));
      rss += e * e;
    }
    return rss;
  };
  double log_c = 0.0;
  const auto best = boost::math::tools::brent_find_minima([&](double r) { return profile(r, log_c); }, 0.0,
                                                          rate_hi, 40);
  const double rss = profile(best.first, log_c);
  fit.rate = best.first;
  fit.c = std::exp(log_c);
  fit.rms_log_residual = std::sqrt(rss / static_cast<double>(obs.size()));
  fit.converged = std::isfinite(fit.c) && best.first > 1e-6 * rate_hi && best.first < rate_hi * (1.0 - 1e-6);
  return fit;
}

struct JointDecayStudy {
  DistanceMetric metric;
  std::vector<std::size_t> n_list;
  std::size_t replicas = 0;
  std::vector<double> t_grid;
  std::vector<std::vector<Estimate>> values;  // [N][t] of E dist^2(centered nu^N_t, delta_0)
  JointFit fit;
  double kappa = 0.0, slack = 0.15;
  std::optional<double> early_rate;   // log-linear fit over t <= 4/kappa at the largest N
  std::optional<LogLogFit> plateau;   // values vs N at the largest t
  bool rate_pass = false, plateau_pass = false;
  bool pass() const { return rate_pass && plateau_pass; }
};

inline JointDecayStudy joint_decay_study(const CboParams& p, const ObjectiveSpec& obj, const CutoffBump& bump,
                                         const InitialLaw& init, const DistanceMetric& metric,
                                         std::span<const std::size_t> n_list, std::size_t replicas,
                                         std::uint64_t seed, double kappa_theory, double slack = 0.15,
                                         unsigned threads = 1) {
  if (replicas < 2) throw std::invalid_argument("joint_decay_study: need replicas");
  if (n_list.empty()) throw std::invalid_argument("joint_decay_study: empty N list");
  if (metric.kind == DistanceMetric::Kind::fw)
    FunctionalSpec::centered_fw(metric.s, metric.quad).validate(p.dim);
  JointDecayStudy st;
  st.metric = metric;
  st.n_list.assign(n_list.begin(), n_list.end());
  st.replicas = replicas;
  st.t_grid = p.snapshot_times;
  st.kappa = kappa_theory;
  st.slack = slack;
  const std::size_t nt = st.t_grid.size();
  std::vector<std::vector<double>> means;
  for (std::size_t n : n_list) {
    const auto vals = replicate_functional(p, obj, bump, init, n, replicas, seed,
                                           [&](const EmpiricalMeasure& m) { return metric.squared(m); }, threads);
    std::vector<Estimate> row(nt);
    std::vector<double> mrow(nt);
    for (std::size_t k = 0; k < nt; ++k) {
      RunningStats rs;
      for (std::size_t r = 0; r < replicas; ++r) rs.add(vals[r][k]);
      row[k] = rs.estimate();
      mrow[k] = row[k].mean;
    }
    st.values.push_back(std::move(row));
    means.push_back(std::move(mrow));
  }
  const double theory = metric.rate_multiple() * kappa_theory;
  st.fit = fit_joint_model(n_list, st.t_grid, means, 10.0 * theory);

  std::size_t largest = 0;
  for (std::size_t i = 0; i < n_list.size(); ++i)
    if (n_list[i] > n_list[largest]) largest = i;
  std::vector<double> ts, ls;
  for (std::size_t k = 0; k < nt; ++k) {
    if (st.t_grid[k] > 4.0 / kappa_theory * (1.0 + 1e-12)) continue;
    if (!(means[largest][k] > 0.0)) continue;
    ts.push_back(st.t_grid[k]);
    ls.push_back(std::log(means[largest][k]));
  }
  if (ts.size() >= 2) st.early_rate = -ols(ts, ls).slope;
  st.rate_pass = st.early_rate && *st.early_rate >= theory * (1.0 - slack);

  if (n_list.size() >= 3) {
    std::vector<double> xs, ys;
    bool positive = true;
    for (std::size_t i = 0; i < n_list.size(); ++i) {
      xs.push_back(static_cast<double>(n_list[i]));
      ys.push_back(means[i][nt - 1]);
      positive = positive && ys.back() > 0.0;
    }
    if (positive) {
      st.plateau = fit_loglog(xs, ys);
      st.plateau_pass = st.plateau->slope >= -1.3 && st.plateau->slope <= -0.7;
    }
  }
  return st;
}

}  // namespace cbo
