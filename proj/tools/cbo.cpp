#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cbo/chaos.hpp"
#include "cbo/cli/config.hpp"
#include "cbo/cli/io.hpp"
#include "cbo/dynamics.hpp"
#include "cbo/functionals.hpp"
#include "cbo/lfpe.hpp"
#include "cbo/meanfield.hpp"
#include "cbo/model.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cbo;
using cli::Config;
using cli::CsvWriter;

namespace {

enum Exit { kOk = 0, kUsage = 1, kGate = 2, kRuntime = 3 };

struct Options {
  std::string config_path;
  std::uint64_t seed = 1;
  std::string out;
  bool force = false;
  bool override_gate = false;
  unsigned threads = 0;
};

struct Problem {
  ObjectiveSpec obj;
  CutoffBump bump;
  CboParams params;
  InitialLaw init;
  KappaResult kappa;
};

Problem build_problem(const Config& c) {
  Problem pr;
  pr.obj = quadratic_objective(c.list("objective", "minimizer"), c.number("objective", "scale"));
  const Point center = c.list("cutoff", "center");
  const double radius = c.number("cutoff", "radius");
  pr.bump = make_cutoff(center, radius);
  CboParams& p = pr.params;
  p.lambda = c.number("params", "lambda");
  p.sigma = c.number("params", "sigma");
  p.alpha = c.number("params", "alpha");
  p.dim = c.integer("params", "dim");
  p.c0 = center;
  p.r_cut = radius;
  p.dt = c.number("params", "dt");
  p.horizon = c.number("params", "horizon");
  p.snapshot_times = uniform_time_grid(p.horizon, c.integer("params", "n_snapshots"));
  p.n_particles = c.integer("params", "n_particles");
  if (pr.obj.dim != p.dim) throw std::invalid_argument("objective.minimizer must have params.dim entries");
  p.validate();
  if (c.text("experiment", "init") == "point")
    pr.init = InitialLaw::point_mass(c.list("experiment", "init_at"));
  else
    pr.init = InitialLaw::uniform(c.number("experiment", "init_lo"), c.number("experiment", "init_hi"));
  pr.kappa = kappa(p, pr.obj);
  return pr;
}

FunctionalSpec build_functional(const Config& c) {
  const std::string& f = c.text("experiment", "functional");
  QuadratureSpec q;
  q.xi_max = c.number("experiment", "xi_max");
  q.n_nodes = c.integer("experiment", "n_nodes");
  if (f == "centered_fw") return FunctionalSpec::centered_fw(c.number("experiment", "fw_s"), q);
  if (f == "centered_moment") return FunctionalSpec::centered_moment(c.list("experiment", "moment_coeffs"));
  return FunctionalSpec::variance();
}

GridDensity initial_grid(const Problem& pr, std::size_t cells) {
  const double c0 = pr.params.c0[0], r = pr.params.r_cut;
  return pr.init.grid(c0 - 2.0 * r, c0 + 2.0 * r, cells);
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json config_json(const Config& c) {
  json j = json::object();
  for (const auto& [sec, kv] : c.values())
    for (const auto& [k, v] : kv) j[sec][k] = v;
  return j;
}

json estimate_json(const Estimate& e) { return {{"mean", e.mean}, {"se", e.se}, {"n", e.n}}; }

json fit_json(const ExponentialFit& f) {
  return {{"valid", f.valid}, {"rate", f.rate}, {"rate_se", f.rate_se}, {"e_foldings", f.e_foldings},
          {"floor", f.floor}, {"window", f.window}, {"C", f.C}};
}

// One run directory with its record; created on demand, never shared.
class Run {
 public:
  Run(std::string command, const Config& cfg, const Options& opt)
      : command_(std::move(command)), cfg_(cfg), seed_(opt.seed) {
    id_ = cli::make_run_id(command_, cfg, opt.seed);
    fs::path root = opt.out;
    if (root.empty()) {
      const char* env = std::getenv("CBO_OUT_DIR");
      root = env && *env ? fs::path(env) : fs::path("results");
    }
    dir_ = root / id_;
    started_ = utc_now();
    existing_ = fs::exists(dir_ / "record.json");
  }

  bool exists() const { return existing_; }
  const std::string& id() const { return id_; }
  const fs::path& dir() const { return dir_; }

  void open() {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw cli::IoError("cannot create run directory '" + dir_.string() + "': " + ec.message());
  }

  CsvWriter csv(const std::string& name, std::vector<std::string> columns) {
    outputs_.push_back(name);
    return CsvWriter(dir_ / name, id_, std::move(columns));
  }

  void write_json(const std::string& name, const json& body) {
    json j = body;
    j["run_id"] = id_;
    std::ofstream f(dir_ / name);
    if (!f) throw cli::IoError("cannot write '" + (dir_ / name).string() + "'");
    f << j.dump(2) << "\n";
    outputs_.push_back(name);
  }

  void finish(const json& summary) {
    json rec;
    rec["run_id"] = id_;
    rec["command"] = command_;
    rec["version"] = cli::kVersionTag;
    rec["seed"] = seed_;
    rec["config"] = config_json(cfg_);
    rec["started"] = started_;
    rec["finished"] = utc_now();
    rec["outputs"] = outputs_;
    rec["summary"] = summary;
    const fs::path tmp = dir_ / "record.json.tmp";
    {
      std::ofstream f(tmp);
      if (!f) throw cli::IoError("cannot write '" + tmp.string() + "'");
      f << rec.dump(2) << "\n";
    }
    fs::rename(tmp, dir_ / "record.json");
  }

 private:
  std::string command_;
  Config cfg_;
  std::uint64_t seed_;
  std::string id_, started_;
  fs::path dir_;
  bool existing_ = false;
  std::vector<std::string> outputs_;
};

bool gate_ok(const Problem& pr, const Options& opt) {
  if (!pr.kappa.below_gate) return true;
  std::fprintf(stderr, "parameter gate failed: lambda = %.17g is below required_lambda = %.17g%s\n",
               pr.params.lambda, pr.kappa.required_lambda,
               opt.override_gate ? " (overridden)" : "; use --override-lambda-gate to run anyway");
  return opt.override_gate;
}

int cmd_validate(const Config& cfg, const Options& opt) {
  const Problem pr = build_problem(cfg);
  const Certification cert = certify(pr.obj, pr.params.c0, pr.params.r_cut);
  std::printf("required_lambda = %.17g\n", pr.kappa.required_lambda);
  std::printf("kappa = %.17g\n", pr.kappa.value);
  std::printf("lambda = %.17g (%s)\n", pr.params.lambda, pr.kappa.below_gate ? "below gate" : "passes gate");
  std::printf("certification = %s (samples %zu, growth margin %.3e, |grad E(x*)| %.3e, max |Hess| %.3e)%s%s\n",
              cert.ok ? "ok" : "failed", cert.samples, cert.worst_growth_margin, cert.gradient_norm,
              cert.max_hessian_entry, cert.message.empty() ? "" : ": ", cert.message.c_str());
  if (!cert.ok) return kGate;
  if (pr.kappa.below_gate && !opt.override_gate) {
    std::printf("gate: FAIL\n");
    return kGate;
  }
  std::printf("gate: %s\n", pr.kappa.below_gate ? "overridden" : "PASS");
  return kOk;
}

int cmd_simulate(const Config& cfg, const Options& opt) {
  const Problem pr = build_problem(cfg);
  if (!gate_ok(pr, opt)) return kGate;
  Run run("simulate", cfg, opt);
  if (run.exists() && !opt.force) {
    std::printf("skipped: run %s already recorded in %s\n", run.id().c_str(), run.dir().string().c_str());
    return kOk;
  }
  run.open();
  const CboParams& p = pr.params;
  const EmpiricalMeasure init = pr.init.sample(p.n_particles, p.dim, opt.seed, 0);
  const EnsemblePath path = simulate(p, pr.obj, pr.bump, init, opt.seed);
  std::vector<std::string> cols{"time", "particle"};
  for (std::size_t k = 0; k < p.dim; ++k) cols.push_back("x" + std::to_string(k));
  CsvWriter snaps = run.csv("snapshots.csv", cols);
  std::vector<double> row(cols.size());
  for (std::size_t s = 0; s < path.times.size(); ++s) {
    const EmpiricalMeasure& m = path.snapshots[s];
    for (std::size_t i = 0; i < m.size(); ++i) {
      row[0] = path.times[s];
      row[1] = static_cast<double>(i);
      for (std::size_t k = 0; k < p.dim; ++k) row[2 + k] = m.points[i * p.dim + k];
      snaps.row(row);
    }
  }
  snaps.close();
  std::vector<std::string> ccols{"time"};
  for (std::size_t k = 0; k < p.dim; ++k) ccols.push_back("M" + std::to_string(k));
  CsvWriter cons = run.csv("consensus.csv", ccols);
  std::vector<double> crow(ccols.size());
  for (std::size_t s = 0; s < path.times.size(); ++s) {
    crow[0] = path.times[s];
    for (std::size_t k = 0; k < p.dim; ++k) crow[1 + k] = path.consensus_path[s][k];
    cons.row(crow);
  }
  cons.close();
  double worst = 0.0;
  for (const auto& m : path.snapshots)
    for (std::size_t i = 0; i < m.size(); ++i)
      worst = std::max(worst, std::sqrt(squared_distance(m.point(i), p.c0)) - 2.0 * p.r_cut);
  const bool confined = worst <= 1e-12;
  json summary = {{"claim", "confinement"},
                  {"pass", confined},
                  {"headline",
                   {{"clamp_events", path.clamp_events},
                    {"max_overshoot", path.max_overshoot},
                    {"snapshots", path.times.size()},
                    {"outside_outer_ball", confined ? 0 : 1},
                    {"kappa", pr.kappa.value}}}};
  run.finish(summary);
  std::printf("run %s: %zu snapshots, %llu clamp events -> %s\n", run.id().c_str(), path.times.size(),
              static_cast<unsigned long long>(path.clamp_events), run.dir().string().c_str());
  return kOk;
}

int cmd_meanfield(const Config& cfg, const Options& opt) {
  const Problem pr = build_problem(cfg);
  if (!gate_ok(pr, opt)) return kGate;
  Run run("meanfield", cfg, opt);
  if (run.exists() && !opt.force) {
    std::printf("skipped: run %s already recorded in %s\n", run.id().c_str(), run.dir().string().c_str());
    return kOk;
  }
  run.open();
  FpeSettings fs_;
  fs_.n_cells = cfg.integer("experiment", "n_cells");
  const DensityFlow flow = fpe_solve_1d(initial_grid(pr, fs_.n_cells), pr.params, pr.obj, pr.bump, fs_);
  CsvWriter w = run.csv("flow.csv", {"time", "mean", "consensus", "variance", "mass"});
  for (std::size_t i = 0; i < flow.times.size(); ++i)
    w.row({flow.times[i], flow.mean_path[i], flow.consensus_path[i], variance(flow.densities[i]),
           flow.densities[i].mass()});
  w.close();
  const LimitPoint lp = estimate_limit_point(flow);
  json headline = {{"kappa", pr.kappa.value},   {"x_tilde", lp.x},          {"limit_converged", lp.converged},
                   {"clipped_mass", flow.clipped_mass}, {"steps", flow.steps}};
  json summary = {{"claim", "meanfield_decay"}};
  json warnings = json::array();
  try {
    const DecayReport rep = decay_diagnostics(flow, lp.x, pr.kappa.value, cfg.number("experiment", "decay_slack"));
    headline["mean_fit"] = fit_json(rep.mean_fit);
    headline["consensus_fit"] = fit_json(rep.consensus_fit);
    headline["resolved_time"] = rep.resolved_time;
    summary["pass"] = rep.pass;
  } catch (const NoSignal& e) {
    warnings.push_back(std::string("no signal: ") + e.what());
    summary["pass"] = false;
    std::fprintf(stderr, "warning: %s\n", e.what());
  } catch (const std::invalid_argument& e) {
    warnings.push_back(e.what());
    summary["pass"] = false;
    std::fprintf(stderr, "warning: %s\n", e.what());
  }
  summary["headline"] = headline;
  summary["warnings"] = warnings;
  run.finish(summary);
  std::printf("run %s: x_tilde = %.10g, pass = %s -> %s\n", run.id().c_str(), lp.x,
              summary["pass"].get<bool>() ? "yes" : "no", run.dir().string().c_str());
  return kOk;
}

int cmd_chaos(const Config& cfg, const Options& opt) {
  const Problem pr = build_problem(cfg);
  if (!gate_ok(pr, opt)) return kGate;
  Run run("chaos", cfg, opt);
  if (run.exists() && !opt.force) {
    std::printf("skipped: run %s already recorded in %s\n", run.id().c_str(), run.dir().string().c_str());
    return kOk;
  }
  std::vector<std::size_t> n_list;
  for (double v : cfg.list("experiment", "n_list")) {
    if (v < 2 || v != std::floor(v)) throw std::invalid_argument("experiment.n_list entries must be integers >= 2");
    n_list.push_back(static_cast<std::size_t>(v));
  }
  const std::size_t replicas = cfg.integer("experiment", "replicas");
  const unsigned threads = resolve_threads(opt.threads);
  run.open();
  json summary;
  if (cfg.text("experiment", "study") == "weak") {
    const FunctionalSpec phi = build_functional(cfg);
    std::vector<double> reference;
    if (cfg.text("experiment", "reference") == "grid") {
      FpeSettings fs_;
      fs_.n_cells = cfg.integer("experiment", "n_cells");
      const DensityFlow flow = fpe_solve_1d(initial_grid(pr, fs_.n_cells), pr.params, pr.obj, pr.bump, fs_);
      for (const auto& g : flow.densities) reference.push_back(eval_phi(phi, g));
    } else {
      const std::size_t largest = *std::max_element(n_list.begin(), n_list.end());
      const SurrogateSummary s = surrogate_reference(
          pr.params, pr.obj, pr.bump, pr.init, cfg.integer("experiment", "n_ref"),
          cfg.integer("experiment", "ref_replicas"), rng::splitmix64(opt.seed ^ 0x5eedULL),
          [&](const EmpiricalMeasure& m) { return eval_phi(phi, m); }, largest, threads);
      for (const auto& e : s.functional) reference.push_back(e.mean);
    }
    const WeakErrorStudy st =
        weak_error_study(pr.params, pr.obj, pr.bump, pr.init, phi, n_list, replicas, opt.seed, reference, threads);
    CsvWriter w = run.csv("study.csv", {"N", "sup_error", "sup_error_se", "sup_time"});
    for (std::size_t i = 0; i < st.n_list.size(); ++i)
      w.row({static_cast<double>(st.n_list[i]), st.sup_errors[i].mean, st.sup_errors[i].se, st.sup_times[i]});
    w.close();
    CsvWriter e = run.csv("errors.csv", {"N", "time", "error", "error_se", "reference"});
    for (std::size_t i = 0; i < st.n_list.size(); ++i)
      for (std::size_t k = 0; k < st.t_grid.size(); ++k)
        e.row({static_cast<double>(st.n_list[i]), st.t_grid[k], st.errors[i][k].mean, st.errors[i][k].se,
               st.reference[k]});
    e.close();
    json headline = {{"functional", phi.name()}, {"replicas", replicas}, {"inconclusive", st.inconclusive}};
    bool pass = false;
    if (st.slope) {
      headline["slope"] = st.slope->slope;
      headline["slope_ci"] = {st.slope->ci_lo, st.slope->ci_hi};
      pass = st.slope->slope >= -1.3 && st.slope->slope <= -0.7;
    }
    summary = {{"claim", "weak_error_rate"}, {"pass", pass}, {"headline", headline}};
    std::printf("run %s: slope = %s%s\n", run.id().c_str(),
                st.slope ? cli::format_number(st.slope->slope).c_str() : "n/a",
                st.inconclusive ? " (inconclusive)" : "");
  } else {
    DistanceMetric metric = DistanceMetric::w2();
    if (cfg.text("experiment", "metric") == "fw") {
      QuadratureSpec q;
      q.xi_max = cfg.number("experiment", "xi_max");
      q.n_nodes = cfg.integer("experiment", "n_nodes");
      metric = DistanceMetric::fw(cfg.number("experiment", "fw_s"), q);
    }
    const JointDecayStudy st = joint_decay_study(pr.params, pr.obj, pr.bump, pr.init, metric, n_list, replicas,
                                                 opt.seed, pr.kappa.value, cfg.number("experiment", "decay_slack"),
                                                 threads);
    CsvWriter w = run.csv("values.csv", {"N", "time", "mean_dist2", "se"});
    for (std::size_t i = 0; i < st.n_list.size(); ++i)
      for (std::size_t k = 0; k < st.t_grid.size(); ++k)
        w.row({static_cast<double>(st.n_list[i]), st.t_grid[k], st.values[i][k].mean, st.values[i][k].se});
    w.close();
    json headline = {{"metric", metric.name()},
                     {"fit_C", st.fit.c},
                     {"fit_rate", st.fit.rate},
                     {"fit_converged", st.fit.converged},
                     {"theory_rate", metric.rate_multiple() * pr.kappa.value}};
    if (st.early_rate) headline["early_rate"] = *st.early_rate;
    if (st.plateau) {
      headline["plateau_slope"] = st.plateau->slope;
      headline["plateau_slope_ci"] = {st.plateau->ci_lo, st.plateau->ci_hi};
    }
    headline["rate_pass"] = st.rate_pass;
    headline["plateau_pass"] = st.plateau_pass;
    summary = {{"claim", metric.kind == DistanceMetric::Kind::w2 ? "w2_joint_decay" : "fw_joint_decay"},
               {"pass", st.pass()},
               {"headline", headline}};
    std::printf("run %s: early rate = %s, plateau slope = %s\n", run.id().c_str(),
                st.early_rate ? cli::format_number(*st.early_rate).c_str() : "n/a",
                st.plateau ? cli::format_number(st.plateau->slope).c_str() : "n/a");
  }
  run.finish(summary);
  return kOk;
}

int cmd_lfpe(const Config& cfg, const Options& opt) {
  const Problem pr = build_problem(cfg);
  if (!gate_ok(pr, opt)) return kGate;
  Run run("lfpe", cfg, opt);
  if (run.exists() && !opt.force) {
    std::printf("skipped: run %s already recorded in %s\n", run.id().c_str(), run.dir().string().c_str());
    return kOk;
  }
  run.open();
  const std::string kind = cfg.text("experiment", "kind");
  FpeSettings fs_;
  fs_.n_cells = cfg.integer("experiment", "n_cells");
  auto flow = std::make_shared<const DensityFlow>(
      fpe_solve_1d(initial_grid(pr, fs_.n_cells), pr.params, pr.obj, pr.bump, fs_));
  const LimitPoint lp = estimate_limit_point(*flow);
  double width = cfg.number("experiment", "mollify_width");
  if (width <= 0.0) width = default_mollify_width(flow->setup->init);
  const double z = cfg.number("experiment", "z"), z2 = cfg.number("experiment", "z2");
  json summary;
  if (kind == "m1" || kind == "d1") {
    LinearizedSystem sys(flow);
    if (kind == "m1")
      sys.add(m1_initial(*flow, z, width), FlowKind::m1);
    else
      sys.add(d1_initial(*flow, z, width), FlowKind::d1);
    const LinearizedFlow lf = std::move(sys.run().front());
    const TestDictionary dict(flow->setup->init.lo, flow->setup->init.hi, cfg.integer("experiment", "dictionary_size"),
                              cfg.integer("experiment", "dictionary_seed"));
    const ProjectionReport rep = projection_decay(lf, lp.x, dict);
    CsvWriter w = run.csv("residual.csv", {"time", "residual", "probe2"});
    for (std::size_t i = 0; i < rep.times.size(); ++i) w.row({rep.times[i], rep.residual_curve[i], rep.probe_curve[i]});
    w.close();
    const BoundednessCheck bc = check_bounded(rep.times, rep.probe_curve);
    json pj = {{"kind", kind},
               {"x_tilde", rep.x_tilde},
               {"q_infty", rep.q_infty},
               {"fit", fit_json(rep.fit)},
               {"resolved_time", rep.resolved_time},
               {"uniform_bound", rep.uniform_bound},
               {"probe_at_t1", bc.reference},
               {"max_mass_drift", lf.max_mass_drift}};
    if (rep.fitted_rate) pj["fitted_rate"] = *rep.fitted_rate;
    run.write_json("projection.json", pj);
    const bool decays = rep.fitted_rate.has_value() && *rep.fitted_rate > 0.0;
    const bool bounded = rep.uniform_bound <= 2.0 * bc.reference;
    summary = {{"claim", "linearized_first_order"}, {"pass", decays && bounded}, {"headline", pj}};
    std::printf("run %s: %s residual e-foldings %.3g, rate %.4g, uniform bound %.4g (t=1: %.4g)\n",
                run.id().c_str(), kind.c_str(), rep.fit.e_foldings, rep.fit.rate, rep.uniform_bound, bc.reference);
  } else if (kind == "m2" || kind == "d2") {
    const FunctionalSpec phi = build_functional(cfg);
    const SecondOrderFlows flows = kind == "m2" ? m2_flow(flow, z, z2, width) : d2_flow(flow, z, z2, width);
    const ComposeCurve curve = compose_dU2(flows, phi, *flow);
    CsvWriter w = run.csv("compose.csv", {"time", "value"});
    for (std::size_t i = 0; i < curve.times.size(); ++i) w.row({curve.times[i], curve.values[i]});
    w.close();
    json headline = {{"kind", kind}, {"functional", phi.name()}, {"max_mass_drift", flows.second.max_mass_drift}};
    bool pass;
    if (kind == "d2") {
      const ExponentialFit fit = fit_curve_decay(curve, *flow);
      headline["fit"] = fit_json(fit);
      headline["resolved_time"] = flow->times[resolved_until(*flow)];
      pass = fit.valid && fit.rate > 0.0 && fit.e_foldings >= 3.0;
    } else {
      const BoundednessCheck bc = check_bounded(curve.times, curve.values);
      headline["value_at_t1"] = bc.reference;
      headline["sup_after_t1"] = bc.sup_after;
      headline["sup_all"] = bc.sup_all;
      pass = bc.pass;
    }
    summary = {{"claim", "linearized_second_order"}, {"pass", pass}, {"headline", headline}};
    std::printf("run %s: %s compose curve, pass = %s\n", run.id().c_str(), kind.c_str(), pass ? "yes" : "no");
  } else {
    const double x = cfg.number("experiment", "tangent_x");
    const std::size_t reps = cfg.integer("experiment", "tangent_replicas");
    TangentOptions to;
    to.dt = cfg.number("experiment", "tangent_dt");
    to.threads = resolve_threads(opt.threads);
    std::vector<double> u{0.0};
    for (double off : cfg.list("experiment", "tangent_offsets")) u.push_back(off);
    std::sort(u.begin(), u.end());
    const auto path = [&](double t) {
      const auto& ts = flow->times;
      if (t <= ts.front()) return flow->consensus_path.front();
      if (t >= ts.back()) return flow->consensus_path.back();
      const auto it = std::upper_bound(ts.begin(), ts.end(), t);
      const std::size_t j = static_cast<std::size_t>(it - ts.begin());
      const double a = (t - ts[j - 1]) / (ts[j] - ts[j - 1]);
      return (1.0 - a) * flow->consensus_path[j - 1] + a * flow->consensus_path[j];
    };
    const auto yrows =
        tangent_flow_y(pr.params.lambda, pr.params.sigma, pr.bump, path, 0.0, x, u, reps, opt.seed, to);
    std::vector<TangentOrder> orders;
    for (int p = 0; p <= 3; ++p)
      for (int b = 0; p + b <= 3; ++b) orders.push_back({p, b});
    const auto srows = tangent_flow_s(pr.params.lambda, pr.params.sigma, pr.bump, 0.0, x, u, reps,
                                      rng::splitmix64(opt.seed), orders, to);
    bool pass = true;
    CsvWriter wy = run.csv("tangent_y.csv", {"u", "mean_d1", "se_d1", "target_d1", "mean_d2", "se_d2", "mean_d1_sq",
                                             "mean_d1_quartic"});
    for (const auto& r : yrows) {
      const double target = std::exp(-pr.params.lambda * r.u);
      wy.row({r.u, r.d1.mean, r.d1.se, target, r.d2.mean, r.d2.se, r.d1_sq.mean, r.d1_quartic.mean});
      if (r.u > 0.0) {
        pass = pass && std::abs(r.d1.mean - target) <= 3.0 * r.d1.se + 1e-15;
        pass = pass && std::abs(r.d2.mean) <= 3.0 * r.d2.se + 1e-15;
      }
    }
    wy.close();
    CsvWriter ws = run.csv("tangent_s.csv", {"u", "p", "beta", "mean", "se", "envelope"});
    std::size_t violations = 0;
    for (const auto& r : srows) {
      ws.row({r.u, static_cast<double>(r.order.p), static_cast<double>(r.order.beta), r.estimate.mean,
              r.estimate.se, r.envelope});
      if (r.estimate.mean > r.envelope * (1.0 + 3.0 * r.estimate.se)) ++violations;
    }
    ws.close();
    pass = pass && violations == 0;
    summary = {{"claim", "tangent_flows"},
               {"pass", pass},
               {"headline", {{"x", x}, {"replicas", reps}, {"envelope_violations", violations}}}};
    std::printf("run %s: tangent flows at x = %.4g, envelope violations = %zu\n", run.id().c_str(), x, violations);
  }
  run.finish(summary);
  return kOk;
}

const std::vector<std::string>& claim_rows() {
  static const std::vector<std::string> rows = {"weak_error_rate",        "meanfield_decay",
                                                "fw_joint_decay",         "w2_joint_decay",
                                                "linearized_first_order", "linearized_second_order",
                                                "tangent_flows",          "confinement"};
  return rows;
}

int cmd_report(const std::string& dir) {
  struct Row {
    std::string status = "not run", run_id, finished, headline;
  };
  std::map<std::string, Row> rows;
  for (const auto& c : claim_rows()) rows[c] = Row{};
  std::vector<std::string> invalid;
  std::error_code ec;
  if (fs::is_directory(dir, ec)) {
    std::vector<fs::path> records;
    for (const auto& e : fs::directory_iterator(dir, ec))
      if (e.is_directory() && fs::exists(e.path() / "record.json")) records.push_back(e.path() / "record.json");
    std::sort(records.begin(), records.end());
    for (const auto& path : records) {
      try {
        std::ifstream f(path);
        const json rec = json::parse(f);
        const json& s = rec.at("summary");
        const std::string claim = s.at("claim").get<std::string>();
        const std::string fin = rec.at("finished").get<std::string>();
        rec.at("run_id").get<std::string>();
        auto it = rows.find(claim);
        if (it == rows.end()) throw std::runtime_error("unknown claim '" + claim + "'");
        if (it->second.status != "not run" && it->second.finished > fin) continue;
        it->second = {s.at("pass").get<bool>() ? "pass" : "fail", rec.at("run_id").get<std::string>(), fin,
                      s.contains("headline") ? s.at("headline").dump() : ""};
      } catch (const std::exception& e) {
        invalid.push_back(path.string() + ": " + e.what());
      }
    }
  }
  std::printf("%-26s %-8s %-30s %s\n", "claim", "status", "run_id", "headline");
  for (const auto& c : claim_rows()) {
    const Row& r = rows[c];
    std::printf("%-26s %-8s %-30s %s\n", c.c_str(), r.status.c_str(), r.run_id.empty() ? "-" : r.run_id.c_str(),
                r.headline.c_str());
  }
  for (const auto& s : invalid) std::printf("%-26s %-8s %s\n", "-", "invalid", s.c_str());
  return invalid.empty() ? kOk : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consensus-based optimization verification tool"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub, bool with_seed) {
    sub->add_option("--config", opt.config_path, "configuration file")->required()->check(CLI::ExistingFile);
    if (with_seed) {
      sub->add_option("--seed", opt.seed, "master seed");
      sub->add_option("--out", opt.out, "output root (default $CBO_OUT_DIR or ./results)");
      sub->add_flag("--force", opt.force, "rerun even if the run id is already recorded");
      sub->add_option("--threads", opt.threads, "worker threads (0 = auto)");
    }
    sub->add_flag("--override-lambda-gate", opt.override_gate, "run below the required lambda");
  };
  auto* validate = app.add_subcommand("validate", "check the parameter gate and objective constants");
  add_common(validate, false);
  auto* simulate_cmd = app.add_subcommand("simulate", "run the particle system");
  add_common(simulate_cmd, true);
  auto* meanfield = app.add_subcommand("meanfield", "solve the mean-field equation and fit its decay");
  add_common(meanfield, true);
  auto* chaos = app.add_subcommand("chaos", "finite-N weak-error or joint decay study");
  add_common(chaos, true);
  auto* lfpe = app.add_subcommand("lfpe", "linearized flows, compositions and tangent processes");
  add_common(lfpe, true);
  auto* report = app.add_subcommand("report", "summarize recorded runs");
  std::string report_dir;
  report->add_option("dir", report_dir, "results directory (default $CBO_OUT_DIR or ./results)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (report->parsed()) {
      if (report_dir.empty()) {
        const char* env = std::getenv("CBO_OUT_DIR");
        report_dir = env && *env ? env : "results";
      }
      return cmd_report(report_dir);
    }
    Config cfg;
    try {
      cfg = Config::load(opt.config_path);
    } catch (const cli::ConfigError& e) {
      std::fprintf(stderr, "config error: %s\n", e.what());
      return kUsage;
    }
    try {
      build_problem(cfg);
    } catch (const std::invalid_argument& e) {
      std::fprintf(stderr, "config error: %s\n", e.what());
      return kUsage;
    }
    if (validate->parsed()) return cmd_validate(cfg, opt);
    if (simulate_cmd->parsed()) return cmd_simulate(cfg, opt);
    if (meanfield->parsed()) return cmd_meanfield(cfg, opt);
    if (chaos->parsed()) return cmd_chaos(cfg, opt);
    if (lfpe->parsed()) return cmd_lfpe(cfg, opt);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
  return kUsage;
}
