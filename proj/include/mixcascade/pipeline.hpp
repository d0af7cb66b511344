#ifndef MIXCASCADE_PIPELINE_HPP
#define MIXCASCADE_PIPELINE_HPP

/// @file pipeline.hpp
/// @brief Cascades of transfers, decay records, rate fits and reports.
///
/// Each step runs its protocol from delta_{k,0}, is projected to beta delta_{k,1}
/// and handed to the next step as a fresh delta_{k,0}; the lost log-mass is
/// carried in a ledger.  Time is physical: a step of rescaled duration T lasts
/// T / L.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "config.hpp"
#include "controller.hpp"
#include "pde_bridge.hpp"
#include "planner.hpp"

namespace mixcascade {

enum class DecayModel { DoubleExp, TSquared, Exp };

inline const char* model_name(DecayModel m) {
  switch (m) {
    case DecayModel::DoubleExp: return "double-exp";
    case DecayModel::TSquared: return "t2";
    default: return "exp";
  }
}

inline DecayModel parse_model(const std::string& s) {
  if (s == "double-exp") return DecayModel::DoubleExp;
  if (s == "t2") return DecayModel::TSquared;
  if (s == "exp") return DecayModel::Exp;
  throw Error(Errc::BadInput, "unknown decay model '" + s + "' (double-exp, t2, exp)");
}

struct DecaySample {
  double t = 0;
  double log_mass = 0;
  /// sum |m|^2 |theta_m|^2 / sum |theta_m|^2
  double dirichlet_ratio = 0;
  int step = -1;
  std::string phase;
};

struct OracleSummary {
  std::int64_t box = 0;
  std::size_t sites = 0;
  std::size_t checkpoints = 0;
  double max_rel_l2 = 0;
  double max_off_line = 0;
  double max_shell = 0;
  /// Largest mass fraction on sites below the support floor, over checkpoints.
  double support_leak = 0;
  std::vector<PhaseResidual> energy;
  double seconds = 0;

  double max_energy_residual() const {
    double m = 0;
    for (const auto& e : energy) m = std::max(m, e.residual);
    return m;
  }
};

struct StepLog {
  int index = 0;
  std::string role;
  Direction direction = Direction::Uphill;
  LatticeVector a, b, c;
  double L = 0, A = 0, alpha = 0;
  double t_start = 0;
  double duration = 0;
  double physical_duration = 0;
  cplx beta;
  double residual = 0;
  double log_mass_start = 0, log_mass_end = 0;
  double M_margin = 0, S_margin = 0, spacing_margin = 0;
  /// Analytic W^{n,infty} bounds, n = 0, 1, ...
  std::vector<double> sobolev;
  /// Grid-sampled W^{n,infty} values, maximized over segment midpoints.
  std::vector<double> grid_sup;
  std::vector<Phase> phases;
  ContractionLog contraction;
  double wait = 0, push = 0, eta = 0, push_sup = 0;
  double stage1_z0 = 0, stage1_z1 = 0, push_rho = 0;
  std::int64_t support_floor = 0;
  double support_leak = 0;
  bool divergence_exact = false;
  double divergence = 0;
  std::vector<PhaseResidual> energy;
  std::size_t integrator_steps = 0;
  std::optional<OracleSummary> oracle;

  double max_energy_residual() const {
    double m = 0;
    for (const auto& e : energy) m = std::max(m, e.residual);
    return m;
  }
};

struct FitResult {
  DecayModel model = DecayModel::Exp;
  std::vector<double> params;
  double residual = 0;
  std::size_t n = 0;
};

struct DecayReport {
  CascadePlan plan;
  RunConfig config;
  std::vector<StepLog> steps;
  std::vector<DecaySample> samples;
  std::map<std::string, FitResult> fits;
  /// sum over steps of ln|beta|^2 - 2 A T.
  double ledger_log_mass = 0;
  double seconds = 0;
};

struct RunOptions {
  bool oracle = false;
  bool fits = true;
};

namespace detail {

inline std::string phase_at(const std::vector<Phase>& phases, double s) {
  for (const auto& p : phases)
    if (s >= p.t0 && s < p.t1) return p.label;
  return phases.empty() ? std::string() : phases.back().label;
}

inline double support_fraction_below(const StateVector& z, const TransferStep& st, std::int64_t floor2) {
  double low = 0, all = 0;
  for (int k = z.window.k_min; k <= z.window.k_max; ++k) {
    const double w = std::norm(z.at(k));
    all += w;
    if (line_norm2(st.a, st.b, k) < floor2) low += w;
  }
  return all > 0 ? low / all : 0.0;
}

inline double lifted_dirichlet(const StateVector& z, const TransferStep& st) {
  double num = 0, den = 0;
  for (int k = z.window.k_min; k <= z.window.k_max; ++k) {
    const double w = std::norm(z.at(k));
    num += static_cast<double>(line_norm2(st.a, st.b, k)) * w;
    den += w;
  }
  return den > 0 ? num / den : 0.0;
}

}  // namespace detail

/// Oracle run of one synthesized step against the lifted reduced trajectory.
inline OracleSummary run_step_oracle(const TransferStep& st, const ProtocolResult& res, const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  OracleSummary out;
  const LineOperator op = st.spectrum.line_operator();
  const double T = res.duration();
  const double L = st.spectrum.L_value();
  const int n_cp = std::max(1, cfg.oracle.checkpoints);

  IntegratorConfig ic = cfg.controller.integrator;
  ic.snapshot_stride = 0;
  OracleConfig oc;
  oc.dt_safety = ic.dt_safety;
  oc.landing_factor = ic.landing_factor;
  oc.shell_tolerance = cfg.oracle.shell_tolerance;
  oc.spread_step = cfg.oracle.spread_step;
  for (int i = 1; i <= n_cp; ++i) {
    ic.checkpoints.push_back(T * i / n_cp);
    oc.checkpoints.push_back(T * i / n_cp / L);
  }
  const TrajectoryRecord rec = integrate(StateVector::delta(op.window, 0), res.field, op, 0, T, ic);

  const VelocityField vf{st, res.field};
  const int reach = std::max(-op.window.k_min, op.window.k_max);
  out.box = oracle_box(st, cfg.oracle.box, reach);
  LatticeField theta0;
  theta0.dim = st.a.dim;
  theta0.box = out.box;
  theta0.coeffs[st.a] = 1.0;
  const OracleResult o = full_lattice_simulate_ex(theta0, vf, out.box, 0, T / L, cfg.oracle.dt, oc);
  out.sites = o.sites;
  out.max_shell = o.max_shell_fraction;
  out.checkpoints = std::min(o.checkpoints.size(), rec.snapshots.size());
  const std::int64_t floor2 = st.direction == Direction::Uphill ? st.a.norm2() : st.c.norm2();
  for (std::size_t i = 0; i < out.checkpoints; ++i) {
    const StateVector& zr = rec.snapshots[i];
    const LatticeField lifted = lift_state(zr, zr.t, st, out.box);
    out.max_rel_l2 = std::max(out.max_rel_l2, relative_l2(o.checkpoints[i].second, lifted));
    out.support_leak = std::max(out.support_leak, o.checkpoints[i].second.mass_fraction_below(floor2));
  }
  for (const auto& s : o.samples)
    if (s.mass > 0) out.max_off_line = std::max(out.max_off_line, s.off_line_mass / s.mass);
  std::vector<Phase> phys;
  for (const auto& p : res.phases) phys.push_back({p.label, p.t0 / L, p.t1 / L});
  out.energy = oracle_energy_residuals(o, phys);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

inline ProtocolResult run_step_protocol(const TransferStep& st, const RunConfig& cfg, double* eta_used = nullptr) {
  if (st.direction == Direction::Uphill) return uphill_protocol(st.spectrum, cfg.controller);
  const double eta = cfg.eta > 0 ? cfg.eta : default_push_amplitude(st.a, st.alpha());
  if (eta_used) *eta_used = eta;
  return downhill_protocol(st.spectrum, eta, cfg.controller);
}

inline std::vector<FitResult> fit_all(const DecayReport& report);

inline DecayReport run_cascade(const CascadePlan& plan, const RunConfig& cfg = {}, const RunOptions& ro = {}) {
  const auto start = std::chrono::steady_clock::now();
  DecayReport rep;
  rep.plan = plan;
  rep.config = cfg;
  RunConfig run_cfg = cfg;
  run_cfg.controller.integrator.snapshot_stride = 1;
  run_cfg.controller.integrator.checkpoints.clear();

  double acc = 0;
  double t_global = 0;
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const TransferStep& st = plan.steps[i];
    const int idx = static_cast<int>(i);
    StepLog log;
    log.index = idx;
    log.role = st.role;
    log.direction = st.direction;
    log.a = st.a;
    log.b = st.b;
    log.c = st.c;
    log.L = st.spectrum.L_value();
    log.A = st.spectrum.A_value();
    log.alpha = st.alpha();
    log.t_start = t_global;
    log.log_mass_start = acc;
    log.M_margin = to_double(st.assumptions.M_margin());
    log.S_margin = to_double(st.assumptions.S_margin());
    log.spacing_margin = to_double(st.assumptions.spacing_margin);
    log.support_floor = st.direction == Direction::Uphill ? st.a.norm2() : st.c.norm2();

    ProtocolResult res;
    try {
      res = run_step_protocol(st, run_cfg, &log.eta);
    } catch (const Error& e) {
      throw e.with_step(idx);
    }
    if (res.residual > cfg.residual_max)
      throw Error(Errc::ResidualTooLarge, "off-mode residual " + std::to_string(res.residual)).with_step(idx);

    log.duration = res.duration();
    log.physical_duration = log.duration / log.L;
    log.beta = res.beta;
    log.residual = res.residual;
    log.contraction = res.log;
    log.wait = res.wait;
    log.push = res.push;
    log.stage1_z0 = res.stage1_z0;
    log.stage1_z1 = res.stage1_z1;
    log.push_rho = res.push_rho;
    log.integrator_steps = res.trajectory.steps;
    for (const auto& p : res.phases) log.phases.push_back({p.label, t_global + p.t0 / log.L, t_global + p.t1 / log.L});

    // Decay samples from every stored state of the step.
    std::vector<StateVector> states;
    const LineOperator op = st.spectrum.line_operator();
    states.push_back(StateVector::delta(op.window, 0));
    for (const auto& z : res.trajectory.snapshots)
      if (z.t > states.back().t) states.push_back(z);
    if (states.back().t < res.final_state.t) states.push_back(res.final_state);

    std::vector<DecaySample> dense;
    dense.reserve(states.size());
    for (const auto& z : states) {
      DecaySample s;
      s.t = t_global + z.t / log.L;
      s.log_mass = acc + std::log(z.mass()) - 2.0 * log.A * z.t;
      s.dirichlet_ratio = detail::lifted_dirichlet(z, st);
      s.step = idx;
      s.phase = detail::phase_at(res.phases, z.t);
      dense.push_back(std::move(s));
      log.support_leak = std::max(log.support_leak, detail::support_fraction_below(z, st, log.support_floor));
    }
    log.energy = energy_residuals(
        dense, log.phases, [](const DecaySample& s) { return s.t; }, [](const DecaySample& s) { return s.log_mass; },
        [](const DecaySample& s) { return s.dirichlet_ratio; });
    const int stride = std::max(1, cfg.sample_stride);
    for (std::size_t q = 0; q < dense.size(); ++q) {
      if (i > 0 && q == 0) continue;
      const bool edge = q + 1 == dense.size() || (q > 0 && dense[q].phase != dense[q - 1].phase);
      if (q % stride == 0 || edge) rep.samples.push_back(dense[q]);
    }

    // Field bounds and divergence.
    const VelocityField vf{st, res.field};
    for (int n = 0; n <= cfg.sobolev_max; ++n) {
      log.sobolev.push_back(sobolev_norm_bound(vf, n));
      double g = 0;
      for (const auto& seg : res.field.segments) {
        const double mid = 0.5 * (segment_t0(seg) + segment_t1(seg));
        g = std::max(g, grid_sample_norms(vf, mid / log.L, n, cfg.grid_res));
      }
      log.grid_sup.push_back(g);
    }
    log.divergence_exact = true;
    for (const auto& seg : res.field.segments) {
      const double mid = 0.5 * (segment_t0(seg) + segment_t1(seg));
      const DivergenceReport d = divergence_check(vf, 64, mid / log.L);
      log.divergence_exact = log.divergence_exact && d.exact_zero;
      log.divergence = std::max(log.divergence, d.max_abs);
    }
    if (st.direction == Direction::Downhill)
      for (const auto& seg : res.field.segments)
        if (const auto* c = std::get_if<ConstantSegment>(&seg); c && c->t1 <= res.push)
          log.push_sup = std::max(log.push_sup, std::abs(c->value(1)));

    if (ro.oracle) {
      try {
        log.oracle = run_step_oracle(st, res, cfg);
      } catch (const Error& e) {
        throw e.with_step(idx);
      }
    }

    acc += std::log(std::norm(res.beta)) - 2.0 * log.A * log.duration;
    t_global += log.physical_duration;
    log.log_mass_end = acc;
    rep.steps.push_back(std::move(log));
  }
  if (plan.steps.empty()) rep.samples.push_back({0.0, 0.0, static_cast<double>(plan.mode_trace.front().norm2()), -1, ""});
  rep.ledger_log_mass = acc;
  if (ro.fits)
    for (auto& f : fit_all(rep)) rep.fits[model_name(f.model)] = f;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Fits

/// Least-squares fit of y = log(-log_mass) on samples past the first step:
/// DoubleExp y = c0 + c1 t, TSquared y = c0 + 2 log t, Exp y = c0 + log t.
/// The residual is the RMS misfit over the range of y.
inline FitResult fit_samples(const std::vector<DecaySample>& samples, DecayModel model, int first_step = 1) {
  std::vector<double> t, y;
  for (const auto& s : samples)
    if (s.step >= first_step && s.t > 0 && s.log_mass < 0) {
      t.push_back(s.t);
      y.push_back(std::log(-s.log_mass));
    }
  if (t.size() < 10)
    throw Error(Errc::InsufficientData, std::to_string(t.size()) + " usable samples past the first step, need 10");
  const std::size_t n = t.size();
  FitResult f;
  f.model = model;
  f.n = n;
  std::vector<double> fit(n);
  if (model == DecayModel::DoubleExp) {
    double st = 0, sy = 0, stt = 0, sty = 0;
    for (std::size_t i = 0; i < n; ++i) {
      st += t[i];
      sy += y[i];
      stt += t[i] * t[i];
      sty += t[i] * y[i];
    }
    const double den = n * stt - st * st;
    if (den == 0) throw Error(Errc::InsufficientData, "samples share one time");
    const double c1 = (n * sty - st * sy) / den;
    const double c0 = (sy - c1 * st) / n;
    f.params = {c0, c1};
    for (std::size_t i = 0; i < n; ++i) fit[i] = c0 + c1 * t[i];
  } else {
    const double power = model == DecayModel::TSquared ? 2.0 : 1.0;
    double c0 = 0;
    for (std::size_t i = 0; i < n; ++i) c0 += y[i] - power * std::log(t[i]);
    c0 /= n;
    f.params = {c0};
    for (std::size_t i = 0; i < n; ++i) fit[i] = c0 + power * std::log(t[i]);
  }
  double ss = 0, lo = y[0], hi = y[0];
  for (std::size_t i = 0; i < n; ++i) {
    ss += (y[i] - fit[i]) * (y[i] - fit[i]);
    lo = std::min(lo, y[i]);
    hi = std::max(hi, y[i]);
  }
  const double rms = std::sqrt(ss / n);
  f.residual = hi > lo ? rms / (hi - lo) : rms;
  return f;
}

inline FitResult fit_decay(const DecayReport& report, DecayModel model) { return fit_samples(report.samples, model); }

inline std::vector<FitResult> fit_all(const DecayReport& report) {
  std::vector<FitResult> out;
  for (DecayModel m : {DecayModel::DoubleExp, DecayModel::TSquared, DecayModel::Exp}) {
    try {
      out.push_back(fit_decay(report, m));
    } catch (const Error& e) {
      if (e.code() != Errc::InsufficientData) throw;
    }
  }
  return out;
}

/// Average exponential rate -(delta log mass)/(delta t) per block of the plan.
inline std::vector<double> block_rates(const DecayReport& report) {
  std::vector<double> out;
  const int bs = std::max(1, report.plan.block_size);
  for (std::size_t i = 0; i + bs <= report.steps.size(); i += bs) {
    const auto& first = report.steps[i];
    const auto& last = report.steps[i + bs - 1];
    const double dt = last.t_start + last.physical_duration - first.t_start;
    out.push_back(-(last.log_mass_end - first.log_mass_start) / dt);
  }
  return out;
}

/// Largest per-phase energy-identity residual over the reduced samples.
inline double energy_identity_check(const DecayReport& report) {
  double m = 0;
  for (const auto& s : report.steps) m = std::max(m, s.max_energy_residual());
  return m;
}

struct TimeLedger {
  std::vector<double> times;  ///< cumulative physical time at block starts
  std::vector<double> radii;  ///< r at block starts
  double slope = 0;
  double asymptote = 0;
  double relative_error = 0;
};

/// 2D cascades: t_n against log r_n for n >= n_min, compared with half the
/// mean of r_n times the block duration.
inline TimeLedger time_ledger(const DecayReport& report, int n_min = 4) {
  if (report.plan.dimension != 2) throw Error(Errc::BadInput, "time ledger applies to 2D cascades");
  TimeLedger tl;
  const int bs = report.plan.block_size;
  const int nb = static_cast<int>(report.steps.size()) / bs;
  if (nb < n_min + 2) throw Error(Errc::InsufficientData, "time ledger needs at least " + std::to_string(n_min + 2) + " blocks");
  double scaled = 0;
  for (int n = 0; n < nb; ++n) {
    const auto& s = report.steps[static_cast<std::size_t>(n * bs)];
    const auto& e = report.steps[static_cast<std::size_t>(n * bs + bs - 1)];
    const double r = static_cast<double>(s.a[0]);
    tl.times.push_back(s.t_start);
    tl.radii.push_back(r);
    scaled += r * (e.t_start + e.physical_duration - s.t_start);
  }
  tl.asymptote = 0.5 * scaled / nb;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (int n = n_min; n < nb; ++n, ++m) {
    const double x = std::log(tl.radii[n]), y = tl.times[n];
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  tl.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  tl.relative_error = std::abs(tl.slope / tl.asymptote - 1.0);
  return tl;
}

// ---------------------------------------------------------------------------
// Invariant suite

struct InvariantResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

inline std::string fmt_g(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

inline std::vector<InvariantResult> verify_report(const DecayReport& r) {
  std::vector<InvariantResult> out;
  auto add = [&](std::string name, bool pass, std::string detail) { out.push_back({std::move(name), pass, std::move(detail)}); };

  double worst_rise = 0;
  for (std::size_t i = 1; i < r.samples.size(); ++i)
    worst_rise = std::max(worst_rise, r.samples[i].log_mass - r.samples[i - 1].log_mass);
  add("log_mass_nonincreasing", worst_rise <= 1e-12, "largest rise " + fmt_g(worst_rise));

  double floor_margin = 0;
  bool floor_ok = true;
  for (const auto& s : r.samples) {
    if (s.step < 0) continue;
    const auto& st = r.steps.at(static_cast<std::size_t>(s.step));
    const double fl = static_cast<double>(st.support_floor);
    if (s.dirichlet_ratio < fl * (1 - 1e-12)) floor_ok = false;
    floor_margin = std::min(floor_margin, s.dirichlet_ratio - fl);
  }
  add("dirichlet_floor", floor_ok, "worst ratio - floor " + fmt_g(floor_margin));

  double worst_res = 0, worst_leak = 0, worst_div = 0, worst_energy = 0, worst_order = 0;
  bool exact = true, push_ok = true;
  for (const auto& s : r.steps) {
    worst_res = std::max(worst_res, s.residual);
    worst_leak = std::max(worst_leak, s.support_leak);
    worst_div = std::max(worst_div, s.divergence);
    worst_energy = std::max(worst_energy, s.max_energy_residual());
    exact = exact && s.divergence_exact;
    for (std::size_t n = 0; n < s.sobolev.size() && n < s.grid_sup.size(); ++n)
      worst_order = std::max(worst_order, s.sobolev[n] > 0 ? s.grid_sup[n] / s.sobolev[n] : (s.grid_sup[n] > 0 ? 2.0 : 0.0));
    if (s.direction == Direction::Downhill && s.push_sup > s.eta * (1 + 1e-15)) push_ok = false;
  }
  add("step_residuals", worst_res <= r.config.residual_max, "max " + fmt_g(worst_res));
  add("support_confinement", worst_leak <= 1e-12, "max leak " + fmt_g(worst_leak));
  add("divergence_free", exact && worst_div <= 1e-8, std::string(exact ? "exact" : "inexact") + ", max " + fmt_g(worst_div));
  add("norm_bound_ordering", worst_order <= 1 + 1e-12, "max grid/bound " + fmt_g(worst_order));
  add("energy_identity", worst_energy <= 1e-6, "max " + fmt_g(worst_energy));
  add("push_amplitude", push_ok, "downhill sup|v^1| <= eta");

  if (!r.steps.empty() && !r.samples.empty()) {
    const double rel = std::abs(std::expm1(r.ledger_log_mass - r.samples.back().log_mass));
    add("mass_ledger", rel <= 1e-8, "relative " + fmt_g(rel));
  }
  bool chained = true;
  for (std::size_t i = 0; i + 1 < r.steps.size(); ++i)
    chained = chained && r.steps[i].c.norm2() == r.steps[i + 1].a.norm2();
  add("plan_chaining", chained, std::to_string(r.steps.size()) + " steps");

  bool any_oracle = false;
  double o_rel = 0, o_off = 0, o_energy = 0, o_leak = 0;
  for (const auto& s : r.steps)
    if (s.oracle) {
      any_oracle = true;
      o_rel = std::max(o_rel, s.oracle->max_rel_l2);
      o_off = std::max(o_off, s.oracle->max_off_line);
      o_energy = std::max(o_energy, s.oracle->max_energy_residual());
      o_leak = std::max(o_leak, s.oracle->support_leak);
    }
  if (any_oracle) {
    add("oracle_equivalence", o_rel <= 1e-6, "max rel l2 " + fmt_g(o_rel));
    add("oracle_off_line", o_off <= 1e-10, "max " + fmt_g(o_off));
    add("oracle_energy_identity", o_energy <= 1e-6, "max " + fmt_g(o_energy));
    add("oracle_support", o_leak <= 1e-12, "max leak " + fmt_g(o_leak));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json phases_json(const std::vector<Phase>& ph) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : ph) j.push_back({{"label", p.label}, {"t0", p.t0}, {"t1", p.t1}});
  return j;
}

inline std::vector<Phase> phases_from_json(const nlohmann::json& j) {
  std::vector<Phase> ph;
  for (const auto& p : j) ph.push_back({p.at("label").get<std::string>(), p.at("t0").get<double>(), p.at("t1").get<double>()});
  return ph;
}

inline nlohmann::json residuals_json(const std::vector<PhaseResidual>& e) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& x : e) j.push_back({{"label", x.label}, {"t0", x.t0}, {"t1", x.t1}, {"residual", x.residual}});
  return j;
}

inline std::vector<PhaseResidual> residuals_from_json(const nlohmann::json& j) {
  std::vector<PhaseResidual> e;
  for (const auto& x : j)
    e.push_back({x.at("label").get<std::string>(), x.at("t0").get<double>(), x.at("t1").get<double>(),
                 x.at("residual").get<double>()});
  return e;
}

inline nlohmann::json to_json_value(const OracleSummary& o) {
  return {{"box", o.box},
          {"sites", o.sites},
          {"checkpoints", o.checkpoints},
          {"max_rel_l2", o.max_rel_l2},
          {"max_off_line", o.max_off_line},
          {"max_shell", o.max_shell},
          {"support_leak", o.support_leak},
          {"energy", residuals_json(o.energy)},
          {"seconds", o.seconds}};
}

inline OracleSummary oracle_summary_from_json(const nlohmann::json& j) {
  OracleSummary o;
  o.box = j.at("box").get<std::int64_t>();
  o.sites = j.at("sites").get<std::size_t>();
  o.checkpoints = j.at("checkpoints").get<std::size_t>();
  o.max_rel_l2 = j.at("max_rel_l2").get<double>();
  o.max_off_line = j.at("max_off_line").get<double>();
  o.max_shell = j.at("max_shell").get<double>();
  o.support_leak = j.at("support_leak").get<double>();
  o.energy = residuals_from_json(j.at("energy"));
  o.seconds = j.at("seconds").get<double>();
  return o;
}

inline nlohmann::json to_json_value(const StepLog& s) {
  nlohmann::json j = {{"index", s.index},
                      {"role", s.role},
                      {"direction", direction_name(s.direction)},
                      {"a", s.a},
                      {"b", s.b},
                      {"c", s.c},
                      {"L", s.L},
                      {"A", s.A},
                      {"alpha", s.alpha},
                      {"t_start", s.t_start},
                      {"duration", s.duration},
                      {"physical_duration", s.physical_duration},
                      {"beta", cplx_json(s.beta)},
                      {"residual", s.residual},
                      {"log_mass_start", s.log_mass_start},
                      {"log_mass_end", s.log_mass_end},
                      {"margins", {{"M", s.M_margin}, {"S", s.S_margin}, {"spacing", s.spacing_margin}}},
                      {"sobolev", s.sobolev},
                      {"grid_sup", s.grid_sup},
                      {"phases", phases_json(s.phases)},
                      {"contraction", to_json_value(s.contraction)},
                      {"wait", s.wait},
                      {"push", s.push},
                      {"eta", s.eta},
                      {"push_sup", s.push_sup},
                      {"stage1_z0", s.stage1_z0},
                      {"stage1_z1", s.stage1_z1},
                      {"push_rho", s.push_rho},
                      {"support_floor", s.support_floor},
                      {"support_leak", s.support_leak},
                      {"divergence_exact", s.divergence_exact},
                      {"divergence", s.divergence},
                      {"energy", residuals_json(s.energy)},
                      {"integrator_steps", s.integrator_steps}};
  j["oracle"] = s.oracle ? to_json_value(*s.oracle) : nlohmann::json(nullptr);
  return j;
}

inline StepLog step_log_from_json(const nlohmann::json& j) {
  StepLog s;
  s.index = j.at("index").get<int>();
  s.role = j.at("role").get<std::string>();
  s.direction = parse_direction(j.at("direction").get<std::string>());
  s.a = j.at("a").get<LatticeVector>();
  s.b = j.at("b").get<LatticeVector>();
  s.c = j.at("c").get<LatticeVector>();
  s.L = j.at("L").get<double>();
  s.A = j.at("A").get<double>();
  s.alpha = j.at("alpha").get<double>();
  s.t_start = j.at("t_start").get<double>();
  s.duration = j.at("duration").get<double>();
  s.physical_duration = j.at("physical_duration").get<double>();
  s.beta = cplx_from_json(j.at("beta"));
  s.residual = j.at("residual").get<double>();
  s.log_mass_start = j.at("log_mass_start").get<double>();
  s.log_mass_end = j.at("log_mass_end").get<double>();
  s.M_margin = j.at("margins").at("M").get<double>();
  s.S_margin = j.at("margins").at("S").get<double>();
  s.spacing_margin = j.at("margins").at("spacing").get<double>();
  s.sobolev = j.at("sobolev").get<std::vector<double>>();
  s.grid_sup = j.at("grid_sup").get<std::vector<double>>();
  s.phases = phases_from_json(j.at("phases"));
  s.contraction = contraction_log_from_json(j.at("contraction"));
  s.wait = j.at("wait").get<double>();
  s.push = j.at("push").get<double>();
  s.eta = j.at("eta").get<double>();
  s.push_sup = j.at("push_sup").get<double>();
  s.stage1_z0 = j.at("stage1_z0").get<double>();
  s.stage1_z1 = j.at("stage1_z1").get<double>();
  s.push_rho = j.at("push_rho").get<double>();
  s.support_floor = j.at("support_floor").get<std::int64_t>();
  s.support_leak = j.at("support_leak").get<double>();
  s.divergence_exact = j.at("divergence_exact").get<bool>();
  s.divergence = j.at("divergence").get<double>();
  s.energy = residuals_from_json(j.at("energy"));
  s.integrator_steps = j.at("integrator_steps").get<std::size_t>();
  if (!j.at("oracle").is_null()) s.oracle = oracle_summary_from_json(j.at("oracle"));
  return s;
}

inline nlohmann::json to_json_value(const FitResult& f) {
  return {{"model", model_name(f.model)}, {"params", f.params}, {"residual", f.residual}, {"n", f.n}};
}

inline FitResult fit_from_json(const nlohmann::json& j) {
  FitResult f;
  f.model = parse_model(j.at("model").get<std::string>());
  f.params = j.at("params").get<std::vector<double>>();
  f.residual = j.at("residual").get<double>();
  f.n = j.at("n").get<std::size_t>();
  return f;
}

inline nlohmann::json to_json_value(const DecayReport& r) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.steps) steps.push_back(to_json_value(s));
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : r.samples) samples.push_back({s.t, s.log_mass, s.dirichlet_ratio, s.step, s.phase});
  nlohmann::json fits = nlohmann::json::object();
  for (const auto& [k, f] : r.fits) fits[k] = to_json_value(f);
  return {{"plan", to_json_value(r.plan)}, {"config", to_json_value(r.config)},     {"steps", steps},
          {"samples", samples},            {"fits", fits},                          {"ledger_log_mass", r.ledger_log_mass},
          {"block_rates", block_rates(r)}, {"seconds", r.seconds}};
}

inline DecayReport report_from_json(const nlohmann::json& j) {
  DecayReport r;
  r.config = config_from_json(j.at("config"));
  r.plan = plan_from_json(j.at("plan"), r.config.plan);
  for (const auto& s : j.at("steps")) r.steps.push_back(step_log_from_json(s));
  for (const auto& s : j.at("samples"))
    r.samples.push_back({s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>(), s.at(3).get<int>(),
                         s.at(4).get<std::string>()});
  for (const auto& [k, f] : j.at("fits").items()) r.fits[k] = fit_from_json(f);
  r.ledger_log_mass = j.at("ledger_log_mass").get<double>();
  r.seconds = j.value("seconds", 0.0);
  return r;
}

// ---------------------------------------------------------------------------
// CSV and SVG

inline void write_decay_csv(std::ostream& os, const DecayReport& r) {
  os << "t,mass,log_mass,dirichlet_ratio,step_index,phase_label\n";
  char buf[160];
  for (const auto& s : r.samples) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%d,", s.t, std::exp(s.log_mass), s.log_mass,
                  s.dirichlet_ratio, s.step);
    os << buf << s.phase << '\n';
  }
}

/// -log_mass against t on log axes, with an optional fitted curve.
inline void write_decay_svg(std::ostream& os, const DecayReport& r, const std::optional<FitResult>& fit = std::nullopt) {
  const double W = 720, H = 440, pad = 56;
  std::vector<std::pair<double, double>> pts;
  for (const auto& s : r.samples)
    if (s.t > 0 && s.log_mass < 0) pts.emplace_back(s.t, std::log10(-s.log_mass));
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (pts.size() < 2) {
    os << "<text x=\"20\" y=\"40\">not enough samples</text>\n</svg>\n";
    return;
  }
  double t0 = pts.front().first, t1 = pts.front().first, y0 = pts.front().second, y1 = pts.front().second;
  for (const auto& [t, y] : pts) {
    t0 = std::min(t0, t);
    t1 = std::max(t1, t);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }
  if (y1 == y0) y1 = y0 + 1;
  auto X = [&](double t) { return pad + (W - 2 * pad) * (t - t0) / (t1 - t0); };
  auto Y = [&](double y) { return H - pad - (H - 2 * pad) * (y - y0) / (y1 - y0); };
  os << "<line x1=\"" << pad << "\" y1=\"" << H - pad << "\" x2=\"" << W - pad << "\" y2=\"" << H - pad
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << H - pad << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 16 << "\" text-anchor=\"middle\">t</text>\n";
  os << "<text x=\"16\" y=\"" << H / 2 << "\" transform=\"rotate(-90 16 " << H / 2
     << ")\" text-anchor=\"middle\">log10(-log mass)</text>\n";
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.3g", t0);
  os << "<text x=\"" << pad << "\" y=\"" << H - pad + 16 << "\" font-size=\"11\">" << buf << "</text>\n";
  std::snprintf(buf, sizeof buf, "%.3g", t1);
  os << "<text x=\"" << W - pad << "\" y=\"" << H - pad + 16 << "\" font-size=\"11\" text-anchor=\"end\">" << buf
     << "</text>\n";
  std::snprintf(buf, sizeof buf, "%.3g", y1);
  os << "<text x=\"" << pad - 4 << "\" y=\"" << pad << "\" font-size=\"11\" text-anchor=\"end\">" << buf << "</text>\n";
  std::snprintf(buf, sizeof buf, "%.3g", y0);
  os << "<text x=\"" << pad - 4 << "\" y=\"" << H - pad << "\" font-size=\"11\" text-anchor=\"end\">" << buf
     << "</text>\n";
  os << "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1.5\" points=\"";
  for (const auto& [t, y] : pts) {
    std::snprintf(buf, sizeof buf, "%.2f,%.2f ", X(t), Y(y));
    os << buf;
  }
  os << "\"/>\n";
  if (fit) {
    os << "<polyline fill=\"none\" stroke=\"#c23b22\" stroke-dasharray=\"5,4\" points=\"";
    for (int i = 0; i <= 200; ++i) {
      const double t = t0 + (t1 - t0) * i / 200.0;
      double yf = fit->params.at(0);
      if (fit->model == DecayModel::DoubleExp) yf += fit->params.at(1) * t;
      else yf += (fit->model == DecayModel::TSquared ? 2.0 : 1.0) * std::log(t);
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", X(t), Y(yf / std::log(10.0)));
      os << buf;
    }
    os << "\"/>\n";
    std::snprintf(buf, sizeof buf, "%s fit, residual %.3g", model_name(fit->model), fit->residual);
    os << "<text x=\"" << W - pad << "\" y=\"" << pad - 12 << "\" text-anchor=\"end\" fill=\"#c23b22\">" << buf
       << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace mixcascade

#endif
