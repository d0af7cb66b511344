#ifndef MIXCASCADE_CONTROLLER_HPP
#define MIXCASCADE_CONTROLLER_HPP

/// @file controller.hpp
/// @brief Synthesis of the coefficient fields that move all mass from line
/// index 0 to line index 1.
///
/// Uphill: stage-1 feedback on [0,1], a free wait, then dyadic Newton steps on
/// a unit interval.  Downhill: a small constant push, a free wait, then the
/// same dyadic stage.

#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include <boost/math/special_functions/expm1.hpp>

#include "integrator.hpp"
#include "spectrum.hpp"

namespace mixcascade {

struct ControllerConfig {
  FeedbackParams feedback;
  double stage1_tolerance = 1e-3;
  double eps_start_max = 1e-4;
  double eps_converged = 1e-12;
  double wait_grid = 1.0 / 64.0;
  double wait_cap_factor = 64.0;
  double push_budget = 0.01;
  double push_cap = 0.1;
  double rho_min = 1e-30;
  int kmax_cap = 48;
  double kmax_tail = 1e-3;
  int dyadic_max_steps = 16;
  IntegratorConfig integrator;
};

// ---------------------------------------------------------------------------
// Newton step closed form

/// Real coefficients of the two-interval control for one pair (k+1, 1-k),
/// with h = T/2, x+ = d_{k+1} - d_1, x- = d_{1-k} - d_1.
template <class Real>
struct NewtonCoefficients {
  Real inv_plus;     ///< 1 / int_0^h e^{x+ s} ds
  Real inv_minus;    ///< 1 / int_0^h e^{x- s} ds
  Real q;            ///< e^{(x- - x+) h}
  Real one_minus_q;  ///< 1 - q, without cancellation
  Real decay_plus;   ///< e^{-x+ h}
};

/// 1 / int_0^h e^{x s} ds.
template <class Real>
Real inverse_half_integral(const Real& x, const Real& h) {
  using std::abs;
  using std::exp;
  using std::sqrt;
  const Real xh = x * h;
  const Real series_limit = sqrt(sqrt(Real(std::numeric_limits<Real>::epsilon())));
  if (abs(xh) < series_limit) return 1 / (h * (1 + xh / 2 + xh * xh / 6 + xh * xh * xh / 24));
  if (xh < 0) return x / boost::math::expm1(xh);
  return -x * exp(-xh) / boost::math::expm1(Real(-xh));
}

template <class Real>
NewtonCoefficients<Real> newton_coefficients(const Real& x_plus, const Real& x_minus, const Real& h) {
  using std::exp;
  const Real gap = x_plus - x_minus;
  if (gap == 0) throw Error(Errc::DegenerateSpacing, "d_{k+1} = d_{1-k}: singular Newton system");
  NewtonCoefficients<Real> c;
  c.inv_plus = inverse_half_integral(x_plus, h);
  c.inv_minus = inverse_half_integral(x_minus, h);
  c.q = exp(Real(-gap * h));
  c.one_minus_q = -boost::math::expm1(Real(-gap * h));
  c.decay_plus = exp(Real(-x_plus * h));
  return c;
}

template <class Cx>
struct NewtonPairT {
  Cx a;
  Cx b;
  Cx r1;  ///< -z^{k+1} / int e^{x+ s}
  Cx r2;  ///< conj(z^{1-k}) / int e^{x- s}
};

/// Controls (a on [0,h], b on (h,2h]) for a snapshot normalized so z^1 = 1.
/// They solve a + e^{x+ h} b = -i r1 and a + e^{x- h} b = -i r2.
template <class Real, class Cx>
NewtonPairT<Cx> newton_pair(const NewtonCoefficients<Real>& c, const Cx& z_plus, const Cx& z_minus) {
  using std::conj;
  const Cx I(Real(0), Real(1));
  NewtonPairT<Cx> p;
  p.r1 = -z_plus * c.inv_plus;
  p.r2 = conj(z_minus) * c.inv_minus;
  p.a = I * (p.r1 * c.q - p.r2) / c.one_minus_q;
  p.b = I * (p.r2 - p.r1) * (c.decay_plus / c.one_minus_q);
  return p;
}

struct NewtonPair {
  int k = 0;
  cplx a, b, r1, r2;
};

struct NewtonControls {
  double T = 0;
  int k_max = 0;
  std::vector<NewtonPair> per_k;
};

/// Largest k usable on the window: k+1 <= k_max and 1-k >= k_min.
inline int window_kmax(const IndexWindow& w) { return std::min(w.k_max - 1, 1 - w.k_min); }

/// Smallest k_max with tail mass sum_{|1-k'| > k_max} |z^{k'}|^2 below
/// tail * eps^2 * mass, capped.
inline int select_kmax(const StateVector& z, int cap, double tail) {
  const int wmax = std::min(cap, window_kmax(z.window));
  double mass = 0, off = 0;
  for (int k = z.window.k_min; k <= z.window.k_max; ++k) {
    const double m = std::norm(z.at(k));
    mass += m;
    if (k != 1) off += m;
  }
  if (off == 0) return 0;
  std::vector<double> by_dist(std::max(z.window.k_max - 1, 1 - z.window.k_min) + 1, 0.0);
  for (int k = z.window.k_min; k <= z.window.k_max; ++k) by_dist[std::abs(k - 1)] += std::norm(z.at(k));
  double rest = off;
  for (int K = 1; K <= wmax; ++K) {
    rest -= by_dist[K];
    if (rest < tail * off) return K;
  }
  return wmax;
}

/// Closed-form Newton controls for a step of length T from `snapshot`.
inline NewtonControls newton_step_controls(const StateVector& snapshot, double T, const LineOperator& op, int k_max) {
  if (!(T > 0 && T <= 1)) throw Error(Errc::BadInput, "Newton step needs T in (0, 1]");
  if (k_max > window_kmax(op.window)) throw Error(Errc::BadInput, "k_max exceeds the window");
  NewtonControls nc;
  nc.T = T;
  nc.k_max = k_max;
  if (k_max <= 0) return nc;
  const cplx z1 = snapshot.get(1);
  if (z1 == cplx(0, 0)) throw Error(Errc::NoContraction, "snapshot has no mass on k=1");
  const double h = 0.5 * T;
  const double d1 = op.at(1);
  for (int k = 1; k <= k_max; ++k) {
    const double xp = op.at(k + 1) - d1;
    const double xm = op.at(1 - k) - d1;
    if (op.at(k + 1) == op.at(1 - k))
      throw Error(Errc::DegenerateSpacing, "d_" + std::to_string(k + 1) + " = d_" + std::to_string(1 - k));
    const auto c = newton_coefficients<double>(xp, xm, h);
    const auto p = newton_pair(c, snapshot.get(k + 1) / z1, snapshot.get(1 - k) / z1);
    nc.per_k.push_back({k, p.a, p.b, p.r1, p.r2});
  }
  return nc;
}

inline NewtonControls newton_step_controls(const StateVector& snapshot, double T, const DiffusionSpectrum& s,
                                           int k_max) {
  return newton_step_controls(snapshot, T, s.line_operator(), k_max);
}

// ---------------------------------------------------------------------------
// Dyadic schedule

struct ContractionEntry {
  int j = 0;
  double T = 0;
  double eps = 0;
};

struct ContractionLog {
  std::vector<ContractionEntry> entries;
  double D_fit = 0;

  /// max_j eps_{j+1} / (2^{3j} eps_j^2).
  void fit() {
    D_fit = 0;
    for (std::size_t i = 0; i + 1 < entries.size(); ++i) {
      const double e = entries[i].eps;
      if (e <= 0) continue;
      const double r = entries[i + 1].eps / (std::ldexp(1.0, 3 * entries[i].j) * e * e);
      D_fit = std::max(D_fit, r);
    }
  }
};

struct Phase {
  std::string label;
  double t0 = 0, t1 = 0;
};

struct ProtocolResult {
  CoefficientField field;
  ContractionLog log;
  TrajectoryRecord trajectory;
  /// State at the end, before projection.
  StateVector final_state;
  /// Coefficient of the projected final state beta * delta_{k,1}.
  cplx beta;
  /// Off-mode ratio removed by the projection.
  double residual = 0;
  std::vector<Phase> phases;
  double wait = 0;
  double push = 0;
  double stage1_z0 = 0;
  double stage1_z1 = 0;
  double push_rho = 0;
  double duration() const { return field.t_end() - field.t_begin(); }
};

inline ProtocolResult dyadic_schedule(const StateVector& z_handoff, const LineOperator& op,
                                      const ControllerConfig& cfg = {}) {
  ProtocolResult out;
  const double t_start = z_handoff.t;
  const double t_end = t_start + 1.0;
  StateVector z = z_handoff;
  out.trajectory.samples.push_back(detail::sample_of(z, op));
  out.trajectory.final_state = z;

  double eps = mass_and_ratio(z).off_mode_ratio;
  if (eps > cfg.eps_start_max)
    throw Error(Errc::NoContraction, "handoff ratio " + std::to_string(eps) + " above eps_start_max");
  int rises = 0;
  double t = t_start;
  for (int j = 0; eps > 0; ++j) {
    out.log.entries.push_back({j, std::ldexp(1.0, -(j + 1)), eps});
    if (eps < cfg.eps_converged) break;
    if (j >= cfg.dyadic_max_steps)
      throw Error(Errc::NoContraction, "no convergence after " + std::to_string(j) + " dyadic steps");
    const double T = std::ldexp(1.0, -(j + 1));
    const int kmax = select_kmax(z, cfg.kmax_cap, cfg.kmax_tail);
    const NewtonControls nc = newton_step_controls(z, T, op, kmax);
    ConstantSegment first, second;
    first.t0 = t;
    first.t1 = t_start + (1.0 - std::ldexp(1.0, -j) + 0.5 * T);
    second.t0 = first.t1;
    second.t1 = t_start + (1.0 - std::ldexp(1.0, -(j + 1)));
    for (const auto& p : nc.per_k) {
      first.values.emplace_back(p.k, p.a);
      second.values.emplace_back(p.k, p.b);
    }
    CoefficientField step;
    step.append(first);
    step.append(second);
    TrajectoryRecord rec = integrate(z, step, op, first.t0, second.t1, cfg.integrator);
    out.field.append(step);
    out.trajectory.append(rec);
    z = rec.final_state;
    t = second.t1;
    const double next = mass_and_ratio(z).off_mode_ratio;
    rises = next > eps ? rises + 1 : 0;
    if (rises >= 2) throw Error(Errc::NoContraction, "off-mode ratio rose twice in a row");
    eps = next;
  }
  if (t < t_end) {
    CoefficientField tail;
    tail.append(ZeroSegment{t, t_end});
    TrajectoryRecord rec = integrate(z, tail, op, t, t_end, cfg.integrator);
    out.field.append(tail);
    out.trajectory.append(rec);
    z = rec.final_state;
  }
  out.log.fit();
  out.final_state = z;
  out.residual = mass_and_ratio(z).off_mode_ratio;
  out.beta = z.get(1);
  out.phases.push_back({"dyadic", t_start, t_end});
  return out;
}

// ---------------------------------------------------------------------------
// Protocols

/// Off-mode ratio after free decay for time tau.
inline double free_decay_ratio(const StateVector& z, const LineOperator& op, double tau) {
  const double d1 = op.at(1);
  double off = 0, total = 0;
  for (int k = z.window.k_min; k <= z.window.k_max; ++k) {
    const double m = std::norm(z.at(k)) * std::exp(-2.0 * (op.at(k) - d1) * tau);
    total += m;
    if (k != 1) off += m;
  }
  return total > 0 ? std::sqrt(off / total) : 0.0;
}

/// Smallest grid multiple tau <= cap with free-decay ratio <= target.
inline double choose_wait(const StateVector& z, const LineOperator& op, double target, double cap, double grid) {
  const long n_max = static_cast<long>(std::floor(cap / grid));
  for (long n = 0; n <= n_max; ++n) {
    const double tau = n * grid;
    if (free_decay_ratio(z, op, tau) <= target) return tau;
  }
  throw Error(Errc::WaitTimeout, "off-mode ratio still " + std::to_string(free_decay_ratio(z, op, n_max * grid)) +
                                     " after waiting " + std::to_string(n_max * grid));
}

namespace detail {

inline void run_wait(ProtocolResult& out, StateVector& z, const LineOperator& op, double cap,
                     const ControllerConfig& cfg) {
  const double t = z.t;
  out.wait = choose_wait(z, op, cfg.eps_start_max, cap, cfg.wait_grid);
  if (out.wait > 0) {
    CoefficientField w;
    w.append(ZeroSegment{t, t + out.wait});
    TrajectoryRecord rec = integrate(z, w, op, t, t + out.wait, cfg.integrator);
    out.field.append(w);
    out.trajectory.append(rec);
    z = rec.final_state;
  }
  out.phases.push_back({"wait", t, t + out.wait});
}

inline void run_dyadic(ProtocolResult& out, const StateVector& z, const LineOperator& op,
                       const ControllerConfig& cfg) {
  ProtocolResult dy = dyadic_schedule(z, op, cfg);
  out.field.append(dy.field);
  out.trajectory.append(dy.trajectory);
  out.log = dy.log;
  out.final_state = dy.final_state;
  out.residual = dy.residual;
  out.beta = dy.beta;
  out.phases.insert(out.phases.end(), dy.phases.begin(), dy.phases.end());
}

}  // namespace detail

inline ProtocolResult uphill_protocol(const DiffusionSpectrum& spectrum, const ControllerConfig& cfg = {}) {
  if (spectrum.direction != Direction::Uphill) throw Error(Errc::WrongDirection, "uphill protocol on a downhill line");
  const LineOperator op = spectrum.line_operator();
  ProtocolResult out;
  StateVector z = StateVector::delta(op.window, 0);
  const double initial_norm = z.norm();

  FeedbackSegment fb;
  fb.t0 = 0;
  fb.t1 = 1;
  fb.params = cfg.feedback;
  CoefficientField stage1;
  stage1.append(fb);
  TrajectoryRecord rec = integrate(z, stage1, op, 0, 1, cfg.integrator);
  auto& seg = std::get<FeedbackSegment>(stage1.segments.front());
  seg.latch_time = rec.latch_time;
  seg.samples = rec.feedback_samples;
  out.field.append(stage1);
  out.trajectory = rec;
  z = rec.final_state;
  out.phases.push_back({"stage1", 0, 1});
  out.stage1_z0 = std::abs(z.get(0));
  out.stage1_z1 = std::abs(z.get(1));
  if (out.stage1_z0 > cfg.stage1_tolerance * initial_norm)
    throw Error(Errc::Stage1Fail, "|z^0| = " + std::to_string(out.stage1_z0) + " after the feedback segment");

  double M = std::numeric_limits<double>::infinity();
  for (int k = op.window.k_min; k <= op.window.k_max; ++k)
    if (k != 0 && k != 1) M = std::min(M, op.at(k));
  detail::run_wait(out, z, op, cfg.wait_cap_factor / M, cfg);
  detail::run_dyadic(out, z, op, cfg);
  return out;
}

/// eta = e^{-|a|} alpha.
inline double default_push_amplitude(const LatticeVector& a, double alpha) { return std::exp(-a.norm()) * alpha; }

inline ProtocolResult downhill_protocol(const DiffusionSpectrum& spectrum, double eta, const ControllerConfig& cfg = {}) {
  if (spectrum.direction != Direction::Downhill)
    throw Error(Errc::WrongDirection, "downhill protocol on an uphill line");
  if (!(eta > 0)) throw Error(Errc::BadInput, "push amplitude must be positive");
  const LineOperator op = spectrum.line_operator();
  ProtocolResult out;
  StateVector z = StateVector::delta(op.window, 0);

  out.push = std::min(cfg.push_budget / eta, cfg.push_cap);
  ConstantSegment push;
  push.t0 = 0;
  push.t1 = out.push;
  push.values.emplace_back(1, cplx(eta, 0));
  CoefficientField pf;
  pf.append(push);
  TrajectoryRecord rec = integrate(z, pf, op, 0, out.push, cfg.integrator);
  out.field.append(pf);
  out.trajectory = rec;
  z = rec.final_state;
  out.phases.push_back({"push", 0, out.push});
  out.push_rho = std::abs(z.get(1));
  if (out.push_rho < cfg.rho_min)
    throw Error(Errc::NoPush, "|z^1| = " + std::to_string(out.push_rho) + " after the push");

  double gap = std::numeric_limits<double>::infinity();
  for (int k = op.window.k_min; k <= op.window.k_max; ++k)
    if (k != 1) gap = std::min(gap, op.at(k) - op.at(1));
  detail::run_wait(out, z, op, cfg.wait_cap_factor / gap, cfg);
  detail::run_dyadic(out, z, op, cfg);
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json_value(const ContractionLog& log) {
  nlohmann::json e = nlohmann::json::array();
  for (const auto& x : log.entries) e.push_back({{"j", x.j}, {"T", x.T}, {"eps", x.eps}});
  return {{"entries", e}, {"D_fit", log.D_fit}};
}

inline ContractionLog contraction_log_from_json(const nlohmann::json& j) {
  ContractionLog log;
  for (const auto& x : j.at("entries"))
    log.entries.push_back({x.at("j").get<int>(), x.at("T").get<double>(), x.at("eps").get<double>()});
  log.D_fit = j.at("D_fit").get<double>();
  return log;
}

}  // namespace mixcascade

#endif
