#ifndef MIXCASCADE_INTEGRATOR_HPP
#define MIXCASCADE_INTEGRATOR_HPP

/// @file integrator.hpp
/// @brief Integrating-factor time stepping of the line system
///     dz^k/dt = -d_k z^k + i sum_j v^j z^{k-j}.
///
/// The diagonal part is applied exactly through e^{-d_k h}; the advective
/// convolution is advanced by the classical four-stage Lawson rule in the
/// transformed variables, so v = 0 steps are exact.  Steps never straddle a
/// breakpoint of the schedule.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "field.hpp"

namespace mixcascade {

struct IntegratorConfig {
  double dt_safety = 1.0 / 64.0;
  double leak_tolerance = 1e-20;
  double blowup_tolerance = 1e-8;
  double flush_threshold = 1e-300;
  /// Near the stage-1 zero hit the step is also bounded by
  /// landing_factor * dt_safety * |z0| / (gain |z1|).
  double landing_factor = 32.0;
  /// Upper bound on any step.
  double max_dt = std::numeric_limits<double>::infinity();
  /// When positive, steps are also bounded by spread_step / sigma, where sigma
  /// is the mass-weighted RMS of d_k.  This keeps trapezoid quadrature of the
  /// sampled dissipation accurate between samples.
  double spread_step = 0;
  bool align_steps = true;
  bool check_leak = true;
  /// Store a full snapshot every this many steps (0: none).
  int snapshot_stride = 0;
  /// Times at which steps are forced to stop and a snapshot is stored.
  std::vector<double> checkpoints;
};

struct TrajectorySample {
  double t = 0;
  double mass = 0;
  double off_mode_ratio = 0;
  /// sum_k d_k |z^k|^2
  double dissipation = 0;
};

struct TrajectoryRecord {
  std::vector<TrajectorySample> samples;
  std::vector<StateVector> snapshots;
  std::vector<std::pair<double, std::string>> phase_marks;
  double dt_used = 0;
  std::size_t steps = 0;
  double max_boundary_fraction = 0;
  StateVector final_state;
  std::optional<double> latch_time;
  std::vector<std::pair<double, cplx>> feedback_samples;

  void append(const TrajectoryRecord& next) {
    auto first = next.samples.begin();
    if (!samples.empty() && first != next.samples.end() && first->t == samples.back().t) ++first;
    samples.insert(samples.end(), first, next.samples.end());
    snapshots.insert(snapshots.end(), next.snapshots.begin(), next.snapshots.end());
    phase_marks.insert(phase_marks.end(), next.phase_marks.begin(), next.phase_marks.end());
    dt_used = std::max(dt_used, next.dt_used);
    steps += next.steps;
    max_boundary_fraction = std::max(max_boundary_fraction, next.max_boundary_fraction);
    final_state = next.final_state;
  }
};

namespace detail {

inline TrajectorySample sample_of(const StateVector& z, const LineOperator& op) {
  TrajectorySample s;
  s.t = z.t;
  double off = 0, diss = 0, total = 0;
  for (int k = z.window.k_min; k <= z.window.k_max; ++k) {
    const double m = std::norm(z.at(k));
    total += m;
    if (k != 1) off += m;
    diss += op.at(k) * m;
  }
  s.mass = total;
  s.off_mode_ratio = total > 0 ? std::sqrt(off / total) : 0.0;
  s.dissipation = diss;
  return s;
}

/// out = i sum_{j != 0} v^j z^{k-j}, truncated to the window.
inline void convolve(const ModeValues& mv, const std::vector<cplx>& z, std::vector<cplx>& out) {
  const int n = static_cast<int>(z.size());
  std::fill(out.begin(), out.end(), cplx(0, 0));
  for (std::size_t q = 0; q < mv.k.size(); ++q) {
    const int j = mv.k[q];
    const cplx v = mv.v[q];
    if (v == cplx(0, 0) || j >= n) continue;
    const cplx iv = cplx(-v.imag(), v.real());
    const cplx ivc = cplx(v.imag(), v.real());  // i * conj(v)
    for (int i = j; i < n; ++i) out[i] += iv * z[i - j];
    for (int i = 0; i + j < n; ++i) out[i] += ivc * z[i + j];
  }
}

}  // namespace detail

/// Integrates z0 (at time t0) to t1 under the schedule `field`.
inline TrajectoryRecord integrate(const StateVector& z0, const CoefficientField& field, const LineOperator& op,
                                  double t0, double t1, const IntegratorConfig& cfg = {}) {
  if (!(z0.window == op.window)) throw Error(Errc::BadInput, "state window does not match the spectrum window");
  if (!(t1 >= t0)) throw Error(Errc::BadInput, "integrate needs t1 >= t0");
  if (field.empty() || field.t_begin() > t0 || field.t_end() < t1)
    throw Error(Errc::BadInput, "field does not cover the integration interval");

  TrajectoryRecord rec;
  StateVector z = z0;
  z.t = t0;
  const int n = z.window.size();
  rec.samples.push_back(detail::sample_of(z, op));
  if (cfg.snapshot_stride > 0 || std::find(cfg.checkpoints.begin(), cfg.checkpoints.end(), t0) != cfg.checkpoints.end())
    rec.snapshots.push_back(z);

  std::vector<double> stops = cfg.align_steps ? field.breakpoints(t0, t1) : std::vector<double>{};
  for (double c : cfg.checkpoints)
    if (c > t0 && c < t1) stops.push_back(c);
  stops.push_back(t1);
  std::sort(stops.begin(), stops.end());
  stops.erase(std::unique(stops.begin(), stops.end()), stops.end());
  auto is_checkpoint = [&](double x) {
    return std::find(cfg.checkpoints.begin(), cfg.checkpoints.end(), x) != cfg.checkpoints.end();
  };
  std::size_t next_stop = 0;

  std::vector<cplx> k1(n), k2(n), k3(n), k4(n), u2(n), u3(n), u4(n);
  std::vector<double> Ef(n), Eh(n);
  double running_min = rec.samples.front().mass;
  double cached_h = -1;
  bool latched = false;
  std::size_t latch_segment = static_cast<std::size_t>(-1);

  double t = t0;
  while (t < t1) {
    while (next_stop < stops.size() && stops[next_stop] <= t) ++next_stop;
    const double boundary = stops[next_stop];
    const std::size_t si = field.locate(t);
    const Segment& seg = field.segments[si];
    const auto* fb = std::get_if<FeedbackSegment>(&seg);
    const auto* cs = std::get_if<ConstantSegment>(&seg);

    ModeValues fixed;
    if (cs)
      for (const auto& [k, v] : cs->values) {
        fixed.k.push_back(k);
        fixed.v.push_back(v);
      }

    double speed = fixed.l1();
    double h_cap = std::numeric_limits<double>::infinity();
    bool feedback_live = false;
    if (fb) {
      if (si != latch_segment) {
        latch_segment = si;
        latched = false;
      }
      const double tl = t - fb->t0;
      if (tl < fb->params.switch_time) {
        feedback_live = true;
      } else if (!latched) {
        const double scale = z.norm();
        const double r0 = std::abs(z.get(0)), r1 = std::abs(z.get(1));
        if (r0 <= fb->params.zero_tolerance * scale || r1 <= fb->params.zero_tolerance * scale) {
          latched = true;
          rec.latch_time = t;
        } else {
          feedback_live = true;
          h_cap = cfg.landing_factor * cfg.dt_safety * r0 / (fb->params.gain * r1);
        }
      }
      if (feedback_live) {
        speed = 2 * fb->params.gain;
        rec.feedback_samples.emplace_back(t, stage1_feedback(z.get(0), z.get(1), tl, fb->params, z.norm()));
      }
    }

    double h = cfg.dt_safety / (1.0 + speed);
    h = std::min({h, h_cap, cfg.max_dt});
    if (cfg.spread_step > 0) {
      double w = 0, m2 = 0;
      for (int i = 0; i < n; ++i) {
        const double q = std::norm(z.amp[i]);
        w += q;
        m2 += q * op.d[i] * op.d[i];
      }
      if (w > 0 && m2 > 0) h = std::min(h, cfg.spread_step / std::sqrt(m2 / w));
    }
    bool hits = false;
    if (t + h >= boundary) {
      h = boundary - t;
      hits = true;
    }
    if (!(h > 0)) throw Error(Errc::BadInput, "integrator step underflow at t=" + std::to_string(t));

    if (h != cached_h) {
      for (int i = 0; i < n; ++i) {
        const double d = op.d[i];
        Ef[i] = std::exp(-d * h);
        Eh[i] = std::exp(-0.5 * d * h);
      }
      cached_h = h;
    }

    auto rhs = [&](const std::vector<cplx>& u, double tau, std::vector<cplx>& out) {
      if (fb) {
        ModeValues mv;
        if (feedback_live) {
          const double sc = std::sqrt([&] {
            double m = 0;
            for (const auto& x : u) m += std::norm(x);
            return m;
          }());
          const cplx u0 = z.window.contains(0) ? u[z.window.offset(0)] : cplx(0, 0);
          const cplx u1 = z.window.contains(1) ? u[z.window.offset(1)] : cplx(0, 0);
          mv.k.push_back(1);
          mv.v.push_back(stage1_feedback(u0, u1, tau - fb->t0, fb->params, sc));
        }
        detail::convolve(mv, u, out);
      } else {
        detail::convolve(fixed, u, out);
      }
    };

    const bool advect = fb ? feedback_live : !fixed.empty();
    auto& u = z.amp;
    if (advect) {
      rhs(u, t, k1);
      for (int i = 0; i < n; ++i) u2[i] = Eh[i] * (u[i] + 0.5 * h * k1[i]);
      rhs(u2, t + 0.5 * h, k2);
      for (int i = 0; i < n; ++i) u3[i] = Eh[i] * u[i] + 0.5 * h * k2[i];
      rhs(u3, t + 0.5 * h, k3);
      for (int i = 0; i < n; ++i) u4[i] = Ef[i] * u[i] + h * Eh[i] * k3[i];
      rhs(u4, t + h, k4);
      for (int i = 0; i < n; ++i)
        u[i] = Ef[i] * u[i] + (h / 6.0) * (Ef[i] * k1[i] + 2.0 * Eh[i] * (k2[i] + k3[i]) + k4[i]);
    } else {
      for (int i = 0; i < n; ++i) u[i] *= Ef[i];
    }
    for (auto& x : u) {
      if (std::abs(x.real()) < cfg.flush_threshold) x.real(0);
      if (std::abs(x.imag()) < cfg.flush_threshold) x.imag(0);
    }

    t = hits ? boundary : t + h;
    z.t = t;
    rec.dt_used = std::max(rec.dt_used, h);
    ++rec.steps;

    TrajectorySample s = detail::sample_of(z, op);
    if (s.mass > (1.0 + cfg.blowup_tolerance) * running_min)
      throw Error(Errc::BlowUp, "mass grew to " + std::to_string(s.mass) + " from minimum " +
                                    std::to_string(running_min) + " at t=" + std::to_string(t));
    running_min = std::min(running_min, s.mass);
    if (s.mass > 0) {
      const double frac = z.boundary_mass() / s.mass;
      rec.max_boundary_fraction = std::max(rec.max_boundary_fraction, frac);
      if (cfg.check_leak && frac > cfg.leak_tolerance)
        throw Error(Errc::LeakExceeded, "boundary mass fraction " + std::to_string(frac) + " at t=" + std::to_string(t));
    }
    rec.samples.push_back(s);
    if ((cfg.snapshot_stride > 0 && rec.steps % cfg.snapshot_stride == 0) || (hits && is_checkpoint(t)))
      rec.snapshots.push_back(z);
  }
  rec.final_state = z;
  return rec;
}

/// Largest relative defect of the dissipation identity
///     d/dt sum|z|^2 = -2 sum d_k |z^k|^2
/// over consecutive samples, with trapezoid quadrature.
inline double dissipation_identity_residual(const TrajectoryRecord& rec) {
  double worst = 0;
  for (std::size_t i = 1; i < rec.samples.size(); ++i) {
    const auto& p = rec.samples[i - 1];
    const auto& q = rec.samples[i];
    const double lhs = q.mass - p.mass;
    const double rhs = -(q.t - p.t) * (p.dissipation + q.dissipation);
    const double scale = std::max(p.mass, q.mass);
    if (scale > 0) worst = std::max(worst, std::abs(lhs - rhs) / scale);
  }
  return worst;
}

struct ConvergencePoint {
  double dt = 0;
  double error = 0;
};

/// Self-convergence in dt_safety against a Richardson-extrapolated
/// reference computed at a quarter and an eighth of the smallest value.
inline std::vector<ConvergencePoint> convergence_study(const StateVector& z0, const CoefficientField& field,
                                                       const LineOperator& op, double t0, double t1,
                                                       const std::vector<double>& dt_list,
                                                       IntegratorConfig cfg = {}, int nominal_order = 4) {
  for (std::size_t i = 1; i < dt_list.size(); ++i)
    if (!(dt_list[i] < dt_list[i - 1])) throw Error(Errc::BadInput, "dt_list must be descending");
  auto run = [&](double dt) {
    cfg.dt_safety = dt;
    return integrate(z0, field, op, t0, t1, cfg).final_state;
  };
  const double base = dt_list.back();
  const StateVector za = run(base / 4), zb = run(base / 8);
  const double f = 1.0 / (std::pow(2.0, nominal_order) - 1.0);
  std::vector<cplx> ref(zb.amp.size());
  double ref_norm = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ref[i] = zb.amp[i] + (zb.amp[i] - za.amp[i]) * f;
    ref_norm += std::norm(ref[i]);
  }
  ref_norm = std::sqrt(ref_norm);
  std::vector<ConvergencePoint> out;
  for (double dt : dt_list) {
    const StateVector z = run(dt);
    double e = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) e += std::norm(z.amp[i] - ref[i]);
    out.push_back({dt, ref_norm > 0 ? std::sqrt(e) / ref_norm : std::sqrt(e)});
  }
  return out;
}

/// log2 of consecutive error ratios.
inline std::vector<double> observed_orders(const std::vector<ConvergencePoint>& pts) {
  std::vector<double> o;
  for (std::size_t i = 1; i < pts.size(); ++i)
    o.push_back(std::log2(pts[i - 1].error / pts[i].error) / std::log2(pts[i - 1].dt / pts[i].dt));
  return o;
}

inline void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& rec, bool per_mode = false) {
  os << "t,mass,off_mode_ratio";
  const bool modes = per_mode && !rec.snapshots.empty();
  if (modes)
    for (int k = rec.snapshots.front().window.k_min; k <= rec.snapshots.front().window.k_max; ++k) os << ",abs_z" << k;
  os << '\n';
  char buf[96];
  if (modes) {
    for (const auto& z : rec.snapshots) {
      const auto mr = mass_and_ratio(z);
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", z.t, mr.mass, mr.off_mode_ratio);
      os << buf;
      for (const auto& a : z.amp) {
        std::snprintf(buf, sizeof buf, ",%.17g", std::abs(a));
        os << buf;
      }
      os << '\n';
    }
    return;
  }
  for (const auto& s : rec.samples) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", s.t, s.mass, s.off_mode_ratio);
    os << buf;
  }
}

}  // namespace mixcascade

#endif
