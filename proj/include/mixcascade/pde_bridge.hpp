#ifndef MIXCASCADE_PDE_BRIDGE_HPP
#define MIXCASCADE_PDE_BRIDGE_HPP

/// @file pde_bridge.hpp
/// @brief From the line system to the torus.
///
/// A coefficient field v on the line {a + k b} becomes the shear velocity
///     w(t, x) = (L / (alpha |a|)) ell v(L t, b.x),   v(s, y) = sum_k v^k_s e^{iky},
/// and a line state z at rescaled time s lifts to
///     theta_{s/L} = e^{-A s} sum_k z^k f_{a+kb}.
/// The full-lattice oracle integrates theta' = Laplacian theta + w.grad theta
/// directly in Fourier space, with no reference to the line system.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "controller.hpp"
#include "planner.hpp"

namespace mixcascade {

struct VelocityField {
  TransferStep step;
  CoefficientField field;

  double L() const { return step.spectrum.L_value(); }
  /// L / (alpha |a|)
  double prefactor() const { return L() / (step.alpha() * step.a.norm()); }
};

/// Fourier coefficients of theta on a box |m|_inf <= box.
struct LatticeField {
  int dim = 0;
  std::int64_t box = 0;
  std::map<LatticeVector, cplx> coeffs;

  double mass() const {
    double m = 0;
    for (const auto& [k, c] : coeffs) m += std::norm(c);
    return m;
  }
  /// sum |m|^2 |theta_m|^2 / sum |theta_m|^2
  double dirichlet_ratio() const {
    double num = 0, den = 0;
    for (const auto& [k, c] : coeffs) {
      const double w = std::norm(c);
      num += static_cast<double>(k.norm2()) * w;
      den += w;
    }
    return den > 0 ? num / den : 0.0;
  }
  cplx get(const LatticeVector& k) const {
    auto it = coeffs.find(k);
    return it == coeffs.end() ? cplx(0, 0) : it->second;
  }
  /// Fraction of the mass on sites with |m|^2 < r2.
  double mass_fraction_below(std::int64_t r2) const {
    double low = 0, all = 0;
    for (const auto& [k, c] : coeffs) {
      const double w = std::norm(c);
      all += w;
      if (k.norm2() < r2) low += w;
    }
    return all > 0 ? low / all : 0.0;
  }
  /// Smallest |m|^2 among sites holding more than `fraction` of the mass.
  std::int64_t min_norm2_above(double fraction) const {
    const double all = mass();
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    for (const auto& [k, c] : coeffs)
      if (all > 0 && std::norm(c) > fraction * all) best = std::min(best, k.norm2());
    return best;
  }
};

/// Relative l2 distance |x - y| / |y|.
inline double relative_l2(const LatticeField& x, const LatticeField& y) {
  double num = 0, den = 0;
  for (const auto& [k, c] : y.coeffs) {
    num += std::norm(x.get(k) - c);
    den += std::norm(c);
  }
  for (const auto& [k, c] : x.coeffs)
    if (!y.coeffs.count(k)) num += std::norm(c);
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

/// Line index k with m = a + k b, if any.
inline std::optional<std::int64_t> line_index(const LatticeVector& m, const LatticeVector& a, const LatticeVector& b) {
  const LatticeVector r = m - a;
  const std::int64_t nb = b.norm2();
  const std::int64_t rb = dot(r, b);
  if (rb % nb != 0) return std::nullopt;
  const std::int64_t k = rb / nb;
  if (r != k * b) return std::nullopt;
  return k;
}

/// theta at physical time s/L: coefficients e^{-A s} z^k at a + k b.
inline LatticeField lift_state(const StateVector& z, double s, const TransferStep& step, std::int64_t box = 0) {
  LatticeField f;
  f.dim = step.a.dim;
  const double decay = std::exp(-step.spectrum.A_value() * s);
  std::int64_t reach = 0;
  for (int k = z.window.k_min; k <= z.window.k_max; ++k) {
    const cplx c = z.at(k) * decay;
    if (c == cplx(0, 0)) continue;
    const LatticeVector m = step.a + static_cast<std::int64_t>(k) * step.b;
    if (box > 0 && m.max_abs() > box) continue;
    f.coeffs[m] = c;
    reach = std::max(reach, m.max_abs());
  }
  f.box = box > 0 ? box : reach;
  return f;
}

/// (|b|^n L / (alpha |a|)) sum_k |k|^n sup_t |v^k_t|.
inline double sobolev_norm_bound(const VelocityField& vf, int n) {
  if (n < 0) throw Error(Errc::BadInput, "Sobolev index must be >= 0");
  double sum = 0;
  for (const auto& [k, s] : field_sup_norms(vf.field)) sum += std::pow(std::abs(static_cast<double>(k)), n) * s;
  return std::pow(vf.step.b.norm(), n) * vf.prefactor() * sum;
}

/// max over y on a uniform grid of |b|^n (L/(alpha|a|)) |d^n v/dy^n (L t, y)|,
/// the operator norm of the n-th derivative of w at physical time t.
inline double grid_sample_norms(const VelocityField& vf, double t, int n, int grid_res) {
  if (grid_res < 64 || (grid_res & (grid_res - 1)) != 0)
    throw Error(Errc::BadInput, "grid_res must be a power of two >= 64");
  const ModeValues mv = vf.field.evaluate(vf.L() * t);
  double best = 0;
  for (int g = 0; g < grid_res; ++g) {
    const double y = 2.0 * M_PI * g / grid_res;
    cplx s(0, 0);
    for (std::size_t q = 0; q < mv.k.size(); ++q) {
      const double k = mv.k[q];
      const cplx ik_n = std::pow(cplx(0, k), n);
      const cplx e = std::polar(1.0, k * y);
      // v^k e^{iky} + conj(v^k) e^{-iky}, differentiated n times.
      s += ik_n * mv.v[q] * e + std::pow(cplx(0, -k), n) * std::conj(mv.v[q]) * std::conj(e);
    }
    best = std::max(best, std::abs(s));
  }
  return std::pow(vf.step.b.norm(), n) * vf.prefactor() * best;
}

struct DivergenceReport {
  bool exact_zero = false;
  double max_abs = 0;
};

/// Spectral divergence of w on sample points of the torus, plus the exact
/// check b . (a|b|^2 - (a.b) b) = 0.
inline DivergenceReport divergence_check(const VelocityField& vf, int grid_res, double t = 0) {
  DivergenceReport r;
  r.exact_zero = vf.step.geometry.exact_ell_dot(vf.step.b) == 0;
  const ModeValues mv = vf.field.evaluate(vf.L() * t);
  const int d = vf.step.a.dim;
  const auto& ell = vf.step.geometry.ell;
  // Points of a grid_res^min(d,2) plane tilted through all coordinates.
  const int n2 = grid_res * grid_res;
  for (int p = 0; p < n2; ++p) {
    double x[4] = {0, 0, 0, 0};
    const int i = p % grid_res, j = p / grid_res;
    for (int c = 0; c < d; ++c) x[c] = 2.0 * M_PI * ((i * (c + 1) + j * (2 * c + 1)) % grid_res) / grid_res;
    cplx div(0, 0);
    for (std::size_t q = 0; q < mv.k.size(); ++q) {
      const int k = mv.k[q];
      double phase = 0;
      for (int c = 0; c < d; ++c) phase += k * static_cast<double>(vf.step.b[c]) * x[c];
      const cplx e = std::polar(1.0, phase);
      double dl = 0;  // sum_c ell_c * (k b_c): the symbol of div applied to ell e^{ik b.x}
      for (int c = 0; c < d; ++c) dl += ell[c] * k * static_cast<double>(vf.step.b[c]);
      div += cplx(0, dl) * (mv.v[q] * e) + cplx(0, -dl) * std::conj(mv.v[q] * e);
    }
    r.max_abs = std::max(r.max_abs, std::abs(div) * vf.prefactor());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Full-lattice Galerkin oracle

struct OracleConfig {
  double dt_safety = 1.0 / 64.0;
  double landing_factor = 32.0;
  double shell_tolerance = 1e-16;
  /// When positive, steps are bounded by spread_step / sigma with sigma the
  /// mass-weighted standard deviation of |m|^2.
  double spread_step = 0;
  /// Physical times at which to store the field.
  std::vector<double> checkpoints;
};

struct OracleSample {
  double t = 0;
  double mass = 0;
  double dirichlet = 0;
  double off_line_mass = 0;
};

struct OracleResult {
  LatticeField final_field;
  std::vector<OracleSample> samples;
  std::vector<std::pair<double, LatticeField>> checkpoints;
  double max_shell_fraction = 0;
  std::size_t sites = 0;
  std::size_t steps = 0;
};

inline OracleResult full_lattice_simulate_ex(const LatticeField& theta0, const VelocityField& vf, std::int64_t box,
                                             double t0, double t1, double dt_max, const OracleConfig& cfg = {}) {
  if (!(t1 >= t0)) throw Error(Errc::BadInput, "oracle needs t1 >= t0");
  const int dim = vf.step.a.dim;
  const LatticeVector& b = vf.step.b;
  const double L = vf.L();
  const double pref = vf.prefactor();
  const auto& geo = vf.step.geometry;

  // Index set: closure of the initial support under m -> m +- j b for every
  // mode index j the field uses, inside the box.
  int jmax = 0;
  for (const auto& s : vf.field.segments) {
    if (std::holds_alternative<FeedbackSegment>(s)) jmax = std::max(jmax, 1);
    if (const auto* c = std::get_if<ConstantSegment>(&s))
      for (const auto& [k, v] : c->values) jmax = std::max(jmax, k);
  }
  std::vector<LatticeVector> sites;
  std::unordered_map<LatticeVector, int, LatticeHash> index;
  auto add = [&](const LatticeVector& m) {
    if (m.max_abs() > box || index.count(m)) return;
    index.emplace(m, static_cast<int>(sites.size()));
    sites.push_back(m);
  };
  for (const auto& [m, c] : theta0.coeffs) {
    if (m.max_abs() > box) throw Error(Errc::BadInput, "initial field not supported in the box");
    add(m);
  }
  for (std::size_t q = 0; q < sites.size(); ++q)
    for (int j = 1; j <= jmax; ++j) {
      add(sites[q] + static_cast<std::int64_t>(j) * b);
      add(sites[q] - static_cast<std::int64_t>(j) * b);
    }
  const int n = static_cast<int>(sites.size());
  // target[q][j + jmax] = index of sites[q] + j b or -1 outside the box.
  std::vector<std::vector<int>> target(n, std::vector<int>(2 * jmax + 1, -1));
  std::vector<char> shell(n, 0);
  std::vector<double> lap(n), ell_m(n);
  for (int q = 0; q < n; ++q) {
    lap[q] = static_cast<double>(sites[q].norm2());
    ell_m[q] = geo.ell_dot(sites[q]);
    for (int j = -jmax; j <= jmax; ++j) {
      if (j == 0) continue;
      auto it = index.find(sites[q] + static_cast<std::int64_t>(j) * b);
      if (it != index.end()) target[q][j + jmax] = it->second;
      else shell[q] = 1;
    }
  }
  std::vector<char> on_line(n);
  for (int q = 0; q < n; ++q) on_line[q] = line_index(sites[q], vf.step.a, b).has_value();
  const int ia = index.count(vf.step.a) ? index.at(vf.step.a) : -1;
  const int ic = index.count(vf.step.c) ? index.at(vf.step.c) : -1;

  std::vector<cplx> u(n, cplx(0, 0));
  for (const auto& [m, c] : theta0.coeffs) u[index.at(m)] = c;

  OracleResult out;
  out.sites = sites.size();
  auto sample = [&](double t) {
    OracleSample s;
    s.t = t;
    double num = 0;
    for (int q = 0; q < n; ++q) {
      const double w = std::norm(u[q]);
      s.mass += w;
      num += lap[q] * w;
      if (!on_line[q]) s.off_line_mass += w;
    }
    s.dirichlet = s.mass > 0 ? num / s.mass : 0.0;
    return s;
  };
  auto snapshot = [&] {
    LatticeField f;
    f.dim = dim;
    f.box = box;
    for (int q = 0; q < n; ++q)
      if (u[q] != cplx(0, 0)) f.coeffs[sites[q]] = u[q];
    return f;
  };
  out.samples.push_back(sample(t0));
  for (double c : cfg.checkpoints)
    if (c == t0) out.checkpoints.emplace_back(t0, snapshot());

  // Breakpoints in physical time.
  std::vector<double> stops;
  for (double s : vf.field.breakpoints(L * t0, L * t1)) stops.push_back(s / L);
  for (double c : cfg.checkpoints)
    if (c > t0 && c < t1) stops.push_back(c);
  stops.push_back(t1);
  std::sort(stops.begin(), stops.end());
  stops.erase(std::unique(stops.begin(), stops.end()), stops.end());

  std::vector<cplx> k1(n), k2(n), k3(n), k4(n), u2(n), u3(n), u4(n);
  std::vector<double> Ef(n), Eh(n);
  double cached_h = -1;
  std::size_t latch_segment = static_cast<std::size_t>(-1);
  bool latched = false;
  std::size_t next_stop = 0;
  double t = t0;

  // Advective term: for each source q and each j, target receives
  // i pref (ell . m_q) v^j theta_q.
  auto advect = [&](const std::vector<int>& js, const std::vector<cplx>& vs, const std::vector<cplx>& x,
                    std::vector<cplx>& out_) {
    std::fill(out_.begin(), out_.end(), cplx(0, 0));
    for (std::size_t p = 0; p < js.size(); ++p) {
      const int j = js[p];
      const cplx v = vs[p];
      if (v == cplx(0, 0)) continue;
      for (int q = 0; q < n; ++q) {
        if (x[q] == cplx(0, 0)) continue;
        const cplx src = cplx(0, pref * ell_m[q]) * x[q];
        const int tp = target[q][j + jmax];
        const int tm = target[q][-j + jmax];
        if (tp >= 0) out_[tp] += v * src;
        if (tm >= 0) out_[tm] += std::conj(v) * src;
      }
    }
  };
  auto norm_of = [&](const std::vector<cplx>& x) {
    double m = 0;
    for (const auto& c : x) m += std::norm(c);
    return std::sqrt(m);
  };

  while (t < t1) {
    while (next_stop < stops.size() && stops[next_stop] <= t) ++next_stop;
    const double boundary = stops[next_stop];
    const double s = L * t;
    const std::size_t si = vf.field.locate(s);
    const Segment& seg = vf.field.segments[si];
    const auto* fb = std::get_if<FeedbackSegment>(&seg);
    const auto* cs = std::get_if<ConstantSegment>(&seg);

    std::vector<int> js;
    std::vector<cplx> vs;
    double speed = 0;
    if (cs)
      for (const auto& [k, v] : cs->values) {
        js.push_back(k);
        vs.push_back(v);
        speed += 2 * std::abs(v);
      }
    bool live = false;
    double h_cap = std::numeric_limits<double>::infinity();
    if (fb) {
      if (si != latch_segment) {
        latch_segment = si;
        latched = false;
      }
      const double tl = s - fb->t0;
      if (tl < fb->params.switch_time) {
        live = true;
      } else if (!latched) {
        const double sc = norm_of(u);
        const double r0 = ia >= 0 ? std::abs(u[ia]) : 0.0;
        const double r1 = ic >= 0 ? std::abs(u[ic]) : 0.0;
        if (r0 <= fb->params.zero_tolerance * sc || r1 <= fb->params.zero_tolerance * sc) {
          latched = true;
        } else {
          live = true;
          h_cap = cfg.landing_factor * cfg.dt_safety * r0 / (fb->params.gain * r1) / L;
        }
      }
      if (live) speed = 2 * fb->params.gain;
    }
    double h = std::min({dt_max, cfg.dt_safety / (1.0 + speed) / L, h_cap});
    if (cfg.spread_step > 0) {
      double w = 0, m1 = 0, m2 = 0;
      for (int q = 0; q < n; ++q) {
        const double x = std::norm(u[q]);
        w += x;
        m1 += x * lap[q];
        m2 += x * lap[q] * lap[q];
      }
      const double var = w > 0 ? std::max(0.0, m2 / w - (m1 / w) * (m1 / w)) : 0.0;
      if (var > 0) h = std::min(h, cfg.spread_step / std::sqrt(var));
    }
    bool hits = false;
    if (t + h >= boundary) {
      h = boundary - t;
      hits = true;
    }
    if (!(h > 0)) throw Error(Errc::BadInput, "oracle step underflow");
    if (h != cached_h) {
      for (int q = 0; q < n; ++q) {
        Ef[q] = std::exp(-lap[q] * h);
        Eh[q] = std::exp(-0.5 * lap[q] * h);
      }
      cached_h = h;
    }
    auto rhs = [&](const std::vector<cplx>& x, double tau, std::vector<cplx>& o) {
      if (fb) {
        std::vector<int> fj;
        std::vector<cplx> fv;
        if (live) {
          const cplx x0 = ia >= 0 ? x[ia] : cplx(0, 0);
          const cplx x1 = ic >= 0 ? x[ic] : cplx(0, 0);
          fj.push_back(1);
          fv.push_back(stage1_feedback(x0, x1, L * tau - fb->t0, fb->params, norm_of(x)));
        }
        advect(fj, fv, x, o);
      } else {
        advect(js, vs, x, o);
      }
    };
    const bool moving = fb ? live : !js.empty();
    if (moving) {
      rhs(u, t, k1);
      for (int q = 0; q < n; ++q) u2[q] = Eh[q] * (u[q] + 0.5 * h * k1[q]);
      rhs(u2, t + 0.5 * h, k2);
      for (int q = 0; q < n; ++q) u3[q] = Eh[q] * u[q] + 0.5 * h * k2[q];
      rhs(u3, t + 0.5 * h, k3);
      for (int q = 0; q < n; ++q) u4[q] = Ef[q] * u[q] + h * Eh[q] * k3[q];
      rhs(u4, t + h, k4);
      for (int q = 0; q < n; ++q)
        u[q] = Ef[q] * u[q] + (h / 6.0) * (Ef[q] * k1[q] + 2.0 * Eh[q] * (k2[q] + k3[q]) + k4[q]);
    } else {
      for (int q = 0; q < n; ++q) u[q] *= Ef[q];
    }
    for (auto& x : u) {
      if (std::abs(x.real()) < 1e-300) x.real(0);
      if (std::abs(x.imag()) < 1e-300) x.imag(0);
    }
    t = hits ? boundary : t + h;
    ++out.steps;
    OracleSample sm = sample(t);
    if (sm.mass > 0) {
      double sh = 0;
      for (int q = 0; q < n; ++q)
        if (shell[q]) sh += std::norm(u[q]);
      out.max_shell_fraction = std::max(out.max_shell_fraction, sh / sm.mass);
      if (sh / sm.mass > cfg.shell_tolerance)
        throw Error(Errc::LeakExceeded, "boundary-shell mass fraction " + std::to_string(sh / sm.mass));
    }
    out.samples.push_back(sm);
    if (hits && std::find(cfg.checkpoints.begin(), cfg.checkpoints.end(), t) != cfg.checkpoints.end())
      out.checkpoints.emplace_back(t, snapshot());
  }
  out.final_field = snapshot();
  return out;
}

inline LatticeField full_lattice_simulate(const LatticeField& theta0, const VelocityField& vf, std::int64_t box,
                                          double t0, double t1, double dt) {
  return full_lattice_simulate_ex(theta0, vf, box, t0, t1, dt).final_field;
}

/// Smallest box >= requested holding every line site a + k b, k in window,
/// whose lifted amplitude can matter (the support of the reduced window).
inline std::int64_t oracle_box(const TransferStep& st, std::int64_t requested, int reach_k) {
  std::int64_t box = requested;
  for (int k = -reach_k; k <= reach_k + 1; ++k)
    box = std::max(box, (st.a + static_cast<std::int64_t>(k) * st.b).max_abs());
  return box;
}

/// Per-phase relative residual of ln(|theta_end|^2/|theta_start|^2) + 2 int ratio dt,
/// divided by 2 int ratio dt (trapezoid on the samples).
struct PhaseResidual {
  std::string label;
  double t0 = 0, t1 = 0;
  double residual = 0;
};

template <class Sample, class TimeOf, class LogMassOf, class RatioOf>
std::vector<PhaseResidual> energy_residuals(const std::vector<Sample>& samples, const std::vector<Phase>& phases,
                                            TimeOf time_of, LogMassOf log_mass_of, RatioOf ratio_of) {
  std::vector<PhaseResidual> out;
  for (const auto& ph : phases) {
    PhaseResidual r{ph.label, ph.t0, ph.t1, 0};
    double integral = 0, lm0 = 0, lm1 = 0;
    const Sample* prev = nullptr;
    for (const auto& s : samples) {
      const double t = time_of(s);
      if (t < ph.t0 || t > ph.t1) continue;
      if (prev) integral += 0.5 * (t - time_of(*prev)) * (ratio_of(*prev) + ratio_of(s));
      else lm0 = log_mass_of(s);
      lm1 = log_mass_of(s);
      prev = &s;
    }
    if (integral > 0) r.residual = std::abs(lm1 - lm0 + 2.0 * integral) / (2.0 * integral);
    out.push_back(r);
  }
  return out;
}

inline std::vector<PhaseResidual> oracle_energy_residuals(const OracleResult& res, const std::vector<Phase>& phases_phys) {
  return energy_residuals(
      res.samples, phases_phys, [](const OracleSample& s) { return s.t; },
      [](const OracleSample& s) { return std::log(s.mass); }, [](const OracleSample& s) { return s.dirichlet; });
}

// ---------------------------------------------------------------------------
// Export

inline void write_lattice_csv(std::ostream& os, const LatticeField& f) {
  static const char* names[4] = {"k1", "k2", "k3", "k4"};
  for (int i = 0; i < f.dim; ++i) os << names[i] << ',';
  os << "re,im\n";
  char buf[64];
  for (const auto& [k, c] : f.coeffs) {
    for (int i = 0; i < f.dim; ++i) os << k[i] << ',';
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", c.real(), c.imag());
    os << buf;
  }
}

/// Log-magnitude heatmap of the (k1, k2) plane; for d > 2 the remaining
/// coordinates are fixed to those of the largest coefficient.
inline void write_lattice_svg(std::ostream& os, const LatticeField& f) {
  LatticeVector peak = LatticeVector::zero(std::max(f.dim, 2));
  double pmax = 0;
  for (const auto& [k, c] : f.coeffs)
    if (std::abs(c) > pmax) {
      pmax = std::abs(c);
      peak = k;
    }
  const std::int64_t B = std::max<std::int64_t>(f.box, 1);
  const int cell = std::max<int>(2, static_cast<int>(480 / (2 * B + 1)));
  const int side = cell * static_cast<int>(2 * B + 1);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << side << "\" height=\"" << side << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"#101018\"/>\n";
  for (const auto& [k, c] : f.coeffs) {
    bool in_slice = true;
    for (int i = 2; i < f.dim; ++i) in_slice = in_slice && k[i] == peak[i];
    if (!in_slice || c == cplx(0, 0) || pmax == 0) continue;
    const double lv = std::max(0.0, 1.0 + std::log10(std::abs(c) / pmax) / 16.0);
    const int shade = static_cast<int>(std::round(255 * lv));
    const auto x = (k[0] + B) * cell, y = (B - k[1]) * cell;
    os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb("
       << shade << ',' << shade / 2 << ',' << 255 - shade << ")\"/>\n";
  }
  os << "</svg>\n";
}

}  // namespace mixcascade

#endif
