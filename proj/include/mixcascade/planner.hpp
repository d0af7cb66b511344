#ifndef MIXCASCADE_PLANNER_HPP
#define MIXCASCADE_PLANNER_HPP

/// @file planner.hpp
/// @brief Mode-to-mode transfer plans for the 2D, 3D and 4D cascades.
///
/// Each TransferStep moves mass from the pure mode a to c = a + b along the
/// Fourier line {a + k b}.  All vectors are stored in the world frame; the 3D
/// construction works in a sorted frame and maps back through the recorded
/// signed permutation.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "shear.hpp"
#include "spectrum.hpp"

namespace mixcascade {

struct PlanOptions {
  Thresholds thresholds;
  int window_K = 48;
  bool enforce = true;
};

/// sorted[i] = sign[i] * world[perm[i]].
struct SignedPermutation {
  int dim = 0;
  std::array<int, 4> perm{0, 1, 2, 3};
  std::array<int, 4> sign{1, 1, 1, 1};

  static SignedPermutation identity(int d) {
    SignedPermutation p;
    p.dim = d;
    return p;
  }
  bool is_identity() const {
    for (int i = 0; i < dim; ++i)
      if (perm[i] != i || sign[i] != 1) return false;
    return true;
  }
  LatticeVector to_sorted(const LatticeVector& w) const {
    LatticeVector s = LatticeVector::zero(dim);
    for (int i = 0; i < dim; ++i) s[i] = sign[i] * w[perm[i]];
    return s;
  }
  LatticeVector to_world(const LatticeVector& s) const {
    LatticeVector w = LatticeVector::zero(dim);
    for (int i = 0; i < dim; ++i) w[perm[i]] = sign[i] * s[i];
    return w;
  }
};

struct TransferStep {
  LatticeVector a;
  LatticeVector b;
  LatticeVector c;
  Direction direction = Direction::Uphill;
  ShearGeometry geometry;
  DiffusionSpectrum spectrum;
  AssumptionReport assumptions;
  SignedPermutation frame;
  std::string role;

  double alpha() const { return geometry.alpha; }
};

inline TransferStep make_step(const LatticeVector& a, const LatticeVector& b, Direction dir, const PlanOptions& opt,
                              std::string role, SignedPermutation frame = {}) {
  TransferStep st;
  st.a = a;
  st.b = b;
  st.c = a + b;
  st.direction = dir;
  st.geometry = shear_geometry(a, b);
  st.spectrum = build_line_spectrum(a, b, dir, IndexWindow::symmetric(opt.window_K));
  st.assumptions = check_assumptions(st.spectrum, opt.thresholds);
  st.frame = frame.dim == 0 ? SignedPermutation::identity(a.dim) : frame;
  st.role = std::move(role);
  if (opt.enforce && !st.assumptions.pass) {
    const auto& r = st.assumptions;
    std::string why;
    if (!r.M_ok) why += " M=" + std::to_string(to_double(r.M)) + " < M_min=" + std::to_string(to_double(r.thresholds.M_min));
    if (!r.S_ok) why += " S=" + std::to_string(to_double(r.S)) + " > S_max=" + std::to_string(to_double(r.thresholds.S_max));
    if (!r.spacing_ok) why += " spacing margin " + std::to_string(to_double(r.spacing_margin)) + " at k=" +
                              std::to_string(r.spacing_worst_k);
    throw Error(Errc::AssumptionFail, st.role + " step " + a.str() + " -> " + st.c.str() + ":" + why);
  }
  return st;
}

// ---------------------------------------------------------------------------
// Three-square lift

inline bool is_sum_of_three_squares(std::int64_t m) {
  if (m < 0) return false;
  if (m == 0) return true;
  while (m % 4 == 0) m /= 4;
  return m % 8 != 7;
}

struct ThreeSquareLift {
  std::array<std::int64_t, 3> triple{0, 0, 0};
  std::int64_t m = 0;
};

inline std::int64_t isqrt64(std::int64_t n) {
  auto r = static_cast<std::int64_t>(std::sqrt(static_cast<double>(n)));
  while (r * r > n) --r;
  while ((r + 1) * (r + 1) <= n) ++r;
  return r;
}

/// Smallest m in [n+1, n+8] that is a sum of three squares, with the
/// lexicographically smallest sorted triple x <= y <= z.
inline ThreeSquareLift three_square_lift(std::int64_t n) {
  if (n < 1) throw Error(Errc::BadInput, "three_square_lift needs n >= 1");
  for (std::int64_t m = n + 1; m <= n + 8; ++m) {
    if (!is_sum_of_three_squares(m)) continue;
    for (std::int64_t x = 0; 3 * x * x <= m; ++x) {
      for (std::int64_t y = x; x * x + 2 * y * y <= m; ++y) {
        const std::int64_t rest = m - x * x - y * y;
        const std::int64_t z = isqrt64(rest);
        if (z * z == rest && z >= y) return {{x, y, z}, m};
      }
    }
    throw Error(Errc::LiftNotFound, "representation test accepted " + std::to_string(m) + " but no triple found");
  }
  throw Error(Errc::LiftNotFound, "no sum of three squares in (" + std::to_string(n) + ", " + std::to_string(n + 8) + "]");
}

// ---------------------------------------------------------------------------
// Single steps

inline TransferStep plan_2d(std::int64_t r, const PlanOptions& opt = {}) {
  if (r < 2) throw Error(Errc::BadInput, "plan_2d needs r >= 2");
  return make_step({r, 0}, {-r, r + 1}, Direction::Uphill, opt, "2d");
}

/// The same construction with x and y relabeled: (0, s) -> (s+1, 0).
inline TransferStep plan_2d_swapped(std::int64_t s, const PlanOptions& opt = {}) {
  if (s < 2) throw Error(Errc::BadInput, "plan_2d needs r >= 2");
  SignedPermutation swap = SignedPermutation::identity(2);
  swap.perm = {1, 0, 2, 3};
  return make_step({0, s}, {s + 1, -s}, Direction::Uphill, opt, "2d-swap", swap);
}

/// Signed permutation sending v to its sorted nonnegative form.
inline SignedPermutation sorting_frame(const LatticeVector& v) {
  SignedPermutation p = SignedPermutation::identity(v.dim);
  std::array<int, 4> idx{0, 1, 2, 3};
  std::stable_sort(idx.begin(), idx.begin() + v.dim, [&](int i, int j) {
    const auto ai = v[i] < 0 ? -v[i] : v[i];
    const auto aj = v[j] < 0 ? -v[j] : v[j];
    return ai < aj;
  });
  for (int i = 0; i < v.dim; ++i) {
    p.perm[i] = idx[i];
    p.sign[i] = v[idx[i]] < 0 ? -1 : 1;
  }
  return p;
}

/// Image of src under the 3D construction c = (x, -z, y), in the world frame.
inline LatticeVector lift_target_3d(const LatticeVector& src, SignedPermutation* frame_out = nullptr) {
  if (src.dim != 3) throw Error(Errc::BadInput, "the 3D lift needs a 3-vector");
  if (src.is_zero()) throw Error(Errc::BadInput, "the 3D lift needs a nonzero source");
  const SignedPermutation frame = sorting_frame(src);
  const LatticeVector a_sorted = frame.to_sorted(src);
  const ThreeSquareLift lift = three_square_lift(a_sorted.norm2());
  const auto& t = lift.triple;
  if (frame_out) *frame_out = frame;
  return frame.to_world(LatticeVector{t[0], -t[2], t[1]});
}

inline TransferStep plan_3d(const LatticeVector& src, const PlanOptions& opt = {}) {
  SignedPermutation frame;
  const LatticeVector c = lift_target_3d(src, &frame);
  return make_step(src, c - src, Direction::Uphill, opt, "3d", frame);
}

struct Block4D {
  TransferStep uphill;
  TransferStep downhill;
};

/// Uphill (m,n,l,p) -> (m,n,l,-p-1), then downhill to (x,y,z,p) where
/// (x,y,z) is the sum-of-three-squares triple lifting |(m,n,l)|^2.
inline Block4D plan_4d(const LatticeVector& mnl, std::int64_t p, const PlanOptions& opt = {}) {
  if (mnl.dim != 3 || mnl.is_zero()) throw Error(Errc::BadInput, "plan_4d needs a nonzero 3-vector (m,n,l)");
  if (p < 10) throw Error(Errc::BadInput, "plan_4d needs p >= 10");
  const LatticeVector a_up{mnl[0], mnl[1], mnl[2], p};
  const LatticeVector b_up{0, 0, 0, -2 * p - 1};
  TransferStep up = make_step(a_up, b_up, Direction::Uphill, opt, "4d-up");

  const auto t = three_square_lift(mnl.norm2()).triple;
  const LatticeVector a_dn = up.c;
  const LatticeVector c_dn{t[0], t[1], t[2], p};
  if (c_dn.norm2() >= a_dn.norm2())
    throw Error(Errc::DownhillNotDown, a_dn.str() + " -> " + c_dn.str() + " does not lower |k|^2");
  const SignedPermutation frame4 = SignedPermutation::identity(4);
  TransferStep down = make_step(a_dn, c_dn - a_dn, Direction::Downhill, opt, "4d-down", frame4);
  return {std::move(up), std::move(down)};
}

// ---------------------------------------------------------------------------
// Sphere-geometry items, verified per instance

struct GeometryItem {
  bool ok = false;
  double margin = 0;
  int worst_k = 0;
};

struct GeometryCheck {
  double K = 0;
  double delta = 0;
  GeometryItem difference_nonzero;
  GeometryItem angle;
  GeometryItem growth;
  GeometryItem separation;

  bool pass() const { return difference_nonzero.ok && angle.ok && growth.ok && separation.ok; }
};

/// |a+(k+1)b|^2 - |a+(1-k)b|^2, exactly.
inline std::int64_t separation_value(const TransferStep& st, std::int64_t k) {
  return line_norm2(st.a, st.b, k + 1) - line_norm2(st.a, st.b, 1 - k);
}

inline GeometryCheck sphere_geometry_check(const TransferStep& st, IndexWindow range) {
  GeometryCheck g;
  const double na = st.a.norm();
  g.difference_nonzero.margin = st.b.norm() / na;
  g.difference_nonzero.ok = g.difference_nonzero.margin > 0;
  g.angle.margin = st.alpha();
  g.angle.ok = g.angle.margin > 0;

  bool first = true;
  for (int k = range.k_min; k <= range.k_max; ++k) {
    if (k == 0 || k == 1) continue;
    const double m = (std::sqrt(static_cast<double>(line_norm2(st.a, st.b, k))) - na) / (na * std::abs(k));
    if (first || m < g.growth.margin) {
      g.growth.margin = m;
      g.growth.worst_k = k;
      first = false;
    }
  }
  g.growth.ok = !first && g.growth.margin > 0;

  first = true;
  for (int k = 1; k + 1 <= range.k_max && 1 - k >= range.k_min; ++k) {
    const double m = static_cast<double>(separation_value(st, k)) / (na * k);
    if (first || m < g.separation.margin) {
      g.separation.margin = m;
      g.separation.worst_k = k;
      first = false;
    }
  }
  g.separation.ok = !first && g.separation.margin > 0;

  const double worst = std::min({g.angle.margin, g.growth.margin, g.separation.margin});
  g.K = worst > 0 ? 1.0 / worst : std::numeric_limits<double>::infinity();
  g.delta = std::abs(st.c.norm() / na - 1.0);
  return g;
}

// ---------------------------------------------------------------------------
// Cascades

struct CascadePlan {
  int dimension = 0;
  std::vector<TransferStep> steps;
  std::vector<LatticeVector> mode_trace;
  std::optional<std::int64_t> p;
  /// Transfers per composed block: 2 in 2D and 4D, 1 in 3D.
  int block_size = 1;
  PlanOptions options;

  int n_blocks() const { return static_cast<int>(steps.size()) / block_size; }
  /// Pure modes at block boundaries.
  std::vector<LatticeVector> block_trace() const {
    std::vector<LatticeVector> t;
    for (std::size_t i = 0; i < mode_trace.size(); i += block_size) t.push_back(mode_trace[i]);
    return t;
  }
};

inline CascadePlan build_cascade(int dimension, const LatticeVector& start, int n_steps, const PlanOptions& opt = {}) {
  if (n_steps < 0) throw Error(Errc::BadInput, "n_steps must be >= 0");
  if (start.dim != dimension) throw Error(Errc::BadInput, "start " + start.str() + " has the wrong dimension");
  CascadePlan plan;
  plan.dimension = dimension;
  plan.options = opt;
  plan.mode_trace.push_back(start);
  auto push = [&](TransferStep st) {
    plan.mode_trace.push_back(st.c);
    plan.steps.push_back(std::move(st));
  };
  auto guarded = [&](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      throw e.with_step(static_cast<int>(plan.steps.size()));
    }
  };
  if (dimension == 2) {
    if (start[1] != 0 || start[0] < 2) throw Error(Errc::BadInput, "2D cascades start at (r, 0) with r >= 2");
    plan.block_size = 2;
    std::int64_t r = start[0];
    for (int n = 0; n < n_steps; ++n, r += 2) {
      guarded([&] { push(plan_2d(r, opt)); });
      guarded([&] { push(plan_2d_swapped(r + 1, opt)); });
    }
  } else if (dimension == 3) {
    plan.block_size = 1;
    LatticeVector cur = start;
    for (int n = 0; n < n_steps; ++n) {
      guarded([&] { push(plan_3d(cur, opt)); });
      cur = plan.steps.back().c;
    }
  } else if (dimension == 4) {
    plan.block_size = 2;
    plan.p = start[3];
    LatticeVector mnl{start[0], start[1], start[2]};
    for (int n = 0; n < n_steps; ++n) {
      guarded([&] {
        Block4D blk = plan_4d(mnl, *plan.p, opt);
        push(std::move(blk.uphill));
        push(std::move(blk.downhill));
      });
      const auto& c = plan.steps.back().c;
      mnl = LatticeVector{c[0], c[1], c[2]};
    }
  } else {
    throw Error(Errc::BadInput, "dimension must be 2, 3 or 4");
  }
  return plan;
}

/// Smallest p >= p_start for which an n_blocks 4D cascade from (m,n,l) passes.
inline std::int64_t smallest_admissible_p(const LatticeVector& mnl, int n_blocks, const PlanOptions& opt = {},
                                          std::int64_t p_start = 10, std::int64_t p_stop = 4096) {
  for (std::int64_t p = p_start; p <= p_stop; ++p) {
    try {
      build_cascade(4, LatticeVector{mnl[0], mnl[1], mnl[2], p}, n_blocks, opt);
      return p;
    } catch (const Error& e) {
      if (e.code() != Errc::AssumptionFail) throw;
    }
  }
  throw Error(Errc::AssumptionFail, "no admissible p up to " + std::to_string(p_stop));
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json_value(const SignedPermutation& f) {
  return {{"perm", std::vector<int>(f.perm.begin(), f.perm.begin() + f.dim)},
          {"sign", std::vector<int>(f.sign.begin(), f.sign.begin() + f.dim)}};
}

inline SignedPermutation frame_from_json(const nlohmann::json& j) {
  const auto perm = j.at("perm").get<std::vector<int>>();
  const auto sign = j.at("sign").get<std::vector<int>>();
  SignedPermutation f = SignedPermutation::identity(static_cast<int>(perm.size()));
  for (int i = 0; i < f.dim; ++i) {
    f.perm[i] = perm[i];
    f.sign[i] = sign[i];
  }
  return f;
}

inline nlohmann::json to_json_value(const TransferStep& st) {
  return {{"role", st.role},
          {"a", st.a},
          {"b", st.b},
          {"c", st.c},
          {"direction", direction_name(st.direction)},
          {"ell", std::vector<double>(st.geometry.ell.begin(), st.geometry.ell.begin() + st.a.dim)},
          {"alpha", st.alpha()},
          {"frame", to_json_value(st.frame)},
          {"spectrum", to_json_value(st.spectrum)},
          {"assumptions", to_json_value(st.assumptions)}};
}

inline nlohmann::json to_json_value(const CascadePlan& plan) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& st : plan.steps) steps.push_back(to_json_value(st));
  nlohmann::json j = {{"dimension", plan.dimension},
                      {"block_size", plan.block_size},
                      {"window_K", plan.options.window_K},
                      {"M_min", rational_json(plan.options.thresholds.M_min)},
                      {"S_max", rational_json(plan.options.thresholds.S_max)},
                      {"steps", steps},
                      {"mode_trace", plan.mode_trace}};
  if (plan.p) j["p"] = *plan.p;
  return j;
}

/// Rebuilds every step from its stored (a, b, direction) with the given
/// options, so stored spectra are re-derived rather than trusted.
inline CascadePlan plan_from_json(const nlohmann::json& j, std::optional<PlanOptions> override_opt = std::nullopt) {
  CascadePlan plan;
  plan.dimension = j.at("dimension").get<int>();
  plan.block_size = j.at("block_size").get<int>();
  if (override_opt) {
    plan.options = *override_opt;
  } else {
    plan.options.window_K = j.at("window_K").get<int>();
    plan.options.thresholds.M_min = rational_from_json(j.at("M_min"));
    plan.options.thresholds.S_max = rational_from_json(j.at("S_max"));
  }
  if (j.contains("p")) plan.p = j.at("p").get<std::int64_t>();
  plan.mode_trace = j.at("mode_trace").get<std::vector<LatticeVector>>();
  int i = 0;
  for (const auto& s : j.at("steps")) {
    try {
      plan.steps.push_back(make_step(s.at("a").get<LatticeVector>(), s.at("b").get<LatticeVector>(),
                                     parse_direction(s.at("direction").get<std::string>()), plan.options,
                                     s.at("role").get<std::string>(), frame_from_json(s.at("frame"))));
    } catch (const Error& e) {
      throw e.with_step(i);
    }
    ++i;
  }
  for (std::size_t k = 0; k + 1 < plan.steps.size(); ++k)
    if (plan.steps[k].c != plan.steps[k + 1].a)
      throw Error(Errc::BadInput, "steps do not chain", static_cast<int>(k));
  return plan;
}

}  // namespace mixcascade

#endif
