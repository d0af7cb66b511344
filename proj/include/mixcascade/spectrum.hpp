#ifndef MIXCASCADE_SPECTRUM_HPP
#define MIXCASCADE_SPECTRUM_HPP

/// @file spectrum.hpp
/// @brief Diffusion coefficients d_k on a Fourier line {a + k b}.
///
/// For the uphill normalization
///     L = |a+b|^2 - |a|^2,  A = |a|^2 / L,  d_k = |a+kb|^2 / L - A,
/// so that d_0 = 0 and d_1 = 1.  Downhill swaps the roles of a and a+b:
///     L = |a|^2 - |a+b|^2,  A = |a+b|^2 / L,  d_0 = 1, d_1 = 0.
/// Everything here is exact rational arithmetic.

#include <string>
#include <vector>

#include "lattice.hpp"

namespace mixcascade {

enum class Direction { Uphill, Downhill };

inline const char* direction_name(Direction d) { return d == Direction::Uphill ? "uphill" : "downhill"; }

inline Direction parse_direction(const std::string& s) {
  if (s == "uphill") return Direction::Uphill;
  if (s == "downhill") return Direction::Downhill;
  throw Error(Errc::BadInput, "unknown direction '" + s + "'");
}

/// Closed integer interval [k_min, k_max] of line indices.
struct IndexWindow {
  int k_min = -48;
  int k_max = 49;

  static IndexWindow symmetric(int K) { return {-K, K + 1}; }
  int size() const { return k_max - k_min + 1; }
  bool contains(int k) const { return k >= k_min && k <= k_max; }
  int offset(int k) const { return k - k_min; }
  friend bool operator==(const IndexWindow& x, const IndexWindow& y) {
    return x.k_min == y.k_min && x.k_max == y.k_max;
  }
};

/// Floating-point view of a spectrum: what the integrator consumes.
struct LineOperator {
  IndexWindow window;
  std::vector<double> d;

  double at(int k) const { return d[window.offset(k)]; }
};

struct DiffusionSpectrum {
  LatticeVector a;
  LatticeVector b;
  Direction direction = Direction::Uphill;
  Rational L;
  Rational A;
  IndexWindow window;
  std::vector<Rational> d;

  const Rational& at(int k) const {
    if (!window.contains(k)) throw Error(Errc::BadInput, "index " + std::to_string(k) + " outside window");
    return d[window.offset(k)];
  }
  double L_value() const { return to_double(L); }
  double A_value() const { return to_double(A); }

  LineOperator line_operator() const {
    LineOperator op;
    op.window = window;
    op.d.reserve(d.size());
    for (const auto& q : d) op.d.push_back(to_double(q));
    return op;
  }

  /// Integer coefficients with L*d_k = B k^2 + 2 P k + Q.
  std::int64_t quad_B() const { return b.norm2(); }
  std::int64_t quad_P() const { return dot(a, b); }
  std::int64_t quad_Q() const {
    return direction == Direction::Uphill ? 0 : a.norm2() - (a + b).norm2();
  }
};

inline DiffusionSpectrum build_line_spectrum(const LatticeVector& a, const LatticeVector& b, Direction direction,
                                             IndexWindow window = IndexWindow::symmetric(48)) {
  LatticeVector::check_same(a, b);
  if (a.is_zero() || b.is_zero()) throw Error(Errc::BadInput, "a and b must be nonzero");
  {
    const BigInt ab = dot(a, b);
    if (ab * ab >= BigInt(a.norm2()) * BigInt(b.norm2()))
      throw Error(Errc::ParallelVectors, a.str() + " is parallel to " + b.str());
  }
  if (!(window.k_min <= -2 && window.k_max >= 2)) throw Error(Errc::BadInput, "window must contain [-2, 2]");

  const std::int64_t na = a.norm2();
  const std::int64_t nc = (a + b).norm2();
  const std::int64_t diff = nc - na;
  if (diff == 0) throw Error(Errc::ZeroNormalization, "|a+b|^2 = |a|^2 for a=" + a.str() + ", b=" + b.str());
  if ((direction == Direction::Uphill) != (diff > 0))
    throw Error(Errc::WrongDirection, std::string("line ") + a.str() + " + k" + b.str() + " is not " +
                                          direction_name(direction));

  DiffusionSpectrum s;
  s.a = a;
  s.b = b;
  s.direction = direction;
  s.window = window;
  const std::int64_t L = direction == Direction::Uphill ? diff : -diff;
  const std::int64_t base = direction == Direction::Uphill ? na : nc;
  s.L = Rational(L);
  s.A = Rational(BigInt(base), BigInt(L));
  s.d.reserve(window.size());
  for (int k = window.k_min; k <= window.k_max; ++k) {
    const std::int64_t num = line_norm2(a, b, k) - base;
    if (num < 0)
      throw Error(Errc::NegativeCoefficient,
                  "d_" + std::to_string(k) + " < 0 on line " + a.str() + " + k" + b.str());
    s.d.emplace_back(BigInt(num), BigInt(L));
  }
  return s;
}

struct Thresholds {
  Rational M_min{64};
  Rational S_max{6};
};

struct AssumptionReport {
  Rational M;
  int M_at = 0;
  Rational S;
  Rational S_window;
  Rational S_tail;
  bool spacing_ok = false;
  Rational spacing_margin;
  int spacing_worst_k = 0;
  Thresholds thresholds;
  bool M_ok = false;
  bool S_ok = false;
  bool pass = false;

  Rational M_margin() const { return M - thresholds.M_min; }
  Rational S_margin() const { return thresholds.S_max - S; }
};

namespace detail {

/// Constant c > 0 with d_k >= c k^2 for all |k| >= K0 (one side), or <= 0 if none is certified.
inline Rational tail_growth_constant(const DiffusionSpectrum& s, std::int64_t K0) {
  const Rational B(s.quad_B());
  const Rational P(s.quad_P() < 0 ? -s.quad_P() : s.quad_P());
  const Rational Q(s.quad_Q() < 0 ? -s.quad_Q() : s.quad_Q());
  const Rational K(K0);
  return (B - 2 * P / K - Q / (K * K)) / s.L;
}

inline void require_monotone_edges(const DiffusionSpectrum& s) {
  const auto& w = s.window;
  if (!(s.at(w.k_max) > s.at(w.k_max - 1)) || !(s.at(w.k_min) > s.at(w.k_min + 1)))
    throw Error(Errc::WindowTooSmall, "d_k not increasing at the window edges [" + std::to_string(w.k_min) + ", " +
                                          std::to_string(w.k_max) + "]");
}

}  // namespace detail

inline AssumptionReport check_assumptions(const DiffusionSpectrum& s, const Thresholds& th = {}) {
  detail::require_monotone_edges(s);
  AssumptionReport r;
  r.thresholds = th;
  bool first = true;
  for (int k = s.window.k_min; k <= s.window.k_max; ++k) {
    const Rational& dk = s.at(k);
    r.S_window += Rational(1) / (1 + dk);
    if (k == 0 || k == 1) continue;
    if (first || dk < r.M) {
      r.M = dk;
      r.M_at = k;
      first = false;
    }
  }
  const std::int64_t K_right = s.window.k_max + 1;
  const std::int64_t K_left = 1 - static_cast<std::int64_t>(s.window.k_min);
  const Rational c_right = detail::tail_growth_constant(s, K_right);
  const Rational c_left = detail::tail_growth_constant(s, K_left);
  if (c_right <= 0 || c_left <= 0) throw Error(Errc::WindowTooSmall, "quadratic tail bound not certified");
  r.S_tail = 1 / (c_right * (K_right - 1)) + 1 / (c_left * (K_left - 1));
  r.S = r.S_window + r.S_tail;

  bool first_sp = true;
  for (int k = 1; k + 1 <= s.window.k_max && 1 - k >= s.window.k_min; ++k) {
    const Rational m = s.at(k + 1) - s.at(1 - k) - 1;
    if (first_sp || m < r.spacing_margin) {
      r.spacing_margin = m;
      r.spacing_worst_k = k;
      first_sp = false;
    }
  }
  r.spacing_ok = !first_sp && r.spacing_margin >= 0;
  r.M_ok = r.M >= th.M_min;
  r.S_ok = r.S <= th.S_max;
  r.pass = r.M_ok && r.S_ok && r.spacing_ok;
  return r;
}

/// Largest c certified on the window and its tails with d_k >= c k^2 for all |k| >= 2.
inline Rational quadratic_growth_constant(const DiffusionSpectrum& s) {
  detail::require_monotone_edges(s);
  Rational c = detail::tail_growth_constant(s, s.window.k_max + 1);
  const Rational cl = detail::tail_growth_constant(s, 1 - static_cast<std::int64_t>(s.window.k_min));
  if (cl < c) c = cl;
  for (int k = s.window.k_min; k <= s.window.k_max; ++k) {
    if (k > -2 && k < 2) continue;
    const Rational q = s.at(k) / (static_cast<std::int64_t>(k) * k);
    if (q < c) c = q;
  }
  return c;
}

inline nlohmann::json to_json_value(const DiffusionSpectrum& s) {
  nlohmann::json d = nlohmann::json::array();
  for (int k = s.window.k_min; k <= s.window.k_max; ++k) {
    const Rational& q = s.at(k);
    d.push_back({k, static_cast<std::int64_t>(numerator(q)), static_cast<std::int64_t>(denominator(q))});
  }
  return {{"a", s.a},
          {"b", s.b},
          {"direction", direction_name(s.direction)},
          {"L", rational_json(s.L)},
          {"A", rational_json(s.A)},
          {"window", {s.window.k_min, s.window.k_max}},
          {"d", d}};
}

/// Rebuilds the spectrum from (a, b, direction, window) and checks the stored
/// coefficients against the recomputed ones.
inline DiffusionSpectrum spectrum_from_json(const nlohmann::json& j) {
  const IndexWindow w{j.at("window").at(0).get<int>(), j.at("window").at(1).get<int>()};
  DiffusionSpectrum s = build_line_spectrum(j.at("a").get<LatticeVector>(), j.at("b").get<LatticeVector>(),
                                            parse_direction(j.at("direction").get<std::string>()), w);
  if (j.contains("d")) {
    for (const auto& e : j.at("d")) {
      const int k = e.at(0).get<int>();
      const Rational q(BigInt(e.at(1).get<std::int64_t>()), BigInt(e.at(2).get<std::int64_t>()));
      if (q != s.at(k)) throw Error(Errc::BadInput, "stored d_" + std::to_string(k) + " disagrees with a, b");
    }
  }
  return s;
}

inline nlohmann::json to_json_value(const AssumptionReport& r) {
  return {{"M", rational_json(r.M)},
          {"M_value", to_double(r.M)},
          {"M_at", r.M_at},
          {"S", to_double(r.S)},
          {"S_window", to_double(r.S_window)},
          {"S_tail_bound", to_double(r.S_tail)},
          {"spacing_ok", r.spacing_ok},
          {"spacing_margin", rational_json(r.spacing_margin)},
          {"spacing_worst_k", r.spacing_worst_k},
          {"M_min", to_double(r.thresholds.M_min)},
          {"S_max", to_double(r.thresholds.S_max)},
          {"M_margin", to_double(r.M_margin())},
          {"S_margin", to_double(r.S_margin())},
          {"pass", r.pass}};
}

}  // namespace mixcascade

#endif
