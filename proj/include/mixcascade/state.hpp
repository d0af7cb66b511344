#ifndef MIXCASCADE_STATE_HPP
#define MIXCASCADE_STATE_HPP

#include <cmath>
#include <complex>
#include <vector>

#include "spectrum.hpp"

namespace mixcascade {

using cplx = std::complex<double>;

/// Truncated amplitudes z^k on a window of line indices, at rescaled time t.
struct StateVector {
  IndexWindow window;
  std::vector<cplx> amp;
  double t = 0;

  StateVector() = default;
  explicit StateVector(IndexWindow w, double t0 = 0) : window(w), amp(w.size(), cplx(0, 0)), t(t0) {}

  static StateVector delta(IndexWindow w, int k, cplx value = 1.0) {
    StateVector s(w);
    s.at(k) = value;
    return s;
  }

  cplx& at(int k) { return amp[window.offset(k)]; }
  const cplx& at(int k) const { return amp[window.offset(k)]; }
  cplx get(int k) const { return window.contains(k) ? at(k) : cplx(0, 0); }

  double mass() const {
    double m = 0;
    for (const auto& z : amp) m += std::norm(z);
    return m;
  }
  double norm() const { return std::sqrt(mass()); }
  double boundary_mass() const { return std::norm(amp.front()) + std::norm(amp.back()); }
};

struct MassRatio {
  double mass = 0;
  double off_mode_ratio = 0;
};

/// (sum |z^k|^2, sqrt(sum_{k != 1} |z^k|^2 / sum |z^k|^2)).
inline MassRatio mass_and_ratio(const StateVector& z) {
  double total = 0, off = 0;
  for (int k = z.window.k_min; k <= z.window.k_max; ++k) {
    const double m = std::norm(z.at(k));
    total += m;
    if (k != 1) off += m;
  }
  if (total == 0) throw Error(Errc::ZeroMass, "state has zero mass");
  return {total, std::sqrt(off / total)};
}

inline nlohmann::json to_json_value(const StateVector& z) {
  nlohmann::json amp = nlohmann::json::array();
  for (const auto& c : z.amp) amp.push_back({c.real(), c.imag()});
  return {{"window", {z.window.k_min, z.window.k_max}}, {"t", z.t}, {"amp", amp}};
}

}  // namespace mixcascade

#endif
