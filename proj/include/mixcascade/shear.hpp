#ifndef MIXCASCADE_SHEAR_HPP
#define MIXCASCADE_SHEAR_HPP

#include <array>
#include <cmath>

#include "lattice.hpp"

namespace mixcascade {

/// Shear direction and angle factor of a line {a + k b}:
///     ell   = (a - (a.b/|b|^2) b) / (|a| alpha)
///     alpha = sqrt(1 - (a.b)^2 / (|a|^2 |b|^2))
struct ShearGeometry {
  int dim = 0;
  std::array<double, 4> ell{0, 0, 0, 0};
  double alpha = 0;
  /// Integer vector a|b|^2 - (a.b) b, parallel to ell before normalization.
  std::array<BigInt, 4> ell_numerator;

  double ell_dot(const LatticeVector& m) const {
    double s = 0;
    for (int i = 0; i < dim; ++i) s += ell[i] * static_cast<double>(m[i]);
    return s;
  }
  /// b . (a|b|^2 - (a.b) b), zero in exact arithmetic.
  BigInt exact_ell_dot(const LatticeVector& b) const {
    BigInt s = 0;
    for (int i = 0; i < dim; ++i) s += ell_numerator[i] * b[i];
    return s;
  }
};

inline ShearGeometry shear_geometry(const LatticeVector& a, const LatticeVector& b) {
  LatticeVector::check_same(a, b);
  const BigInt ab = dot(a, b);
  const BigInt na = a.norm2(), nb = b.norm2();
  if (a.is_zero() || b.is_zero() || ab * ab >= na * nb)
    throw Error(Errc::ParallelVectors, a.str() + " and " + b.str() + " are parallel");
  ShearGeometry g;
  g.dim = a.dim;
  double len2 = 0;
  for (int i = 0; i < a.dim; ++i) {
    g.ell_numerator[i] = BigInt(a[i]) * nb - ab * b[i];
    const double x = static_cast<double>(g.ell_numerator[i]);
    len2 += x * x;
  }
  const double len = std::sqrt(len2);
  for (int i = 0; i < a.dim; ++i) g.ell[i] = static_cast<double>(g.ell_numerator[i]) / len;
  // alpha^2 = (|a|^2|b|^2 - (a.b)^2) / (|a|^2|b|^2), formed from the exact integer numerator.
  const BigInt num = na * nb - ab * ab;
  g.alpha = std::sqrt(static_cast<double>(num) / (static_cast<double>(na) * static_cast<double>(nb)));
  return g;
}

}  // namespace mixcascade

#endif
