#ifndef MIXCASCADE_LATTICE_HPP
#define MIXCASCADE_LATTICE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

#include "error.hpp"

namespace mixcascade {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

inline double to_double(const Rational& q) { return static_cast<double>(q); }

/// Integer wavevector in Z^d, d in {2,3,4}.
struct LatticeVector {
  int dim = 0;
  std::array<std::int64_t, 4> c{0, 0, 0, 0};

  LatticeVector() = default;
  LatticeVector(std::initializer_list<std::int64_t> xs) {
    if (xs.size() < 2 || xs.size() > 4)
      throw Error(Errc::BadInput, "lattice vectors have dimension 2, 3 or 4");
    dim = static_cast<int>(xs.size());
    int i = 0;
    for (auto x : xs) c[i++] = x;
  }
  explicit LatticeVector(const std::vector<std::int64_t>& xs) {
    if (xs.size() < 2 || xs.size() > 4)
      throw Error(Errc::BadInput, "lattice vectors have dimension 2, 3 or 4");
    dim = static_cast<int>(xs.size());
    for (int i = 0; i < dim; ++i) c[i] = xs[i];
  }
  static LatticeVector zero(int d) {
    LatticeVector v;
    if (d < 2 || d > 4) throw Error(Errc::BadInput, "dimension must be 2, 3 or 4");
    v.dim = d;
    return v;
  }

  std::int64_t& operator[](int i) { return c[i]; }
  std::int64_t operator[](int i) const { return c[i]; }

  bool is_zero() const {
    for (int i = 0; i < dim; ++i)
      if (c[i] != 0) return false;
    return true;
  }
  std::int64_t norm2() const {
    std::int64_t s = 0;
    for (int i = 0; i < dim; ++i) s += c[i] * c[i];
    return s;
  }
  double norm() const { return std::sqrt(static_cast<double>(norm2())); }
  std::int64_t max_abs() const {
    std::int64_t m = 0;
    for (int i = 0; i < dim; ++i) m = std::max<std::int64_t>(m, c[i] < 0 ? -c[i] : c[i]);
    return m;
  }
  std::vector<std::int64_t> to_vector() const {
    return std::vector<std::int64_t>(c.begin(), c.begin() + dim);
  }
  std::string str() const {
    std::ostringstream os;
    os << '(';
    for (int i = 0; i < dim; ++i) os << (i ? "," : "") << c[i];
    os << ')';
    return os.str();
  }

  friend bool operator==(const LatticeVector& x, const LatticeVector& y) {
    if (x.dim != y.dim) return false;
    for (int i = 0; i < x.dim; ++i)
      if (x.c[i] != y.c[i]) return false;
    return true;
  }
  friend bool operator!=(const LatticeVector& x, const LatticeVector& y) { return !(x == y); }
  friend bool operator<(const LatticeVector& x, const LatticeVector& y) {
    if (x.dim != y.dim) return x.dim < y.dim;
    return x.c < y.c;
  }
  friend LatticeVector operator+(LatticeVector x, const LatticeVector& y) {
    check_same(x, y);
    for (int i = 0; i < x.dim; ++i) x.c[i] += y.c[i];
    return x;
  }
  friend LatticeVector operator-(LatticeVector x, const LatticeVector& y) {
    check_same(x, y);
    for (int i = 0; i < x.dim; ++i) x.c[i] -= y.c[i];
    return x;
  }
  friend LatticeVector operator*(std::int64_t k, LatticeVector x) {
    for (int i = 0; i < x.dim; ++i) x.c[i] *= k;
    return x;
  }

  static void check_same(const LatticeVector& x, const LatticeVector& y) {
    if (x.dim != y.dim) throw Error(Errc::BadInput, "dimension mismatch " + x.str() + " vs " + y.str());
  }
};

inline std::int64_t dot(const LatticeVector& x, const LatticeVector& y) {
  LatticeVector::check_same(x, y);
  std::int64_t s = 0;
  for (int i = 0; i < x.dim; ++i) s += x.c[i] * y.c[i];
  return s;
}

/// |a + k b|^2 as an exact integer.
inline std::int64_t line_norm2(const LatticeVector& a, const LatticeVector& b, std::int64_t k) {
  return a.norm2() + 2 * k * dot(a, b) + k * k * b.norm2();
}

struct LatticeHash {
  std::size_t operator()(const LatticeVector& v) const noexcept {
    std::size_t h = static_cast<std::size_t>(v.dim);
    for (int i = 0; i < v.dim; ++i)
      h = h * 1000003u ^ std::hash<std::int64_t>{}(v.c[i]);
    return h;
  }
};

inline LatticeVector parse_lattice_csv(const std::string& s) {
  std::vector<std::int64_t> xs;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      xs.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw Error(Errc::BadInput, "not an integer list: " + s);
    }
  }
  return LatticeVector(xs);
}

inline void to_json(nlohmann::json& j, const LatticeVector& v) { j = v.to_vector(); }
inline void from_json(const nlohmann::json& j, LatticeVector& v) {
  v = LatticeVector(j.get<std::vector<std::int64_t>>());
}

/// Rationals travel as [num, den] when both fit in 64 bits, else as "num/den".
inline nlohmann::json rational_json(const Rational& q) {
  const BigInt n = numerator(q), d = denominator(q);
  const BigInt lim = BigInt(std::numeric_limits<std::int64_t>::max());
  if (abs(n) <= lim && d <= lim)
    return nlohmann::json::array({static_cast<std::int64_t>(n), static_cast<std::int64_t>(d)});
  return n.str() + "/" + d.str();
}

inline Rational rational_from_json(const nlohmann::json& j) {
  if (j.is_array()) return Rational(BigInt(j.at(0).get<std::int64_t>()), BigInt(j.at(1).get<std::int64_t>()));
  if (j.is_string()) return Rational(j.get<std::string>());
  if (j.is_number_integer()) return Rational(j.get<std::int64_t>());
  throw Error(Errc::BadInput, "cannot read rational from " + j.dump());
}

/// Parses "p/q", an integer, or a finite decimal such as "0.25" exactly.
namespace detail {

inline Rational parse_rational_unchecked(const std::string& s) {
  if (s.find('/') != std::string::npos) return Rational(s);
  const auto dotpos = s.find('.');
  if (dotpos == std::string::npos && s.find_first_of("eE") == std::string::npos) return Rational(BigInt(s));
  if (s.find_first_of("eE") != std::string::npos) {
    // Scientific notation goes through double.
    const double x = std::stod(s);
    return Rational(x);
  }
  std::string digits = s.substr(0, dotpos) + s.substr(dotpos + 1);
  const std::size_t frac = s.size() - dotpos - 1;
  BigInt den = 1;
  for (std::size_t i = 0; i < frac; ++i) den *= 10;
  if (digits.empty() || digits == "-" || digits == "+") digits += "0";
  return Rational(BigInt(digits), den);
}

}  // namespace detail

inline Rational parse_rational(const std::string& s) {
  try {
    return detail::parse_rational_unchecked(s);
  } catch (const std::exception& e) {
    throw Error(Errc::BadInput, "bad rational '" + s + "': " + e.what());
  }
}

}  // namespace mixcascade

#endif
