#ifndef MIXCASCADE_FIELD_HPP
#define MIXCASCADE_FIELD_HPP

/// @file field.hpp
/// @brief Piecewise schedule of the line coefficients v^k_t.
///
/// Only k >= 1 is stored; v^{-k} = conj(v^k) and v^0 = 0 hold by construction.

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "state.hpp"

namespace mixcascade {

struct FeedbackParams {
  double gain = 256.0;
  double switch_time = 1.0 / 1024.0;
  /// Latch threshold relative to the current state norm.
  double zero_tolerance = 1e-13;
};

/// Stage-1 feedback value at local time t.  `scale` is the norm the
/// tolerance is measured against.
inline cplx stage1_feedback(cplx z0, cplx z1, double t, const FeedbackParams& p = {}, double scale = 1.0) {
  if (t < p.switch_time) return cplx(p.gain, 0);
  const double r0 = std::abs(z0), r1 = std::abs(z1);
  const double tol = p.zero_tolerance * scale;
  if (r0 <= tol || r1 <= tol) return cplx(0, 0);
  // -i g conj(z0)|z1| / (conj(z1)|z0|): modulus g, phase arg(z1) - arg(z0) - pi/2.
  const cplx u = std::conj(z0) / r0;
  const cplx w = z1 / r1;
  const cplx phase = u * w;
  return cplx(0, -p.gain) * (phase / std::abs(phase));
}

struct FeedbackSegment {
  double t0 = 0, t1 = 1;
  FeedbackParams params;
  /// Time at which the realized run latched to zero, if it did.
  std::optional<double> latch_time;
  /// Realized step-start values (t, a_t), kept for reporting.
  std::vector<std::pair<double, cplx>> samples;
};

struct ConstantSegment {
  double t0 = 0, t1 = 0;
  /// (k, v^k) for k >= 1, sorted by k.
  std::vector<std::pair<int, cplx>> values;

  cplx value(int k) const {
    for (const auto& [j, v] : values)
      if (j == k) return v;
    return cplx(0, 0);
  }
};

struct ZeroSegment {
  double t0 = 0, t1 = 0;
};

using Segment = std::variant<FeedbackSegment, ConstantSegment, ZeroSegment>;

inline double segment_t0(const Segment& s) {
  return std::visit([](const auto& x) { return x.t0; }, s);
}
inline double segment_t1(const Segment& s) {
  return std::visit([](const auto& x) { return x.t1; }, s);
}
inline const char* segment_kind(const Segment& s) {
  switch (s.index()) {
    case 0: return "feedback";
    case 1: return "constant";
    default: return "zero";
  }
}

/// Sparse positive-index coefficients at one instant.
struct ModeValues {
  std::vector<int> k;
  std::vector<cplx> v;

  cplx at(int j) const {
    if (j == 0) return cplx(0, 0);
    const int a = j < 0 ? -j : j;
    for (std::size_t i = 0; i < k.size(); ++i)
      if (k[i] == a) return j > 0 ? v[i] : std::conj(v[i]);
    return cplx(0, 0);
  }
  /// sum over all j != 0 of |v^j|.
  double l1() const {
    double s = 0;
    for (const auto& x : v) s += 2 * std::abs(x);
    return s;
  }
  bool empty() const {
    for (const auto& x : v)
      if (x != cplx(0, 0)) return false;
    return true;
  }
};

struct CoefficientField {
  std::vector<Segment> segments;

  bool empty() const { return segments.empty(); }
  double t_begin() const { return segments.empty() ? 0.0 : segment_t0(segments.front()); }
  double t_end() const { return segments.empty() ? 0.0 : segment_t1(segments.back()); }

  void append(Segment s) {
    const double a = segment_t0(s), b = segment_t1(s);
    if (!(b >= a)) throw Error(Errc::BadInput, "segment ends before it starts");
    if (!segments.empty() && a != t_end()) throw Error(Errc::BadInput, "segments must tile without gaps");
    segments.push_back(std::move(s));
  }

  void append(const CoefficientField& other) {
    for (const auto& s : other.segments) append(s);
  }

  /// Checks tiling of [t_begin, t_end] and the stored index convention.
  void validate() const {
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (segment_t1(segments[i]) < segment_t0(segments[i]))
        throw Error(Errc::BadInput, "segment " + std::to_string(i) + " is reversed");
      if (i > 0 && segment_t0(segments[i]) != segment_t1(segments[i - 1]))
        throw Error(Errc::BadInput, "gap or overlap before segment " + std::to_string(i));
      if (const auto* c = std::get_if<ConstantSegment>(&segments[i])) {
        int last = 0;
        for (const auto& [k, v] : c->values) {
          if (k <= last) throw Error(Errc::BadInput, "constant segment indices must be >= 1 and increasing");
          last = k;
        }
      }
    }
  }

  /// Index of the segment containing t; the right end of the last segment
  /// belongs to it.
  std::size_t locate(double t) const {
    if (segments.empty()) throw Error(Errc::BadInput, "empty field");
    for (std::size_t i = 0; i < segments.size(); ++i)
      if (t < segment_t1(segments[i])) return i;
    return segments.size() - 1;
  }

  /// Open-loop evaluation; feedback segments replay their recorded samples.
  ModeValues evaluate(double t) const {
    ModeValues mv;
    const Segment& s = segments[locate(t)];
    if (const auto* f = std::get_if<FeedbackSegment>(&s)) {
      cplx a(0, 0);
      if (t - f->t0 < f->params.switch_time) {
        a = f->params.gain;
      } else if (f->latch_time && t >= *f->latch_time) {
        a = 0;
      } else if (!f->samples.empty()) {
        auto it = std::upper_bound(f->samples.begin(), f->samples.end(), t,
                                   [](double x, const std::pair<double, cplx>& p) { return x < p.first; });
        a = it == f->samples.begin() ? f->samples.front().second : std::prev(it)->second;
      } else {
        a = f->params.gain;
      }
      mv.k.push_back(1);
      mv.v.push_back(a);
    } else if (const auto* c = std::get_if<ConstantSegment>(&s)) {
      for (const auto& [k, v] : c->values) {
        mv.k.push_back(k);
        mv.v.push_back(v);
      }
    }
    return mv;
  }

  /// Breakpoints of the schedule inside (a, b), in increasing order.
  std::vector<double> breakpoints(double a, double b) const {
    std::vector<double> out;
    for (const auto& s : segments) {
      const double t1 = segment_t1(s);
      if (t1 > a && t1 < b) out.push_back(t1);
      if (const auto* f = std::get_if<FeedbackSegment>(&s)) {
        const double ts = f->t0 + f->params.switch_time;
        if (ts > a && ts < b && ts < f->t1) out.push_back(ts);
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }
};

/// sup_t |v^k_t| per mode index, both signs; v^0 is omitted.
inline std::map<int, double> field_sup_norms(const CoefficientField& f) {
  std::map<int, double> sup;
  auto bump = [&](int k, double x) {
    for (int s : {k, -k}) {
      auto& e = sup[s];
      e = std::max(e, x);
    }
  };
  for (const auto& s : f.segments) {
    if (const auto* fb = std::get_if<FeedbackSegment>(&s)) {
      if (fb->t1 > fb->t0) bump(1, fb->params.gain);
    } else if (const auto* c = std::get_if<ConstantSegment>(&s)) {
      if (c->t1 > c->t0)
        for (const auto& [k, v] : c->values) bump(k, std::abs(v));
    }
  }
  return sup;
}

inline nlohmann::json cplx_json(cplx z) { return nlohmann::json::array({z.real(), z.imag()}); }
inline cplx cplx_from_json(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

inline nlohmann::json to_json_value(const Segment& s) {
  nlohmann::json j = {{"type", segment_kind(s)}, {"t0", segment_t0(s)}, {"t1", segment_t1(s)}};
  if (const auto* f = std::get_if<FeedbackSegment>(&s)) {
    j["gain"] = f->params.gain;
    j["switch_time"] = f->params.switch_time;
    j["zero_tolerance"] = f->params.zero_tolerance;
    j["latch_time"] = f->latch_time ? nlohmann::json(*f->latch_time) : nlohmann::json(nullptr);
    nlohmann::json samp = nlohmann::json::array();
    for (const auto& [t, a] : f->samples) samp.push_back({t, a.real(), a.imag()});
    j["samples"] = samp;
  } else if (const auto* c = std::get_if<ConstantSegment>(&s)) {
    nlohmann::json vals = nlohmann::json::object();
    for (auto it = c->values.rbegin(); it != c->values.rend(); ++it)
      vals[std::to_string(-it->first)] = cplx_json(std::conj(it->second));
    for (const auto& [k, v] : c->values) vals[std::to_string(k)] = cplx_json(v);
    j["values"] = vals;
  }
  return j;
}

inline nlohmann::json to_json_value(const CoefficientField& f) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : f.segments) segs.push_back(to_json_value(s));
  return {{"t_begin", f.t_begin()}, {"t_end", f.t_end()}, {"segments", segs}};
}

inline CoefficientField field_from_json(const nlohmann::json& j) {
  CoefficientField f;
  for (const auto& s : j.at("segments")) {
    const std::string type = s.at("type").get<std::string>();
    const double t0 = s.at("t0").get<double>(), t1 = s.at("t1").get<double>();
    if (type == "feedback") {
      FeedbackSegment fb;
      fb.t0 = t0;
      fb.t1 = t1;
      fb.params.gain = s.at("gain").get<double>();
      fb.params.switch_time = s.at("switch_time").get<double>();
      fb.params.zero_tolerance = s.at("zero_tolerance").get<double>();
      if (!s.at("latch_time").is_null()) fb.latch_time = s.at("latch_time").get<double>();
      for (const auto& e : s.at("samples"))
        fb.samples.emplace_back(e.at(0).get<double>(), cplx(e.at(1).get<double>(), e.at(2).get<double>()));
      f.append(fb);
    } else if (type == "constant") {
      ConstantSegment c;
      c.t0 = t0;
      c.t1 = t1;
      std::map<int, cplx> all;
      for (const auto& [key, val] : s.at("values").items()) all[std::stoi(key)] = cplx_from_json(val);
      for (const auto& [k, v] : all) {
        if (k == 0) {
          if (v != cplx(0, 0)) throw Error(Errc::BadInput, "v^0 must vanish");
          continue;
        }
        auto mirror = all.find(-k);
        if (mirror == all.end() || mirror->second != std::conj(v))
          throw Error(Errc::BadInput, "values violate v^{-k} = conj(v^k) at k=" + std::to_string(k));
        if (k > 0) c.values.emplace_back(k, v);
      }
      f.append(c);
    } else if (type == "zero") {
      f.append(ZeroSegment{t0, t1});
    } else {
      throw Error(Errc::BadInput, "unknown segment type '" + type + "'");
    }
  }
  f.validate();
  return f;
}

}  // namespace mixcascade

#endif
