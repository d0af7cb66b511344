#ifndef MIXCASCADE_CONFIG_HPP
#define MIXCASCADE_CONFIG_HPP

/// @file config.hpp
/// @brief Run configuration as flat `key = value` text.

#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>

#include "controller.hpp"
#include "planner.hpp"

namespace mixcascade {

struct OracleSettings {
  std::int64_t box = 96;
  /// Physical time step cap.
  double dt = 1.0;
  double shell_tolerance = 1e-16;
  double spread_step = 5e-4;
  int checkpoints = 8;
};

inline ControllerConfig default_run_controller() {
  ControllerConfig c;
  c.integrator.spread_step = 5e-4;
  return c;
}

struct RunConfig {
  PlanOptions plan;
  ControllerConfig controller = default_run_controller();
  OracleSettings oracle;
  double residual_max = 1e-8;
  /// Downhill push amplitude; <= 0 selects e^{-|a|} alpha.
  double eta = 0;
  /// Keep every n-th integrator sample in the decay record.
  int sample_stride = 1;
  int grid_res = 256;
  int sobolev_max = 3;
};

namespace detail {

struct ConfigKey {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline std::string format_double(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error(Errc::BadInput, "config key '" + key + "' expects a number, got '" + v + "'");
  }
}

inline long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error(Errc::BadInput, "config key '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(Errc::BadInput, "config key '" + key + "' expects a boolean, got '" + v + "'");
}

#define MIXCASCADE_REAL(NAME, EXPR)                                                        \
  {                                                                                        \
    NAME, {[](RunConfig& c, const std::string& v) { c.EXPR = parse_double(NAME, v); },     \
           [](const RunConfig& c) { return format_double(c.EXPR); }}                       \
  }
#define MIXCASCADE_INT(NAME, EXPR)                                                                        \
  {                                                                                                       \
    NAME, {[](RunConfig& c, const std::string& v) { c.EXPR = static_cast<decltype(c.EXPR)>(parse_int(NAME, v)); }, \
           [](const RunConfig& c) { return std::to_string(c.EXPR); }}                                     \
  }
#define MIXCASCADE_BOOL(NAME, EXPR)                                                    \
  {                                                                                    \
    NAME, {[](RunConfig& c, const std::string& v) { c.EXPR = parse_bool(NAME, v); }, \
           [](const RunConfig& c) { return std::string(c.EXPR ? "true" : "false"); }} \
  }

inline const std::map<std::string, ConfigKey>& config_keys() {
  static const std::map<std::string, ConfigKey> keys = {
      {"plan.m_min",
       {[](RunConfig& c, const std::string& v) { c.plan.thresholds.M_min = parse_rational(v); },
        [](const RunConfig& c) { return c.plan.thresholds.M_min.str(); }}},
      {"plan.s_max",
       {[](RunConfig& c, const std::string& v) { c.plan.thresholds.S_max = parse_rational(v); },
        [](const RunConfig& c) { return c.plan.thresholds.S_max.str(); }}},
      MIXCASCADE_INT("plan.window_k", plan.window_K),
      MIXCASCADE_BOOL("plan.enforce", plan.enforce),
      MIXCASCADE_REAL("feedback.gain", controller.feedback.gain),
      MIXCASCADE_REAL("feedback.switch_time", controller.feedback.switch_time),
      MIXCASCADE_REAL("feedback.zero_tolerance", controller.feedback.zero_tolerance),
      MIXCASCADE_REAL("controller.stage1_tolerance", controller.stage1_tolerance),
      MIXCASCADE_REAL("controller.eps_start_max", controller.eps_start_max),
      MIXCASCADE_REAL("controller.eps_converged", controller.eps_converged),
      MIXCASCADE_REAL("controller.wait_grid", controller.wait_grid),
      MIXCASCADE_REAL("controller.wait_cap_factor", controller.wait_cap_factor),
      MIXCASCADE_REAL("controller.push_budget", controller.push_budget),
      MIXCASCADE_REAL("controller.push_cap", controller.push_cap),
      MIXCASCADE_REAL("controller.rho_min", controller.rho_min),
      MIXCASCADE_INT("controller.kmax_cap", controller.kmax_cap),
      MIXCASCADE_REAL("controller.kmax_tail", controller.kmax_tail),
      MIXCASCADE_INT("controller.dyadic_max_steps", controller.dyadic_max_steps),
      MIXCASCADE_REAL("integrator.dt_safety", controller.integrator.dt_safety),
      MIXCASCADE_REAL("integrator.leak_tolerance", controller.integrator.leak_tolerance),
      MIXCASCADE_REAL("integrator.blowup_tolerance", controller.integrator.blowup_tolerance),
      MIXCASCADE_REAL("integrator.flush_threshold", controller.integrator.flush_threshold),
      MIXCASCADE_REAL("integrator.landing_factor", controller.integrator.landing_factor),
      MIXCASCADE_REAL("integrator.max_dt", controller.integrator.max_dt),
      MIXCASCADE_REAL("integrator.spread_step", controller.integrator.spread_step),
      MIXCASCADE_BOOL("integrator.align_steps", controller.integrator.align_steps),
      MIXCASCADE_BOOL("integrator.check_leak", controller.integrator.check_leak),
      MIXCASCADE_INT("oracle.box", oracle.box),
      MIXCASCADE_REAL("oracle.dt", oracle.dt),
      MIXCASCADE_REAL("oracle.shell_tolerance", oracle.shell_tolerance),
      MIXCASCADE_REAL("oracle.spread_step", oracle.spread_step),
      MIXCASCADE_INT("oracle.checkpoints", oracle.checkpoints),
      MIXCASCADE_REAL("pipeline.residual_max", residual_max),
      MIXCASCADE_REAL("pipeline.eta", eta),
      MIXCASCADE_INT("pipeline.sample_stride", sample_stride),
      MIXCASCADE_INT("pipeline.grid_res", grid_res),
      MIXCASCADE_INT("pipeline.sobolev_max", sobolev_max),
  };
  return keys;
}

#undef MIXCASCADE_REAL
#undef MIXCASCADE_INT
#undef MIXCASCADE_BOOL

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& keys = detail::config_keys();
  auto it = keys.find(key);
  if (it == keys.end()) throw Error(Errc::BadInput, "unknown config key '" + key + "'");
  it->second.set(cfg, value);
}

/// Lines are `key = value`; `#` starts a comment.
inline RunConfig parse_config(std::istream& in, RunConfig cfg = {}) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(Errc::BadInput, "config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return cfg;
}

inline RunConfig parse_config_text(const std::string& text, RunConfig cfg = {}) {
  std::istringstream is(text);
  return parse_config(is, std::move(cfg));
}

inline std::map<std::string, std::string> resolved_config(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& [k, key] : detail::config_keys()) out[k] = key.get(cfg);
  return out;
}

inline std::string config_text(const RunConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : resolved_config(cfg)) s += k + " = " + v + "\n";
  return s;
}

inline nlohmann::json to_json_value(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : resolved_config(cfg)) j[k] = v;
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  for (const auto& [k, v] : j.items()) set_config_value(cfg, k, v.get<std::string>());
  return cfg;
}

}  // namespace mixcascade

#endif
