// mixcascade: plan, check, synthesize, run, verify and report mode cascades.

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <mixcascade/mixcascade.hpp>

using namespace mixcascade;

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::BadInput, "cannot open " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::BadInput, "cannot write " + path);
  out << text;
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  std::ifstream in(path);
  if (!in) throw Error(Errc::BadInput, "cannot open config " + path);
  return parse_config(in);
}

/// Plans keep their stored thresholds unless a configuration file is given.
CascadePlan load_plan(const std::string& path, RunConfig& cfg, bool use_config) {
  const nlohmann::json j = read_json(path);
  if (use_config) return plan_from_json(j, cfg.plan);
  CascadePlan plan = plan_from_json(j);
  cfg.plan = plan.options;
  return plan;
}

void print_plan_table(std::ostream& os, const CascadePlan& plan) {
  os << std::left << std::setw(5) << "step" << std::setw(10) << "role" << std::setw(20) << "a" << std::setw(20) << "c"
     << std::setw(10) << "L" << std::setw(12) << "M" << std::setw(10) << "S" << "pass\n";
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const auto& st = plan.steps[i];
    std::ostringstream L, M, S;
    L << st.spectrum.L;
    M << std::setprecision(6) << to_double(st.assumptions.M);
    S << std::setprecision(4) << to_double(st.assumptions.S);
    os << std::setw(5) << i << std::setw(10) << st.role << std::setw(20) << st.a.str() << std::setw(20) << st.c.str()
       << std::setw(10) << L.str() << std::setw(12) << M.str() << std::setw(10) << S.str()
       << (st.assumptions.pass ? "yes" : "no") << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mode-cascade planning, control synthesis and decay measurement"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "flat key = value configuration file");

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "build a cascade plan");
  int dim = 2, steps = 1;
  std::string start_csv, plan_out;
  std::optional<std::int64_t> p_opt;
  plan_cmd->add_option("--dim", dim, "dimension (2, 3 or 4)")->required()->check(CLI::IsMember({2, 3, 4}));
  plan_cmd->add_option("--start", start_csv, "start mode as comma-separated integers")->required();
  plan_cmd->add_option("--steps", steps, "blocks (2D, 4D) or transfers (3D)")->required();
  plan_cmd->add_option("--p", p_opt, "4D: fourth coordinate; searched upward when omitted and start has 3 entries");
  plan_cmd->add_option("--out", plan_out, "write the plan JSON here (default stdout)");
  std::optional<std::string> plan_m_min, plan_s_max;
  plan_cmd->add_option("--m-min", plan_m_min, "override M_min");
  plan_cmd->add_option("--s-max", plan_s_max, "override S_max");

  // check
  auto* check_cmd = app.add_subcommand("check", "assumption report for a plan");
  std::string check_plan;
  std::optional<std::string> m_min, s_max;
  check_cmd->add_option("--plan", check_plan, "plan JSON")->required();
  check_cmd->add_option("--m-min", m_min, "override M_min");
  check_cmd->add_option("--s-max", s_max, "override S_max");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "synthesize coefficient fields for every step");
  std::string synth_plan, synth_out;
  synth_cmd->add_option("--plan", synth_plan, "plan JSON")->required();
  synth_cmd->add_option("--out", synth_out, "fields JSON")->required();

  // run
  auto* run_cmd = app.add_subcommand("run", "run a cascade and write the decay report");
  std::string run_plan, run_out, run_csv;
  bool run_oracle = false;
  std::optional<double> dt_safety;
  run_cmd->add_option("--plan", run_plan, "plan JSON")->required();
  run_cmd->add_flag("--oracle", run_oracle, "also run the full-lattice oracle on every step");
  run_cmd->add_option("--dt-safety", dt_safety, "integrator safety factor");
  run_cmd->add_option("--out", run_out, "report JSON")->required();
  run_cmd->add_option("--csv", run_csv, "decay CSV");

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "run the invariant suite on a report");
  std::string verify_in;
  verify_cmd->add_option("--report", verify_in, "report JSON")->required();

  // report
  auto* report_cmd = app.add_subcommand("report", "fit a decay model and plot");
  std::string report_in, report_svg, report_fit = "double-exp";
  report_cmd->add_option("--in", report_in, "report JSON")->required();
  report_cmd->add_option("--svg", report_svg, "decay plot");
  report_cmd->add_option("--fit", report_fit, "double-exp, t2 or exp")
      ->check(CLI::IsMember({"double-exp", "t2", "exp"}));

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_config(config_path);

    if (*plan_cmd) {
      if (plan_m_min) cfg.plan.thresholds.M_min = parse_rational(*plan_m_min);
      if (plan_s_max) cfg.plan.thresholds.S_max = parse_rational(*plan_s_max);
      LatticeVector start = parse_lattice_csv(start_csv);
      if (dim == 4) {
        if (start.dim == 3) {
          const std::int64_t p = p_opt ? *p_opt : smallest_admissible_p(start, steps, cfg.plan);
          start = LatticeVector{start[0], start[1], start[2], p};
        } else if (p_opt) {
          start.c[3] = *p_opt;
        }
      }
      const CascadePlan plan = build_cascade(dim, start, steps, cfg.plan);
      const std::string text = to_json_value(plan).dump(2) + "\n";
      if (plan_out.empty()) {
        std::cout << text;
        print_plan_table(std::cerr, plan);
      } else {
        write_text(plan_out, text);
        print_plan_table(std::cout, plan);
      }
      return 0;
    }

    if (*check_cmd) {
      PlanOptions opt = cfg.plan;
      const nlohmann::json pj = read_json(check_plan);
      if (config_path.empty()) {
        opt.window_K = pj.at("window_K").get<int>();
        opt.thresholds.M_min = rational_from_json(pj.at("M_min"));
        opt.thresholds.S_max = rational_from_json(pj.at("S_max"));
      }
      if (m_min) opt.thresholds.M_min = parse_rational(*m_min);
      if (s_max) opt.thresholds.S_max = parse_rational(*s_max);
      opt.enforce = false;
      const CascadePlan plan = plan_from_json(pj, opt);
      nlohmann::json out = nlohmann::json::array();
      int failures = 0;
      for (std::size_t i = 0; i < plan.steps.size(); ++i) {
        const auto& st = plan.steps[i];
        nlohmann::json e = to_json_value(st.assumptions);
        e["step"] = i;
        e["role"] = st.role;
        out.push_back(e);
        if (!st.assumptions.pass) ++failures;
      }
      std::cout << out.dump(2) << "\n";
      print_plan_table(std::cerr, plan);
      return failures == 0 ? 0 : 1;
    }

    if (*synth_cmd) {
      const CascadePlan plan = load_plan(synth_plan, cfg, !config_path.empty());
      nlohmann::json out = nlohmann::json::array();
      for (std::size_t i = 0; i < plan.steps.size(); ++i) {
        const auto& st = plan.steps[i];
        ProtocolResult res;
        double eta = 0;
        try {
          res = run_step_protocol(st, cfg, &eta);
        } catch (const Error& e) {
          throw e.with_step(static_cast<int>(i));
        }
        nlohmann::json phases = nlohmann::json::array();
        for (const auto& ph : res.phases) phases.push_back({{"label", ph.label}, {"t0", ph.t0}, {"t1", ph.t1}});
        out.push_back({{"step", i},
                       {"role", st.role},
                       {"L", st.spectrum.L_value()},
                       {"duration", res.duration()},
                       {"beta", cplx_json(res.beta)},
                       {"residual", res.residual},
                       {"eta", eta},
                       {"phases", phases},
                       {"contraction", to_json_value(res.log)},
                       {"field", to_json_value(res.field)}});
        std::cout << "step " << i << " (" << st.role << "): duration " << res.duration() << ", residual "
                  << res.residual << "\n";
      }
      write_text(synth_out, nlohmann::json({{"config", to_json_value(cfg)}, {"steps", out}}).dump(1) + "\n");
      return 0;
    }

    if (*run_cmd) {
      if (dt_safety) cfg.controller.integrator.dt_safety = *dt_safety;
      const CascadePlan plan = load_plan(run_plan, cfg, !config_path.empty());
      RunOptions ro;
      ro.oracle = run_oracle;
      const DecayReport rep = run_cascade(plan, cfg, ro);
      write_text(run_out, to_json_value(rep).dump(1) + "\n");
      if (!run_csv.empty()) {
        std::ofstream csv(run_csv);
        write_decay_csv(csv, rep);
      }
      for (const auto& s : rep.steps)
        std::cout << "step " << s.index << " (" << s.role << "): T=" << s.duration << " t_phys=" << s.physical_duration
                  << " |beta|=" << std::abs(s.beta) << " residual=" << s.residual << "\n";
      std::cout << "final log mass " << rep.ledger_log_mass << ", " << rep.samples.size() << " samples, " << rep.seconds
                << " s\n";
      return 0;
    }

    if (*verify_cmd) {
      const DecayReport rep = report_from_json(read_json(verify_in));
      int failures = 0;
      for (const auto& r : verify_report(rep)) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
        if (!r.pass) ++failures;
      }
      return failures;
    }

    if (*report_cmd) {
      const DecayReport rep = report_from_json(read_json(report_in));
      const FitResult fit = fit_decay(rep, parse_model(report_fit));
      std::cout << model_name(fit.model) << ": params";
      for (double p : fit.params) std::cout << " " << p;
      std::cout << "  residual " << fit.residual << " over " << fit.n << " samples\n";
      for (const auto& [name, f] : rep.fits) std::cout << "  " << name << " residual " << f.residual << "\n";
      if (rep.plan.dimension == 4) {
        std::cout << "block rates:";
        for (double r : block_rates(rep)) std::cout << " " << r;
        std::cout << "\n";
      }
      if (!report_svg.empty()) {
        std::ofstream svg(report_svg);
        write_decay_svg(svg, rep, fit);
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what();
    if (e.step() >= 0) std::cerr << " (step " << e.step() << ")";
    std::cerr << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
