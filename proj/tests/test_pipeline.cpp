#include <gtest/gtest.h>

#include <sstream>

#include <mixcascade/pipeline.hpp>

using namespace mixcascade;

namespace {

RunConfig loose_config() {
  RunConfig cfg;
  cfg.plan.thresholds.M_min = 8;
  return cfg;
}

const DecayReport& two_blocks() {
  static const DecayReport r = [] {
    const RunConfig cfg = loose_config();
    return run_cascade(build_cascade(2, {8, 0}, 2, cfg.plan), cfg);
  }();
  return r;
}

std::vector<DecaySample> synthetic(double rate, int n) {
  std::vector<DecaySample> out;
  for (int i = 0; i < n; ++i) {
    const double t = 0.5 + 0.1 * i;
    out.push_back({t, -std::exp(rate * t), 0, 1, ""});
  }
  return out;
}

}  // namespace

TEST(Config, ParseAndRoundTrip) {
  const auto cfg = parse_config_text(
      "# comment\n"
      "plan.m_min = 17/2\n"
      "integrator.spread_step = 1e-3   # trailing\n"
      "plan.enforce = false\n"
      "controller.kmax_cap = 32\n"
      "\n");
  EXPECT_EQ(cfg.plan.thresholds.M_min, Rational(17, 2));
  EXPECT_EQ(cfg.controller.integrator.spread_step, 1e-3);
  EXPECT_FALSE(cfg.plan.enforce);
  EXPECT_EQ(cfg.controller.kmax_cap, 32);

  const auto back = parse_config_text(config_text(cfg));
  EXPECT_EQ(resolved_config(back), resolved_config(cfg));
  EXPECT_EQ(resolved_config(config_from_json(to_json_value(cfg))), resolved_config(cfg));
  // Defaults survive a text round trip bit for bit.
  const RunConfig d;
  EXPECT_EQ(parse_config_text(config_text(d)).controller.feedback.switch_time, d.controller.feedback.switch_time);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  for (const char* text : {"nope = 1\n", "integrator.dt_safety = fast\n", "plan.enforce = maybe\n",
                           "controller.kmax_cap = 3.5\n", "plan.m_min\n", "plan.m_min = 1/0\n"}) {
    try {
      parse_config_text(text);
      FAIL() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::BadInput) << text;
    }
  }
}

TEST(Fit, RecoversSyntheticDoubleExponential) {
  const auto s = synthetic(0.3, 40);
  const auto f = fit_samples(s, DecayModel::DoubleExp);
  ASSERT_EQ(f.params.size(), 2u);
  EXPECT_NEAR(f.params[1], 0.3, 1e-6);
  EXPECT_NEAR(f.params[0], 0.0, 1e-6);
  EXPECT_LT(f.residual, 1e-9);
  EXPECT_GT(fit_samples(s, DecayModel::Exp).residual, f.residual);
}

TEST(Fit, PowerLawModelsRecoverTheirOwnData) {
  std::vector<DecaySample> t2, t1;
  for (int i = 1; i <= 30; ++i) {
    const double t = 0.2 * i;
    t2.push_back({t, -3.0 * t * t, 0, 2, ""});
    t1.push_back({t, -3.0 * t, 0, 2, ""});
  }
  const auto a = fit_samples(t2, DecayModel::TSquared);
  EXPECT_NEAR(a.params[0], std::log(3.0), 1e-12);
  EXPECT_LT(a.residual, 1e-12);
  const auto b = fit_samples(t1, DecayModel::Exp);
  EXPECT_NEAR(b.params[0], std::log(3.0), 1e-12);
  EXPECT_LT(b.residual, 1e-12);
  EXPECT_GT(fit_samples(t2, DecayModel::Exp).residual, 1e-3);
}

TEST(Fit, InsufficientData) {
  auto s = synthetic(0.3, 9);
  try {
    fit_samples(s, DecayModel::DoubleExp);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InsufficientData);
  }
  // Samples from step 0 are excluded.
  s = synthetic(0.3, 40);
  for (auto& x : s) x.step = 0;
  EXPECT_THROW(fit_samples(s, DecayModel::Exp), Error);
  EXPECT_EQ(parse_model("t2"), DecayModel::TSquared);
  EXPECT_THROW(parse_model("quadratic"), Error);
}

TEST(Energy, PureDiffusionIdentity) {
  // Single mode |m|^2 = 4: log mass = -8 t, ratio 4.
  std::vector<DecaySample> s;
  for (int i = 0; i <= 200; ++i) s.push_back({0.01 * i, -8.0 * 0.01 * i, 4.0, 0, "p"});
  const auto r = energy_residuals(
      s, std::vector<Phase>{{"p", 0, 2}}, [](const DecaySample& x) { return x.t; },
      [](const DecaySample& x) { return x.log_mass; }, [](const DecaySample& x) { return x.dirichlet_ratio; });
  ASSERT_EQ(r.size(), 1u);
  EXPECT_LE(r[0].residual, 1e-10);
}

TEST(Cascade, ZeroStepsGiveOnlyTheInitialSample) {
  const RunConfig cfg = loose_config();
  const auto r = run_cascade(build_cascade(2, {8, 0}, 0, cfg.plan), cfg);
  EXPECT_TRUE(r.steps.empty());
  ASSERT_EQ(r.samples.size(), 1u);
  EXPECT_EQ(r.samples[0].log_mass, 0.0);
  EXPECT_EQ(r.samples[0].dirichlet_ratio, 64.0);
  EXPECT_EQ(r.ledger_log_mass, 0.0);
  EXPECT_TRUE(r.fits.empty());
}

TEST(Cascade, TwoDimensionalDurationsAndLedger) {
  const auto& r = two_blocks();
  ASSERT_EQ(r.steps.size(), 4u);
  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    const auto& s = r.steps[i];
    EXPECT_DOUBLE_EQ(s.physical_duration, s.duration / s.L);
    EXPECT_GE(s.duration, 2.0);
    EXPECT_LT(s.duration, 4.0);
    if (i > 0) EXPECT_NEAR(s.t_start, r.steps[i - 1].t_start + r.steps[i - 1].physical_duration, 1e-15);
  }
  // L grows with r, so physical durations shrink.
  EXPECT_LT(r.steps[2].physical_duration * r.steps[2].L, 4.0);
  EXPECT_GT(r.steps[0].L, 16.0);
  EXPECT_LT(r.steps[3].physical_duration, r.steps[0].physical_duration);
  const double rel = std::abs(std::expm1(r.ledger_log_mass - r.samples.back().log_mass));
  EXPECT_LE(rel, 1e-8);
  for (const auto& inv : verify_report(r)) EXPECT_TRUE(inv.pass) << inv.name << ": " << inv.detail;
}

TEST(Cascade, DirichletFloorAndMonotoneLogMass) {
  const auto& r = two_blocks();
  for (std::size_t i = 1; i < r.samples.size(); ++i) {
    ASSERT_LE(r.samples[i].log_mass, r.samples[i - 1].log_mass + 1e-12);
    const auto& st = r.steps.at(static_cast<std::size_t>(r.samples[i].step));
    ASSERT_GE(r.samples[i].dirichlet_ratio, static_cast<double>(st.support_floor) * (1 - 1e-12));
  }
}

TEST(Cascade, BlockRatesMatchLedger) {
  const auto& r = two_blocks();
  const auto rates = block_rates(r);
  ASSERT_EQ(rates.size(), 2u);
  for (std::size_t n = 0; n < 2; ++n) {
    const auto& s = r.steps[2 * n];
    const auto& e = r.steps[2 * n + 1];
    const double want = -(e.log_mass_end - s.log_mass_start) / (s.physical_duration + e.physical_duration);
    EXPECT_NEAR(rates[n], want, 1e-12 * want);
    EXPECT_GT(rates[n], 0.0);
  }
}

TEST(Cascade, TimeLedgerNeedsSixBlocks) {
  try {
    time_ledger(two_blocks());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InsufficientData);
  }
}

TEST(Cascade, ResidualTooLargeCarriesStep) {
  RunConfig cfg = loose_config();
  cfg.residual_max = 1e-300;
  try {
    run_cascade(build_cascade(2, {8, 0}, 1, cfg.plan), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ResidualTooLarge);
    EXPECT_EQ(e.step(), 0);
  }
}

TEST(Report, JsonRoundTrip) {
  const auto& r = two_blocks();
  const auto j = to_json_value(r);
  const auto back = report_from_json(nlohmann::json::parse(j.dump()));
  ASSERT_EQ(back.steps.size(), r.steps.size());
  ASSERT_EQ(back.samples.size(), r.samples.size());
  EXPECT_EQ(back.ledger_log_mass, r.ledger_log_mass);
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    ASSERT_EQ(back.samples[i].t, r.samples[i].t);
    ASSERT_EQ(back.samples[i].log_mass, r.samples[i].log_mass);
    ASSERT_EQ(back.samples[i].phase, r.samples[i].phase);
  }
  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    EXPECT_EQ(back.steps[i].beta, r.steps[i].beta);
    EXPECT_EQ(back.steps[i].sobolev, r.steps[i].sobolev);
    EXPECT_EQ(back.steps[i].phases.size(), r.steps[i].phases.size());
  }
  EXPECT_EQ(to_json_value(back).dump(), j.dump());
  const auto inv_a = verify_report(r), inv_b = verify_report(back);
  ASSERT_EQ(inv_a.size(), inv_b.size());
  for (std::size_t i = 0; i < inv_a.size(); ++i) EXPECT_EQ(inv_a[i].pass, inv_b[i].pass);
}

TEST(Report, CsvColumns) {
  const auto& r = two_blocks();
  std::ostringstream os;
  write_decay_csv(os, r);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "t,mass,log_mass,dirichlet_ratio,step_index,phase_label");
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    ASSERT_EQ(std::count(line.begin(), line.end(), ','), 5);
  }
  EXPECT_EQ(rows, r.samples.size());
  std::ostringstream svg;
  write_decay_svg(svg, r);
  EXPECT_NE(svg.str().find("</svg>"), std::string::npos);
}
