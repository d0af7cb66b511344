#include <gtest/gtest.h>

#include <random>

#include <boost/math/quadrature/gauss.hpp>

#include <mixcascade/controller.hpp>
#include <mixcascade/planner.hpp>

using namespace mixcascade;

namespace {

DiffusionSpectrum r_spectrum(std::int64_t r) {
  return build_line_spectrum({r, 0}, {-r, r + 1}, Direction::Uphill);
}

DiffusionSpectrum downhill_spectrum() {
  const LatticeVector a{1, 0, 0, -17}, c{0, 1, 1, 16};
  return build_line_spectrum(a, c - a, Direction::Downhill);
}

/// A normalized snapshot with random off-mode content of ratio about eps.
StateVector perturbed(IndexWindow w, double eps, unsigned seed, int reach = 6) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g;
  StateVector z = StateVector::delta(w, 1);
  for (int k = 1 - reach; k <= 1 + reach; ++k)
    if (k != 1 && w.contains(k)) z.at(k) = eps * cplx(g(rng), g(rng)) / std::sqrt(2.0 * reach);
  return z;
}

/// i int_0^T e^{-d_t (T-s)} e^{-d_1 s} v_s ds for v = a on [0,T/2], b after.
cplx gamma_quadrature(double d_target, double d1, double T, cplx a, cplx b) {
  using boost::math::quadrature::gauss;
  auto f = [&](double s) { return std::exp(-d_target * (T - s) - d1 * s); };
  const double h = 0.5 * T;
  const double I1 = gauss<double, 30>::integrate(f, 0.0, h);
  const double I2 = gauss<double, 30>::integrate(f, h, T);
  return cplx(0, 1) * (a * I1 + b * I2);
}

}  // namespace

TEST(Feedback, Examples) {
  EXPECT_EQ(stage1_feedback(cplx(0.3, 0.1), cplx(0.0, 2.0), 0.0005), cplx(256, 0));
  const cplx v = stage1_feedback(1.0, cplx(0, 0.7), 0.5);
  EXPECT_NEAR(v.real(), 256.0, 1e-12);
  EXPECT_NEAR(v.imag(), 0.0, 1e-12);
  EXPECT_EQ(stage1_feedback(0.0, cplx(0, 0.7), 0.5), cplx(0, 0));
  EXPECT_EQ(stage1_feedback(1.0, 0.0, 0.5), cplx(0, 0));
}

TEST(Feedback, MagnitudeNeverExceedsGain) {
  std::mt19937 rng(7);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 20000; ++i) {
    const cplx z0(g(rng), g(rng)), z1(g(rng), g(rng));
    const double t = u(rng);
    const cplx a = stage1_feedback(z0, z1, t);
    ASSERT_LE(std::abs(a), 256.0 * (1 + 1e-15));
    const cplx want = cplx(0, -256) * std::conj(z0) * std::abs(z1) / (std::conj(z1) * std::abs(z0));
    if (t >= 1.0 / 1024) ASSERT_LT(std::abs(a - want), 1e-10 * 256);
  }
}

TEST(Newton, ZeroOffModeGivesZeroControls) {
  const auto s = r_spectrum(5);
  const auto z = StateVector::delta(s.window, 1, cplx(0.3, -0.4));
  const auto nc = newton_step_controls(z, 0.5, s, 10);
  ASSERT_EQ(nc.per_k.size(), 10u);
  for (const auto& p : nc.per_k) {
    EXPECT_EQ(p.a, cplx(0, 0));
    EXPECT_EQ(p.b, cplx(0, 0));
  }
}

TEST(Newton, InverseIdentityR5) {
  const auto s = r_spectrum(5);
  const auto op = s.line_operator();
  const double T = 0.5, h = 0.25;
  const double xp = op.at(2) - op.at(1), xm = op.at(0) - op.at(1);
  const auto c = newton_coefficients<double>(xp, xm, h);
  const double Ep = std::exp(xp * h), Em = std::exp(xm * h);
  // Columns of the inverse from unit right-hand sides: M (a,b) = -i (r1, r2).
  const auto col1 = newton_pair(c, cplx(-1.0 / c.inv_plus), cplx(0.0));
  const auto col2 = newton_pair(c, cplx(0.0), cplx(1.0 / c.inv_minus));
  const cplx I(0, 1);
  const cplx m11 = I * col1.a, m21 = I * col1.b, m12 = I * col2.a, m22 = I * col2.b;
  EXPECT_NEAR(std::abs(m11 + Ep * m21 - 1.0), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(m12 + Ep * m22), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(m11 + Em * m21), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(m12 + Em * m22 - 1.0), 0.0, 1e-12);
  (void)T;
}

TEST(Newton, ReconstructionScaledForm) {
  for (std::int64_t r : {5, 8, 16}) {
    const auto s = r_spectrum(r);
    const auto op = s.line_operator();
    const auto z = perturbed(s.window, 1e-4, 11, 40);
    for (double T : {1.0, 0.5, 0.125, 1.0 / 64}) {
      const auto nc = newton_step_controls(z, T, op, 40);
      const double h = 0.5 * T;
      for (const auto& p : nc.per_k) {
        const double xp = op.at(p.k + 1) - op.at(1), xm = op.at(1 - p.k) - op.at(1);
        const double sp = std::exp(-xp * h);
        const cplx I(0, 1);
        // Rows with growing exponentials are scaled by e^{-x h}.
        const double sm = xm > 0 ? std::exp(-xm * h) : 1.0;
        const double em = xm > 0 ? 1.0 : std::exp(xm * h);
        const cplx res1 = sp * p.a + p.b + I * p.r1 * sp;
        const cplx res2 = sm * p.a + em * p.b + I * p.r2 * sm;
        const double scale = std::hypot(std::abs(p.r1) * sp, std::abs(p.r2) * sm) + std::abs(p.b) + std::abs(p.a) * std::max(sp, sm);
        if (scale == 0) {
          ASSERT_EQ(std::abs(res1) + std::abs(res2), 0.0);
          continue;
        }
        ASSERT_LE(std::abs(res1) / scale, 1e-10) << "r=" << r << " k=" << p.k << " T=" << T;
        ASSERT_LE(std::abs(res2) / scale, 1e-10) << "r=" << r << " k=" << p.k << " T=" << T;
        // Right-hand sides from the normalized snapshot.
        const cplx z1 = z.get(1);
        EXPECT_NEAR(std::abs(p.r1 + z.get(p.k + 1) / z1 * inverse_half_integral(xp, h)), 0.0,
                    1e-14 * (1 + std::abs(p.r1)));
        EXPECT_NEAR(std::abs(p.r2 - std::conj(z.get(1 - p.k) / z1) * inverse_half_integral(xm, h)), 0.0,
                    1e-14 * (1 + std::abs(p.r2)));
      }
    }
  }
}

TEST(Newton, GammaCancellationModerateModes) {
  const auto s = r_spectrum(5);
  const auto op = s.line_operator();
  const auto z = perturbed(s.window, 1e-3, 3, 8);
  for (double T : {0.5, 0.125}) {
    const int kmax = T == 0.5 ? 2 : 4;
    const auto nc = newton_step_controls(z, T, op, kmax);
    for (const auto& p : nc.per_k) {
      const int k = p.k;
      const cplx gp = gamma_quadrature(op.at(k + 1), op.at(1), T, p.a, p.b);
      const cplx want_p = -std::exp(-op.at(k + 1) * T) * z.get(k + 1);
      EXPECT_LE(std::abs(gp - want_p) / std::abs(want_p), 1e-8) << "k=" << k << " T=" << T;
      const cplx gm = gamma_quadrature(op.at(1 - k), op.at(1), T, std::conj(p.a), std::conj(p.b));
      const cplx want_m = -std::exp(-op.at(1 - k) * T) * z.get(1 - k);
      EXPECT_LE(std::abs(gm - want_m) / std::abs(want_m), 1e-8) << "k=" << k << " T=" << T;
    }
  }
}

TEST(Newton, RemovableSingularity) {
  for (double x : {0.0, 1e-9, -1e-9, 1e-5, -1e-5, 3e-4}) {
    const double h = 0.25;
    const double exact = x == 0 ? h : std::expm1(x * h) / x;
    EXPECT_NEAR(1.0 / inverse_half_integral(x, h), exact, 1e-15 * h);
  }
  EXPECT_NEAR(inverse_half_integral(-5000.0, 0.5), 5000.0, 1e-9);
}

TEST(Newton, DegenerateSpacing) {
  LineOperator op;
  op.window = {-3, 4};
  op.d = {9, 4, 1, 0, 1, 4, 9, 16};
  auto z = StateVector::delta(op.window, 1);
  z.at(2) = 1e-5;
  // d_{1+1} = d_{1-1}.
  op.d[op.window.offset(2)] = op.d[op.window.offset(0)];
  try {
    newton_step_controls(z, 0.5, op, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DegenerateSpacing);
  }
}

TEST(Dyadic, ZeroHandoff) {
  const auto s = r_spectrum(5);
  const auto out = dyadic_schedule(StateVector::delta(s.window, 1), s.line_operator());
  EXPECT_TRUE(out.log.entries.empty());
  ASSERT_EQ(out.field.segments.size(), 1u);
  EXPECT_TRUE(std::holds_alternative<ZeroSegment>(out.field.segments[0]));
  EXPECT_DOUBLE_EQ(out.field.t_end() - out.field.t_begin(), 1.0);
}

TEST(Dyadic, QuadraticContractionAndDeterminism) {
  for (std::int64_t r : {5, 8}) {
    const auto s = r_spectrum(r);
    const auto z = perturbed(s.window, 5e-5, 5);
    const auto a = dyadic_schedule(z, s.line_operator());
    const auto b = dyadic_schedule(z, s.line_operator());
    EXPECT_LT(a.residual, 1e-10);
    EXPECT_LE(a.log.entries.size(), 10u);
    EXPECT_TRUE(std::isfinite(a.log.D_fit));
    EXPECT_GT(a.log.D_fit, 0);
    for (std::size_t j = 0; j + 1 < a.log.entries.size(); ++j) {
      const auto& e = a.log.entries[j];
      EXPECT_LE(a.log.entries[j + 1].eps, a.log.D_fit * std::ldexp(1.0, 3 * e.j) * e.eps * e.eps * (1 + 1e-12));
      EXPECT_LT(a.log.entries[j + 1].eps, e.eps);
    }
    ASSERT_EQ(a.log.entries.size(), b.log.entries.size());
    for (std::size_t j = 0; j < a.log.entries.size(); ++j) EXPECT_EQ(a.log.entries[j].eps, b.log.entries[j].eps);
    EXPECT_EQ(a.log.D_fit, b.log.D_fit);
    EXPECT_EQ(a.final_state.amp, b.final_state.amp);
    EXPECT_NO_THROW(a.field.validate());
  }
}

TEST(Dyadic, RejectsLargeHandoff) {
  const auto s = r_spectrum(5);
  try {
    dyadic_schedule(perturbed(s.window, 1e-2, 1), s.line_operator());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NoContraction);
  }
}

TEST(Uphill, R5EndToEnd) {
  const auto s = r_spectrum(5);
  const auto res = uphill_protocol(s);
  EXPECT_LE(res.stage1_z0, 1e-3);
  EXPECT_GE(res.stage1_z1, 1.0 / 96);
  EXPECT_LT(res.residual, 1e-10);
  EXPECT_LE(res.log.entries.size(), 9u);
  std::cout << "[ r=5 uphill: wait " << res.wait << ", dyadic steps " << res.log.entries.size() << ", D_fit "
            << res.log.D_fit << " ]\n";

  ASSERT_GE(res.field.segments.size(), 3u);
  EXPECT_TRUE(std::holds_alternative<FeedbackSegment>(res.field.segments[0]));
  EXPECT_DOUBLE_EQ(segment_t0(res.field.segments[0]), 0.0);
  EXPECT_DOUBLE_EQ(segment_t1(res.field.segments[0]), 1.0);
  EXPECT_TRUE(std::holds_alternative<ZeroSegment>(res.field.segments[1]));
  EXPECT_DOUBLE_EQ(segment_t1(res.field.segments[1]), 1.0 + res.wait);
  EXPECT_DOUBLE_EQ(res.duration(), 2.0 + res.wait);
  EXPECT_NO_THROW(res.field.validate());
  ASSERT_EQ(res.phases.size(), 3u);
  EXPECT_EQ(res.phases[0].label, "stage1");
  EXPECT_EQ(res.phases[1].label, "wait");
  EXPECT_EQ(res.phases[2].label, "dyadic");

  const auto sup = field_sup_norms(res.field);
  EXPECT_DOUBLE_EQ(sup.at(1), 256.0);
  EXPECT_DOUBLE_EQ(sup.at(-1), 256.0);
  // Newton controls are truncated to the modes that carry content.
  for (const auto& [k, v] : sup)
    if (std::abs(k) >= 2) {
      EXPECT_LT(v, 1e-2) << k;
      EXPECT_LE(std::abs(k), ControllerConfig{}.kmax_cap);
    }
}

TEST(Uphill, WaitDecaysOffModesAtLeastAtGapRate) {
  const auto s = r_spectrum(5);
  const auto op = s.line_operator();
  const auto res = uphill_protocol(s);
  double M = 1e300;
  for (int k = s.window.k_min; k <= s.window.k_max; ++k)
    if (k != 0 && k != 1) M = std::min(M, op.at(k));
  // Snapshots at the stage-1 end and after the wait.
  ControllerConfig cfg;
  CoefficientField head;
  head.append(res.field.segments[0]);
  head.append(res.field.segments[1]);
  const auto z1 = integrate(StateVector::delta(s.window, 0), head, op, 0, 1, cfg.integrator).final_state;
  const auto z2 = integrate(z1, head, op, 1, 1 + res.wait, cfg.integrator).final_state;
  auto far = [](const StateVector& z) {
    double m = 0;
    for (int k = z.window.k_min; k <= z.window.k_max; ++k)
      if (k != 0 && k != 1) m += std::norm(z.at(k));
    return std::sqrt(m) / std::abs(z.get(1));
  };
  EXPECT_GT(res.wait, 0);
  EXPECT_LE(far(z2), far(z1) * std::exp(-(M - 1) * res.wait) * (1 + 1e-9));
}

TEST(Uphill, ErrorPaths) {
  const auto s = r_spectrum(5);
  ControllerConfig c1;
  c1.stage1_tolerance = 1e-300;
  try {
    uphill_protocol(s, c1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::Stage1Fail);
  }
  ControllerConfig c2;
  c2.wait_cap_factor = 1e-6;
  try {
    uphill_protocol(s, c2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::WaitTimeout);
  }
  EXPECT_THROW(uphill_protocol(downhill_spectrum()), Error);
}

TEST(Downhill, InitialDerivative) {
  const auto s = downhill_spectrum();
  const auto op = s.line_operator();
  const double eta = 0.01, h = 1e-6;
  ConstantSegment push;
  push.t0 = 0;
  push.t1 = 1;
  push.values.emplace_back(1, cplx(eta, 0));
  CoefficientField f;
  f.append(push);
  const auto z = integrate(StateVector::delta(s.window, 0), f, op, 0, h).final_state;
  const cplx slope = z.get(1) / h;
  EXPECT_NEAR(slope.real(), 0.0, 1e-6 * eta);
  EXPECT_NEAR(slope.imag(), eta, 1e-5 * eta);
}

TEST(Downhill, FullTransferAndPushBound) {
  const auto s = downhill_spectrum();
  const auto g = shear_geometry(s.a, s.b);
  const double eta = default_push_amplitude(s.a, g.alpha);
  const auto res = downhill_protocol(s, eta);
  EXPECT_LT(res.residual, 1e-8);
  EXPECT_DOUBLE_EQ(res.push, std::min(0.01 / eta, 0.1));
  double sup = 0;
  for (const auto& seg : res.field.segments)
    if (const auto* c = std::get_if<ConstantSegment>(&seg); c && c->t1 <= res.push)
      for (const auto& [k, v] : c->values) sup = std::max(sup, std::abs(v));
  EXPECT_LE(sup, eta);
  EXPECT_GT(res.push_rho, 0);
  ASSERT_EQ(res.phases.size(), 3u);
  EXPECT_EQ(res.phases[0].label, "push");
  // After the wait: off-mode ratio <= e^{-sigma} / rho.
  const auto op = s.line_operator();
  CoefficientField head;
  head.append(res.field.segments[0]);
  head.append(res.field.segments[1]);
  const auto zw = integrate(StateVector::delta(s.window, 0), head, op, 0, res.push + res.wait).final_state;
  EXPECT_LE(mass_and_ratio(zw).off_mode_ratio, std::exp(-res.wait) / res.push_rho);
}

TEST(Downhill, ErrorPaths) {
  const auto s = downhill_spectrum();
  EXPECT_THROW(downhill_protocol(s, 0.0), Error);
  ControllerConfig cfg;
  cfg.rho_min = 1.0;
  try {
    downhill_protocol(s, 1e-3, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NoPush);
  }
  EXPECT_THROW(downhill_protocol(r_spectrum(5), 1e-3), Error);
}

TEST(Field, SymmetryAndJson) {
  const auto s = r_spectrum(5);
  const auto res = uphill_protocol(s);
  for (int i = 0; i <= 400; ++i) {
    const double t = res.duration() * i / 400.0;
    const auto mv = res.field.evaluate(t);
    ASSERT_EQ(mv.at(0), cplx(0, 0));
    for (int k = 1; k <= 20; ++k) ASSERT_EQ(mv.at(-k), std::conj(mv.at(k)));
    for (const auto& v : mv.v) ASSERT_LE(std::abs(v), 256.0);
  }
  const auto j = to_json_value(res.field);
  const auto back = field_from_json(j);
  EXPECT_EQ(to_json_value(back), j);
  auto bad = j;
  for (auto& seg : bad["segments"])
    if (seg["type"] == "constant") {
      seg["values"]["-1"] = nlohmann::json::array({1.0, 1.0});
      seg["values"]["1"] = nlohmann::json::array({1.0, 1.0});
      break;
    }
  EXPECT_THROW(field_from_json(bad), Error);
  EXPECT_TRUE(field_sup_norms(CoefficientField{}).empty());
}

TEST(Field, TilingRejectsGaps) {
  CoefficientField f;
  f.append(ZeroSegment{0, 1});
  EXPECT_THROW(f.append(ZeroSegment{1.5, 2}), Error);
  EXPECT_THROW(f.append(ZeroSegment{1, 0.5}), Error);
}
