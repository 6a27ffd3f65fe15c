#include "survx/datagen.hpp"

#include <gtest/gtest.h>

#include "test_oracles.hpp"

namespace survx {
namespace {

DgmConfig config(Scenario s) {
  DgmConfig c;
  c.scenario = s;
  return c;
}

TEST(DgmHazard, ControlHazardAtOne) {
  const DgmConfig c;
  EXPECT_NEAR(baseline_disease_hazard(c, 1.0), 0.3270509790346341, 1e-12);
  const double h = 1e-6;
  const double fd = (std::log(baseline_disease_survival(c, 1.0 - h)) -
                     std::log(baseline_disease_survival(c, 1.0 + h))) / (2 * h);
  EXPECT_NEAR(baseline_disease_hazard(c, 1.0), fd, 1e-8);
}

TEST(DgmHazard, EffectScenarios) {
  EXPECT_NEAR(effect_log_hr(Scenario::constant, 0.0), std::log(0.7), 1e-15);
  EXPECT_NEAR(effect_log_hr(Scenario::constant, 30.0), std::log(0.7), 1e-15);
  EXPECT_NEAR(effect_log_hr(Scenario::waning, 0.0), -0.696789, 1e-6);
  EXPECT_NEAR(effect_log_hr(Scenario::waning, 20.0), 0.0, 1e-12);
  // Exponentially modified Gaussian density as an explicit convolution.
  auto emg = [](double x) {
    const double mu = 0.8, sigma = 0.4, lambda = 0.35;
    return oracle::adaptive_simpson(
        [&](double y) {
          const double z = (x - y - mu) / sigma;
          return lambda * std::exp(-lambda * y) * std::exp(-0.5 * z * z) / (sigma * std::sqrt(2 * M_PI));
        },
        0.0, 80.0, 1e-13);
  };
  for (double t : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0}) EXPECT_NEAR(effect_log_hr(Scenario::delayed_waning, t), -2.8 * emg(t), 1e-8) << t;
  EXPECT_NEAR(effect_log_hr(Scenario::delayed_waning, 0.0), -0.021183, 1e-6);
}

TEST(DgmHazard, TabulatedCumulativeMatchesQuadrature) {
  for (auto s : {Scenario::constant, Scenario::waning, Scenario::delayed_waning}) {
    const DgmConfig c = config(s);
    for (int arm : {0, 1}) {
      const DiseaseCumulativeHazard H(c, arm);
      for (double t : {1e-4, 0.05, 0.7, 1.0, 3.3, 6.0, 17.5, 40.0, 110.0}) {
        const double ref = oracle::adaptive_simpson([&](double x) { return disease_hazard(c, x, arm); }, 1e-9, t, 1e-12) +
                           (arm ? std::exp(effect_log_hr(s, 0.0)) : 1.0) * -std::log(baseline_disease_survival(c, 1e-9));
        EXPECT_NEAR(H(t), ref, 2e-7 * std::max(1.0, ref)) << static_cast<int>(s) << " " << arm << " " << t;
        EXPECT_NEAR(disease_cumhaz_quadrature(c, t, arm), ref, 1e-5 * std::max(1.0, ref));
      }
    }
  }
}

TEST(DgmHazard, InversionSolvesCumulativeHazard) {
  const DgmConfig c = config(Scenario::delayed_waning);
  const DiseaseCumulativeHazard H(c, 1);
  for (double age : {35.0, 60.0, 85.0})
    for (double e : {1e-6, 0.01, 0.5, 2.0, 6.0}) {
      const double t = invert_cumulative_hazard(H, c, age, e);
      ASSERT_TRUE(std::isfinite(t));
      EXPECT_NEAR(H(t) + other_cause_cumhaz(c, t, age), e, 1e-9 * std::max(1.0, e));
    }
  EXPECT_TRUE(std::isinf(invert_cumulative_hazard(H, c, -500.0, 1e6)));
}

TEST(DgmHazard, GompertzLifeTableExactAtWholeAges) {
  const DgmConfig c;
  const auto lt = gompertz_lifetable(c);
  for (double a : {40.0, 60.0, 73.0})
    for (double t : {1.0, 5.0, 20.0})
      EXPECT_NEAR(lt->cumulative(a, t), other_cause_cumhaz(c, t, a), 1e-12 * std::max(1.0, lt->cumulative(a, t)));
}

TEST(DgmTruth, MarginalSurvivalMatchesAgeIntegral) {
  for (auto s : {Scenario::constant, Scenario::delayed_waning}) {
    const DgmConfig c = config(s);
    for (int arm : {0, 1})
      for (double t : {1.0, 5.0, 20.0}) {
        const double sd = std::exp(-disease_cumhaz_quadrature(c, t, arm));
        const double so = oracle::adaptive_simpson(
            [&](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI) * other_cause_survival(c, t, 60 + 9 * z); },
            -12, 12, 1e-12);
        EXPECT_NEAR(marginal_survival_truth(c, arm, t), sd * so, 1e-6);
      }
  }
}

TEST(DgmTruth, RmstMatchesAdaptiveIntegration) {
  const DgmConfig c = config(Scenario::waning);
  const double ref = oracle::adaptive_simpson([&](double t) { return marginal_survival_truth(c, 1, t); }, 0.0, 40.0, 1e-9);
  EXPECT_NEAR(marginal_rmst_truth(c, 1, 40.0), ref, 1e-6);
}

TEST(DgmSimulation, UncensoredKaplanMeierMatchesAnalyticSurvival) {
  DgmConfig c;
  c.follow_up = c.censor_lo = c.censor_hi = 500.0;
  Rng rng = make_rng(42);
  const auto sim = simulate_arm(c, 0, 200000, rng);
  EXPECT_EQ(sim.capped, 0);
  for (double t : {1.0, 2.0, 5.0, 10.0, 20.0}) {
    double alive = 0;
    for (const auto& r : sim.records) alive += r.time > t;
    EXPECT_NEAR(alive / sim.records.size(), marginal_survival_truth(c, 0, t), 0.004) << t;
  }
  for (const auto& r : sim.records) ASSERT_EQ(r.event, 1);
}

TEST(DgmSimulation, CensoringWindow) {
  const DgmConfig c;
  const auto trial = simulate_trial(c, 7);
  ASSERT_EQ(trial.records.size(), 400u);
  int events = 0;
  for (const auto& r : trial.records) {
    EXPECT_LE(r.time, c.follow_up);
    if (!r.event) EXPECT_GE(r.time, c.censor_lo);
    events += r.event;
  }
  EXPECT_GT(events, 100);
  EXPECT_LT(events, 350);
}

TEST(DgmSimulation, ReproducibleFromSeed) {
  DgmConfig c = config(Scenario::waning);
  EXPECT_EQ(simulate_trial(c, 11).records, simulate_trial(c, 11).records);
  EXPECT_NE(simulate_trial(c, 11).records, simulate_trial(c, 12).records);
}

TEST(DgmExternal, AnnualRowsFromYearSix) {
  const DgmConfig c;
  Rng rng = make_rng(3);
  const auto rows = simulate_external(c, rng);
  ASSERT_EQ(rows.size(), 19u);
  EXPECT_EQ(rows.front().n_at_risk, 600);
  EXPECT_DOUBLE_EQ(rows.front().start, 6.0);
  EXPECT_DOUBLE_EQ(rows.back().stop, 25.0);
  EXPECT_NEAR(rows.front().backsurv_start, 1.0, 1e-15);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_LE(rows[i].n_survivors, rows[i].n_at_risk);
    EXPECT_LT(rows[i].backsurv_stop, rows[i].backsurv_start);
    if (i > 0) EXPECT_EQ(rows[i].n_at_risk, rows[i - 1].n_survivors);
  }
}

TEST(DgmExternal, ConditionalSurvivalMatchesMarginalRatio) {
  DgmConfig c;
  c.external_n = 40000;
  Rng rng = make_rng(5);
  const auto rows = simulate_external(c, rng);
  for (std::size_t i : {0u, 4u, 14u}) {
    const double p = marginal_survival_truth(c, 0, rows[i].stop) / marginal_survival_truth(c, 0, 6.0);
    const double est = static_cast<double>(rows[i].n_survivors) / c.external_n;
    EXPECT_NEAR(est, p, 4 * std::sqrt(p * (1 - p) / c.external_n)) << i;
  }
}

TEST(DgmExternal, BiasShiftsSurvival) {
  DgmConfig lo, hi;
  lo.bias_v = std::log(0.8);
  hi.bias_v = std::log(1.2);
  lo.external_n = hi.external_n = 5000;
  Rng r1 = make_rng(9), r2 = make_rng(9);
  const auto a = simulate_external(lo, r1);
  const auto b = simulate_external(hi, r2);
  EXPECT_GT(a[9].n_survivors, b[9].n_survivors);
}

}  // namespace
}  // namespace survx
