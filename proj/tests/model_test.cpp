#include "survx/model.hpp"

#include <gtest/gtest.h>

#include <random>

namespace survx {
namespace {

MSplineBasis test_basis() { return MSplineBasis(3, {1.0, 2.5, 4.0}, 0.0, 6.0); }

std::vector<double> random_theta(const SurvivalModelSpec& spec, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 0.7);
  std::vector<double> theta(ParameterLayout(spec).size());
  for (double& v : theta) v = nd(rng);
  return theta;
}

// Natural parameters whose coefficients are the flat-hazard ones and whose
// hazard equals `rate` everywhere in the basis span.
ParameterVector constant_hazard_params(const SurvivalModelSpec& spec, double rate) {
  ParameterVector p;
  const auto c = constant_hazard_coefficients(spec.basis);
  // The flat-hazard coefficient vector gives a hazard of 1 / (upper - lower).
  const auto& knots = spec.basis.knot_vector();
  p.eta = rate * (knots.back() - knots.front());
  p.sigma = 1.0;
  for (double v : c) p.gamma.push_back(std::log(v / c[0]));
  const std::size_t S = spec.n_covariates();
  p.beta.assign(S, 0.0);
  p.tau.assign(S, 1.0);
  p.delta.assign(spec.n_basis() * S, 0.0);
  return p;
}

TEST(Model, EqualLogitsGiveUniformCoefficients) {
  auto spec = make_spec(test_basis(), EffectMode::none, false);
  ParameterVector p = constant_hazard_params(spec, 1.0);
  std::fill(p.gamma.begin(), p.gamma.end(), 0.0);
  for (double v : coefficients(spec, p, {}))
    EXPECT_NEAR(v, 1.0 / static_cast<double>(spec.n_basis()), 1e-15);
}

TEST(Model, ZeroDeltaGivesCovariateFreeCoefficients) {
  auto spec = make_spec(test_basis(), EffectMode::non_proportional_hazards, false);
  std::mt19937_64 rng(3);
  auto theta = random_theta(spec, rng);
  const ParameterLayout L(spec);
  for (std::size_t i = 1; i < L.n_basis; ++i) theta[L.z_at(i, 0)] = 0.0;
  const auto p = to_natural(spec, theta);
  const std::vector<double> x0{0.0}, x1{1.0};
  const auto p0 = coefficients(spec, p, x0), p1 = coefficients(spec, p, x1);
  for (std::size_t i = 0; i < p0.size(); ++i) EXPECT_DOUBLE_EQ(p0[i], p1[i]);
}

TEST(Model, IncreasingDeltaIncreasesCoefficient) {
  auto spec = make_spec(test_basis(), EffectMode::non_proportional_hazards, false);
  std::mt19937_64 rng(5);
  const auto p = to_natural(spec, random_theta(spec, rng));
  const std::vector<double> x{1.0};
  const auto base = coefficients(spec, p, x);
  for (std::size_t i = 1; i < spec.n_basis(); ++i) {
    ParameterVector q = p;
    q.delta[i] += 1e-4;
    EXPECT_GT(coefficients(spec, q, x)[i], base[i]);
  }
}

TEST(Model, HazardIndependentOfCovariateWithoutEffects) {
  auto spec = make_spec(test_basis(), EffectMode::proportional_hazards, false);
  std::mt19937_64 rng(7);
  auto theta = random_theta(spec, rng);
  theta[ParameterLayout(spec).beta_at(0)] = 0.0;
  const auto p = to_natural(spec, theta);
  const std::vector<double> x0{0.0}, x1{1.0};
  for (double t : {0.1, 1.3, 3.0, 5.9})
    EXPECT_DOUBLE_EQ(hazard(spec, p, x0, t), hazard(spec, p, x1, t));
}

TEST(Model, DoublingScaleDoublesHazard) {
  auto spec = make_spec(test_basis(), EffectMode::proportional_hazards, false);
  std::mt19937_64 rng(9);
  const auto p = to_natural(spec, random_theta(spec, rng));
  ParameterVector q = p;
  q.beta[0] += std::log(2.0);
  const std::vector<double> x{1.0};
  for (double t : {0.2, 1.0, 2.7, 4.4, 6.0, 8.0})
    EXPECT_NEAR(hazard(spec, q, x, t), 2.0 * hazard(spec, p, x, t), 1e-12 * hazard(spec, p, x, t));
}

TEST(Model, ConstantHazardConfiguration) {
  auto spec = make_spec(test_basis(), EffectMode::none, false);
  const auto p = constant_hazard_params(spec, 0.2);
  for (int k = 0; k <= 120; ++k) {
    const double t = 0.05 * k;
    EXPECT_NEAR(hazard(spec, p, {}, t), 0.2, 1e-10) << "t=" << t;
  }
  EXPECT_EQ(cumulative_hazard(spec, p, {}, 0.0), 0.0);
  EXPECT_NEAR(cumulative_hazard(spec, p, {}, 5.0), 1.0, 1e-10);
  EXPECT_NEAR(survival(spec, p, {}, 5.0), std::exp(-1.0), 1e-10);
}

TEST(Model, CumulativeHazardDerivativeIsHazard) {
  for (auto mode : {EffectMode::none, EffectMode::proportional_hazards,
                    EffectMode::non_proportional_hazards}) {
    auto spec = make_spec(test_basis(), mode, false);
    std::mt19937_64 rng(11);
    const auto p = to_natural(spec, random_theta(spec, rng));
    const auto x = covariates_for_arm(spec, 1);
    for (double t : {0.3, 0.9, 1.7, 3.3, 5.2, 7.5}) {
      const double eps = 1e-5;
      const double fd = (cumulative_hazard(spec, p, x, t + eps) -
                         cumulative_hazard(spec, p, x, t - eps)) / (2 * eps);
      const double h = hazard(spec, p, x, t);
      EXPECT_NEAR(fd, h, 1e-4 * h) << to_string(mode) << " t=" << t;
    }
  }
}

TEST(Model, SurvivalIsMonotone) {
  auto backhaz = std::make_shared<LifeTable>(std::vector<double>{0, 60, 70, 80},
                                             std::vector<double>{0.001, 0.01, 0.03, 0.1});
  auto spec = make_spec(test_basis(), EffectMode::non_proportional_hazards, true, backhaz);
  std::mt19937_64 rng(13);
  const auto p = to_natural(spec, random_theta(spec, rng));
  const std::vector<double> x{1.0};
  EXPECT_EQ(survival(spec, p, x, 0.0, 65.0), 1.0);
  double prev = 1.0;
  for (int k = 1; k <= 200; ++k) {
    const double s = survival(spec, p, x, 0.1 * k, 65.0);
    EXPECT_LE(s, prev);
    EXPECT_GE(s, 0.0);
    prev = s;
  }
}

TEST(Model, AllCauseHazardExceedsBackground) {
  auto backhaz = std::make_shared<LifeTable>(std::vector<double>{0, 60, 70},
                                             std::vector<double>{0.001, 0.02, 0.05});
  auto spec = make_spec(test_basis(), EffectMode::proportional_hazards, true, backhaz);
  std::mt19937_64 rng(15);
  const auto p = to_natural(spec, random_theta(spec, rng));
  const std::vector<double> x{0.0};
  for (double t : {0.0, 2.0, 6.0, 12.0}) {
    EXPECT_GE(hazard(spec, p, x, t, 58.0), backhaz->rate(58.0 + t));
    EXPECT_NEAR(hazard(spec, p, x, t, 58.0) - excess_hazard(spec, p, x, t),
                backhaz->rate(58.0 + t), 1e-15);
  }
}

TEST(Model, ProportionalHazardsRatioIsConstant) {
  auto spec = make_spec(test_basis(), EffectMode::proportional_hazards, false);
  std::mt19937_64 rng(17);
  const auto p = to_natural(spec, random_theta(spec, rng));
  const std::vector<double> x0{0.0}, x1{1.0};
  const double hr = std::exp(p.beta[0]);
  for (double t : {0.01, 0.5, 1.5, 2.5, 3.9, 5.5, 10.0}) {
    const double ratio = excess_hazard(spec, p, x1, t) / excess_hazard(spec, p, x0, t);
    EXPECT_NEAR(ratio, hr, 1e-10);
  }
}

TEST(Model, ParameterRoundTrip) {
  std::mt19937_64 rng(19);
  for (auto mode : {EffectMode::none, EffectMode::proportional_hazards,
                    EffectMode::non_proportional_hazards}) {
    auto spec = make_spec(test_basis(), mode, false);
    for (int rep = 0; rep < 20; ++rep) {
      const auto theta = random_theta(spec, rng);
      const auto back = to_unconstrained(spec, to_natural(spec, theta));
      ASSERT_EQ(back.size(), theta.size());
      for (std::size_t i = 0; i < theta.size(); ++i) EXPECT_NEAR(back[i], theta[i], 1e-12);
      const auto p = to_natural(spec, theta);
      const auto p2 = to_natural(spec, back);
      EXPECT_NEAR(p2.eta, p.eta, 1e-12 * p.eta);
      for (std::size_t i = 0; i < p.gamma.size(); ++i) EXPECT_NEAR(p2.gamma[i], p.gamma[i], 1e-12);
    }
  }
}

TEST(Model, LayoutSizes) {
  const auto basis = test_basis();
  const std::size_t n = basis.size();
  EXPECT_EQ(ParameterLayout(make_spec(basis, EffectMode::none, false)).size(), n + 1);
  EXPECT_EQ(ParameterLayout(make_spec(basis, EffectMode::proportional_hazards, false)).size(), n + 2);
  EXPECT_EQ(ParameterLayout(make_spec(basis, EffectMode::non_proportional_hazards, false)).size(),
            2 * n + 2);
  const auto names = ParameterLayout(make_spec(basis, EffectMode::non_proportional_hazards, false)).names();
  for (const auto& s : names) EXPECT_FALSE(s.empty());
}

TEST(Model, DimensionMismatchThrows) {
  auto spec = make_spec(test_basis(), EffectMode::proportional_hazards, false);
  std::vector<double> theta(3, 0.0);
  EXPECT_THROW(to_natural(spec, theta), InputError);
  std::mt19937_64 rng(21);
  const auto p = to_natural(spec, random_theta(spec, rng));
  const std::vector<double> bad{1.0, 0.0};
  EXPECT_THROW(coefficients(spec, p, bad), InputError);
  EXPECT_THROW(hazard(spec, p, {}, 1.0), InputError);
}

TEST(Model, SpecValidation) {
  auto spec = make_spec(test_basis(), EffectMode::none, true);
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = make_spec(test_basis(), EffectMode::proportional_hazards, false);
  spec.covariate_names = {"age"};
  EXPECT_THROW(spec.validate(), ConfigError);
  EXPECT_THROW(parse_effect_mode("cure"), ConfigError);
  EXPECT_EQ(parse_effect_mode("nonph"), EffectMode::non_proportional_hazards);
}

TEST(Model, DefaultPriorCentresOnFlatHazard) {
  const auto basis = test_basis();
  const auto pr = default_priors(basis);
  EXPECT_EQ(pr.walk_locations[0], 0.0);
  double m = 0.0;
  for (double w : pr.walk_weights) {
    EXPECT_GT(w, 0.0);
    m += w;
  }
  EXPECT_NEAR(m / static_cast<double>(pr.walk_weights.size()), 1.0, 1e-12);
}

}  // namespace
}  // namespace survx
