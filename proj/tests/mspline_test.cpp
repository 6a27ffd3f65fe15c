#include "survx/mspline.hpp"

#include <gtest/gtest.h>

#include <random>

#include "test_oracles.hpp"

namespace survx {
namespace {

MSplineBasis uniform_cubic() { return MSplineBasis(3, {1.0, 2.0, 3.0, 4.0}, 0.0, 5.0); }

TEST(MSplineBasis, SizeFollowsKnotCount) {
  EXPECT_EQ(uniform_cubic().size(), 4u + 3u + 1u);
  EXPECT_EQ(MSplineBasis(0, {}, 0.0, 1.0).size(), 1u);
}

TEST(MSplineBasis, RejectsBadKnots) {
  EXPECT_THROW(MSplineBasis(3, {2.0, 1.0}, 0.0, 5.0), ConfigError);
  EXPECT_THROW(MSplineBasis(3, {1.0, 1.0}, 0.0, 5.0), ConfigError);
  EXPECT_THROW(MSplineBasis(3, {5.0}, 0.0, 5.0), ConfigError);
  EXPECT_THROW(MSplineBasis(3, {}, 2.0, 1.0), ConfigError);
}

TEST(MSplineBasis, ZeroBelowLowerBoundary) {
  MSplineBasis basis(3, {2.0, 3.0}, 1.0, 4.0);
  for (double v : basis.eval(0.5)) EXPECT_EQ(v, 0.0);
}

TEST(MSplineBasis, MatchesRamsayRecursionAtMidpoints) {
  const auto basis = uniform_cubic();
  const auto& knots = basis.knot_vector();
  for (double t : {0.5, 1.5, 2.5, 3.5, 4.5, 0.1, 4.9}) {
    const auto vals = basis.eval(t);
    for (std::size_t i = 0; i < basis.size(); ++i)
      EXPECT_NEAR(vals[i], oracle::mspline_recursive(knots, static_cast<int>(i), 4, t), 1e-12)
          << "t=" << t << " i=" << i;
  }
}

TEST(MSplineBasis, EachBasisIntegratesToOne) {
  const MSplineBasis basis(3, {0.3, 0.9, 2.2, 4.0}, 0.0, 6.5);
  for (std::size_t i = 0; i < basis.size(); ++i) {
    const double area = oracle::adaptive_simpson(
        [&](double t) { return basis.eval(t)[i]; }, 0.0, basis.upper(), 1e-12);
    EXPECT_NEAR(area, 1.0, 1e-6) << "basis " << i;
  }
}

TEST(MSplineBasis, IntegralAtZeroAndUpper) {
  const auto basis = uniform_cubic();
  for (double v : basis.eval_integral(0.0)) EXPECT_EQ(v, 0.0);
  for (double v : basis.eval_integral(basis.upper())) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(MSplineBasis, IntegralMatchesQuadrature) {
  const MSplineBasis basis(3, {0.3, 0.9, 2.2, 4.0}, 0.0, 6.5);
  for (double t : {0.05, 0.6, 2.2, 3.7, 6.4}) {
    const auto integral = basis.eval_integral(t);
    for (std::size_t i = 0; i < basis.size(); ++i) {
      const double ref = oracle::adaptive_simpson(
          [&](double x) { return basis.eval(x)[i]; }, 0.0, t, 1e-13);
      EXPECT_NEAR(integral[i], ref, 1e-9);
    }
  }
}

TEST(MSplineBasis, ConstantExtensionBeyondUpper) {
  const auto basis = uniform_cubic();
  EXPECT_EQ(basis.eval(7.0), basis.eval(123.0));
  EXPECT_EQ(basis.eval(basis.upper()), basis.eval(basis.upper() + 1e-9));
  const auto b_upper = basis.eval(basis.upper());
  const auto i1 = basis.eval_integral(basis.upper() + 1.0);
  const auto i2 = basis.eval_integral(basis.upper() + 2.0);
  for (std::size_t i = 0; i < basis.size(); ++i) EXPECT_NEAR(i2[i] - i1[i], b_upper[i], 1e-12);
}

TEST(MSplineBasis, CubicContinuousAtKnots) {
  const MSplineBasis basis(3, {0.3, 0.9, 2.2, 4.0}, 0.0, 6.5);
  for (double k : basis.interior_knots()) {
    const auto lo = basis.eval(k - 1e-8), hi = basis.eval(k + 1e-8);
    for (std::size_t i = 0; i < basis.size(); ++i) EXPECT_NEAR(lo[i], hi[i], 1e-5);
  }
}

// Property: random knot sets, random times.
TEST(MSplineBasis, RandomBasesSatisfyInvariants) {
  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const int degree = static_cast<int>(rng() % 4);
    const int n_int = static_cast<int>(rng() % 7);
    const double upper = 1.0 + 20.0 * unif(rng);
    std::vector<double> interior;
    for (int k = 0; k < n_int; ++k) interior.push_back(upper * (0.02 + 0.96 * unif(rng)));
    std::sort(interior.begin(), interior.end());
    interior.erase(std::unique(interior.begin(), interior.end()), interior.end());
    const MSplineBasis basis(degree, interior, 0.0, upper);

    std::vector<double> prev(basis.size(), 0.0);
    for (int s = 0; s <= 200; ++s) {
      const double t = 1.2 * upper * s / 200.0;
      for (double v : basis.eval(t)) EXPECT_GE(v, 0.0);
      const auto cum = basis.eval_integral(t);
      for (std::size_t i = 0; i < basis.size(); ++i) EXPECT_GE(cum[i], prev[i] - 1e-14);
      prev = cum;
    }
    for (double v : basis.eval_integral(upper)) EXPECT_NEAR(v, 1.0, 1e-10);
  }
}

TEST(MakeKnots, NoExtraKnotsUsesLastEventTime) {
  const std::vector<double> times{1, 2, 3, 4, 5};
  const auto basis = make_knots(times, 3, {});
  EXPECT_EQ(basis.upper(), 5.0);
  EXPECT_EQ(basis.lower(), 0.0);
  EXPECT_TRUE(basis.interior_knots().empty());
}

TEST(MakeKnots, QuantileKnotsAreType7) {
  std::vector<double> times;
  for (int i = 1; i <= 101; ++i) times.push_back(0.05 * i);
  const auto basis = make_knots(times, 10, {});
  ASSERT_EQ(basis.interior_knots().size(), 6u);
  ASSERT_EQ(basis.size(), 10u);
  for (int k = 1; k <= 6; ++k)
    EXPECT_NEAR(basis.interior_knots()[k - 1], 0.05 + 5.0 * k / 7.0, 1e-12);
}

TEST(MakeKnots, ExtraKnotsExtendTheSpan) {
  std::vector<double> times;
  for (int i = 1; i <= 60; ++i) times.push_back(4.9 * i / 60.0);
  const std::vector<double> extra{5.0, 10.0, 25.0};
  const auto basis = make_knots(times, 10, extra);
  EXPECT_EQ(basis.lower(), 0.0);
  EXPECT_EQ(basis.upper(), 25.0);
  const auto& ik = basis.interior_knots();
  ASSERT_EQ(ik.size(), 9u);
  EXPECT_DOUBLE_EQ(ik[6], 4.9);
  EXPECT_EQ(ik[7], 5.0);
  EXPECT_EQ(ik[8], 10.0);

  const std::vector<double> case_study{10.0, 15.0, 25.0};
  EXPECT_EQ(make_knots(times, 10, case_study).upper(), 25.0);
}

TEST(MakeKnots, Errors) {
  const std::vector<double> tied{2.0, 2.0, 2.0, 2.0};
  EXPECT_THROW(make_knots(tied, 10, {}), ConfigError);
  const std::vector<double> times{1, 2, 3, 4, 5};
  const std::vector<double> early{4.0, 10.0};
  EXPECT_THROW(make_knots(times, 3, early), ConfigError);
  EXPECT_THROW(make_knots(std::vector<double>{}, 3, {}), ConfigError);
}

TEST(ConstantHazardCoefficients, FlatOverSpan) {
  std::vector<double> times;
  for (int i = 1; i <= 80; ++i) times.push_back(std::pow(i / 80.0, 2) * 5.0);
  const std::vector<double> extra{10.0, 15.0, 25.0};
  const auto basis = make_knots(times, 10, extra);
  const auto p = constant_hazard_coefficients(basis);
  double sum = 0.0;
  for (double v : p) {
    EXPECT_GE(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-14);
  double lo = 1e300, hi = -1e300;
  for (int g = 0; g < 1000; ++g) {
    const double t = basis.upper() * (g + 0.5) / 1000.0;
    const auto b = basis.eval(t);
    double h = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) h += p[i] * b[i];
    lo = std::min(lo, h);
    hi = std::max(hi, h);
  }
  EXPECT_LT(hi / lo - 1.0, 0.01);
  EXPECT_NEAR(lo, 1.0 / basis.upper(), 1e-12);
}

TEST(ConstantHazardCoefficients, DegreeZeroSingleInterval) {
  const auto p = constant_hazard_coefficients(MSplineBasis(0, {}, 0.0, 3.0));
  ASSERT_EQ(p.size(), 1u);
  EXPECT_DOUBLE_EQ(p[0], 1.0);
}

}  // namespace
}  // namespace survx
