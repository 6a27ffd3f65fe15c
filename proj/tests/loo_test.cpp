#include "survx/loo.hpp"

#include <gtest/gtest.h>

#include <random>

namespace survx {
namespace {

TEST(Loo, ConstantLogLikelihood) {
  const std::size_t S = 200, n = 5;
  std::vector<double> ll(S * n);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t i = 0; i < n; ++i) ll[s * n + i] = -0.3 * (i + 1);
  const auto r = loo_ic(ll, S, n);
  EXPECT_NEAR(r.looic, -2.0 * (-0.3 * 15), 1e-12);
  EXPECT_NEAR(r.p_loo, 0.0, 1e-12);
  for (double k : r.pareto_k) EXPECT_FALSE(std::isnan(k));
}

TEST(Loo, GeneralizedParetoFitRecoversShape) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u;
  const GeneralizedPareto truth{0.5, 2.0};
  std::vector<double> x(4000);
  for (double& v : x) v = truth.quantile(u(rng));
  std::sort(x.begin(), x.end());
  const auto fit = fit_generalized_pareto(x);
  EXPECT_NEAR(fit.k, 0.5, 0.08);
  EXPECT_NEAR(fit.sigma, 2.0, 0.3);
}

// Normal mean with known unit variance and flat prior: the exact
// leave-one-out predictive is N(mean of the others, 1 + 1/(n-1)).
TEST(Loo, MatchesExactConjugateLoo) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  const std::size_t n = 30, S = 4000;
  std::vector<double> y(n);
  for (double& v : y) v = 1.0 + nd(rng);
  double sum = 0.0;
  for (double v : y) sum += v;
  const double ybar = sum / n;
  const double pi = std::acos(-1.0);
  std::vector<double> ll(S * n);
  for (std::size_t s = 0; s < S; ++s) {
    const double mu = ybar + nd(rng) / std::sqrt(static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      ll[s * n + i] = -0.5 * std::log(2 * pi) - 0.5 * (y[i] - mu) * (y[i] - mu);
  }
  double exact = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double m = (sum - y[i]) / (n - 1.0);
    const double v = 1.0 + 1.0 / (n - 1.0);
    exact += -0.5 * std::log(2 * pi * v) - 0.5 * (y[i] - m) * (y[i] - m) / v;
  }
  const auto r = loo_ic(ll, S, n);
  EXPECT_NEAR(r.elpd, exact, 0.05);
  EXPECT_NEAR(r.p_loo, 1.0, 0.2);
  for (double k : r.pareto_k) EXPECT_LT(k, 0.7);
}

TEST(Loo, ShapeMismatchThrows) {
  std::vector<double> ll(10);
  EXPECT_THROW(loo_ic(ll, 3, 3), InputError);
}

}  // namespace
}  // namespace survx
