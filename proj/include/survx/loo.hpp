#pragma once

// Pareto-smoothed importance-sampling leave-one-out cross-validation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "survx/error.hpp"

namespace survx {

struct GeneralizedPareto {
  double k = 0.0;
  double sigma = 1.0;

  double quantile(double p) const {
    if (std::abs(k) < 1e-12) return -sigma * std::log1p(-p);
    return sigma * std::expm1(-k * std::log1p(-p)) / k;
  }
};

/// Zhang & Stephens (2009) empirical-Bayes fit of a generalized Pareto
/// distribution to exceedances `x` (sorted ascending, positive), with the
/// weakly informative shrinkage of k towards 0.5.
inline GeneralizedPareto fit_generalized_pareto(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) throw NumericalError("generalized Pareto fit needs at least two exceedances");
  const double prior = 3.0;
  const std::size_t m = 30 + static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  const double xq = x[static_cast<std::size_t>(std::floor(n / 4.0 + 0.5)) - 1];
  std::vector<double> theta(m), ll(m);
  for (std::size_t j = 0; j < m; ++j) {
    theta[j] = 1.0 / x[n - 1] +
               (1.0 - std::sqrt(static_cast<double>(m) / (j + 0.5))) / prior / xq;
    double kj = 0.0;
    for (double v : x) kj += std::log1p(-theta[j] * v);
    kj /= static_cast<double>(n);
    ll[j] = static_cast<double>(n) * (std::log(-theta[j] / kj) - kj - 1.0);
  }
  const double lmax = *std::max_element(ll.begin(), ll.end());
  double wsum = 0.0, theta_hat = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double w = std::exp(ll[j] - lmax);
    wsum += w;
    theta_hat += theta[j] * w;
  }
  theta_hat /= wsum;
  double k = 0.0;
  for (double v : x) k += std::log1p(-theta_hat * v);
  k /= static_cast<double>(n);
  GeneralizedPareto out;
  out.sigma = -k / theta_hat;
  out.k = (static_cast<double>(n) * k + 10.0 * 0.5) / (static_cast<double>(n) + 10.0);
  return out;
}

/// Pareto-smoothed log importance weights (unnormalised) and the fitted
/// shape k. k is NaN when the tail is too short to fit.
inline std::vector<double> psis_log_weights(std::span<const double> log_ratios, double* khat) {
  const std::size_t S = log_ratios.size();
  std::vector<double> lw(log_ratios.begin(), log_ratios.end());
  const double lmax = *std::max_element(lw.begin(), lw.end());
  for (double& v : lw) v -= lmax;
  const std::size_t tail = static_cast<std::size_t>(
      std::ceil(std::min(0.2 * S, 3.0 * std::sqrt(static_cast<double>(S)))));
  double k = std::numeric_limits<double>::quiet_NaN();
  if (tail >= 5 && tail < S) {
    std::vector<std::size_t> order(S);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lw[a] < lw[b]; });
    const double cutoff = lw[order[S - tail - 1]];
    const double top = lw[order[S - 1]];
    if (top > cutoff) {
      const double ec = std::exp(cutoff);
      std::vector<double> ex(tail);
      for (std::size_t j = 0; j < tail; ++j) ex[j] = std::exp(lw[order[S - tail + j]]) - ec;
      bool positive = true;
      for (double v : ex) positive = positive && v > 0.0;
      if (positive) {
        const auto gp = fit_generalized_pareto(ex);
        k = gp.k;
        if (std::isfinite(k)) {
          for (std::size_t j = 0; j < tail; ++j) {
            const double p = (j + 0.5) / static_cast<double>(tail);
            lw[order[S - tail + j]] = std::min(std::log(gp.quantile(p) + ec), 0.0);
          }
        }
      } else {
        k = 0.0;
      }
    } else {
      k = 0.0;
    }
  }
  if (khat) *khat = k;
  return lw;
}

struct LooResult {
  double looic = 0.0;                ///< -2 * elpd
  double elpd = 0.0;
  double se_looic = 0.0;
  double p_loo = 0.0;                ///< effective number of parameters
  std::vector<double> pointwise_elpd;
  std::vector<double> pareto_k;
  std::size_t n_high_k = 0;          ///< observations with k > 0.7
  bool warning = false;
};

inline double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// PSIS-LOO from a [draws x observations] log-likelihood matrix stored
/// row-major.
inline LooResult loo_ic(std::span<const double> loglik, std::size_t n_draws, std::size_t n_obs) {
  if (n_draws == 0 || n_obs == 0 || loglik.size() != n_draws * n_obs)
    throw InputError("log-likelihood matrix has the wrong shape");
  LooResult out;
  out.pointwise_elpd.resize(n_obs);
  out.pareto_k.resize(n_obs);
  std::vector<double> ll(n_draws), ratio(n_draws), tmp(n_draws);
  double lpd = 0.0;
  for (std::size_t i = 0; i < n_obs; ++i) {
    for (std::size_t s = 0; s < n_draws; ++s) {
      ll[s] = loglik[s * n_obs + i];
      ratio[s] = -ll[s];
    }
    double k = 0.0;
    const auto lw = psis_log_weights(ratio, &k);
    const double norm = log_sum_exp(lw);
    for (std::size_t s = 0; s < n_draws; ++s) tmp[s] = lw[s] + ll[s];
    const double elpd_i = log_sum_exp(tmp) - norm;
    out.pointwise_elpd[i] = elpd_i;
    out.pareto_k[i] = k;
    if (k > 0.7) ++out.n_high_k;
    out.elpd += elpd_i;
    lpd += log_sum_exp(ll) - std::log(static_cast<double>(n_draws));
  }
  out.looic = -2.0 * out.elpd;
  out.p_loo = lpd - out.elpd;
  double mean = out.elpd / static_cast<double>(n_obs), ss = 0.0;
  for (double v : out.pointwise_elpd) ss += (v - mean) * (v - mean);
  out.se_looic = 2.0 * std::sqrt(static_cast<double>(n_obs) * ss /
                                 std::max<double>(1.0, static_cast<double>(n_obs) - 1.0));
  out.warning = out.n_high_k > 0;
  return out;
}

}  // namespace survx
