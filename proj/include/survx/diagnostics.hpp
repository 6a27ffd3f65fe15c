#pragma once

// Convergence diagnostics for multi-chain samples: rank-normalised split
// R-hat and bulk/tail effective sample sizes (Vehtari et al., 2021).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "survx/stats.hpp"

namespace survx {

struct ParameterDiagnostics {
  double rhat = 1.0;
  double ess_bulk = 0.0;
  double ess_tail = 0.0;
};

namespace detail {

using Chains = std::vector<std::vector<double>>;

inline bool is_constant(const Chains& chains) {
  const double first = chains.front().front();
  for (const auto& c : chains)
    for (double v : c)
      if (v != first) return false;
  return true;
}

inline Chains split_chains(const Chains& chains) {
  Chains out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    out.emplace_back(c.begin(), c.begin() + half);
    out.emplace_back(c.end() - half, c.end());
  }
  return out;
}

/// Normal scores of pooled fractional ranks (ties averaged).
inline Chains rank_normalise(const Chains& chains) {
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  const std::size_t S = pooled.size();
  std::vector<std::size_t> order(S);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<double> rank(S);
  for (std::size_t i = 0; i < S;) {
    std::size_t j = i;
    while (j + 1 < S && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  Chains out = chains;
  std::size_t idx = 0;
  for (auto& c : out)
    for (double& v : c) v = normal_quantile((rank[idx++] - 0.375) / (static_cast<double>(S) + 0.25));
  return out;
}

inline double rhat_basic(const Chains& chains) {
  if (is_constant(chains)) return 1.0;
  const double n = static_cast<double>(chains.front().size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    means.push_back(mean(c));
    vars.push_back(c.size() > 1 ? std::pow(sd(c), 2) : 0.0);
  }
  const double W = mean(vars);
  const double B_over_n = chains.size() > 1 ? std::pow(sd(means), 2) : 0.0;
  if (!(W > 0.0)) return std::numeric_limits<double>::infinity();
  return std::sqrt(((n - 1.0) / n * W + B_over_n) / W);
}

inline double ess_basic(const Chains& chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  const double total = static_cast<double>(m * n);
  if (is_constant(chains)) return total;
  if (n < 4) return std::nan("");
  std::vector<double> chain_mean(m), chain_var(m);
  for (std::size_t c = 0; c < m; ++c) {
    chain_mean[c] = mean(chains[c]);
    double s = 0.0;
    for (double v : chains[c]) s += (v - chain_mean[c]) * (v - chain_mean[c]);
    chain_var[c] = s / static_cast<double>(n - 1);
  }
  // Autocovariance (biased, divided by n) of every chain at `lag`.
  auto mean_acov = [&](std::size_t lag) {
    double acc = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const auto& x = chains[c];
      double s = 0.0;
      for (std::size_t i = 0; i + lag < n; ++i)
        s += (x[i] - chain_mean[c]) * (x[i + lag] - chain_mean[c]);
      acc += s / static_cast<double>(n);
    }
    return acc / static_cast<double>(m);
  };
  const double mean_var = mean(chain_var);
  double var_plus = mean_var * static_cast<double>(n - 1) / static_cast<double>(n);
  if (m > 1) var_plus += std::pow(sd(chain_mean), 2);
  if (!(var_plus > 0.0)) return total;

  std::vector<double> rho(n + 1, 0.0);
  rho[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho[1] = rho_odd;
  std::size_t t = 1;
  while (t < n - 5 && rho_even + rho_odd > 0.0) {
    rho_even = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - mean_acov(t + 2)) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho[t + 1] = rho_even;
      rho[t + 2] = rho_odd;
    }
    t += 2;
  }
  const std::size_t max_t = t;
  if (rho_even > 0.0) rho[max_t + 1] = rho_even;
  // Geyer's initial monotone sequence.
  for (t = 1; t + 2 <= max_t; t += 2) {
    if (rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]) {
      rho[t + 1] = 0.5 * (rho[t - 1] + rho[t]);
      rho[t + 2] = rho[t + 1];
    }
  }
  double tau = -1.0 + rho[max_t + 1];
  for (std::size_t k = 0; k <= max_t; ++k) tau += 2.0 * rho[k];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

}  // namespace detail

/// Diagnostics for one parameter given its draws split by chain (equal
/// lengths).
inline ParameterDiagnostics diagnose(const std::vector<std::vector<double>>& chains) {
  ParameterDiagnostics d;
  if (chains.empty() || chains.front().size() < 4) {
    d.rhat = std::nan("");
    d.ess_bulk = d.ess_tail = std::nan("");
    return d;
  }
  const auto split = detail::split_chains(chains);
  if (detail::is_constant(split)) {
    const double total = static_cast<double>(split.size() * split.front().size());
    d.rhat = 1.0;
    d.ess_bulk = d.ess_tail = total;
    return d;
  }
  const auto z = detail::rank_normalise(split);
  std::vector<double> pooled;
  for (const auto& c : split) pooled.insert(pooled.end(), c.begin(), c.end());
  const double med = quantile(pooled, 0.5);
  auto folded = split;
  for (auto& c : folded)
    for (double& v : c) v = std::abs(v - med);
  d.rhat = std::max(detail::rhat_basic(z), detail::rhat_basic(detail::rank_normalise(folded)));
  d.ess_bulk = detail::ess_basic(z);
  const double q05 = quantile(pooled, 0.05), q95 = quantile(pooled, 0.95);
  auto indicator = [&](double q) {
    auto ind = split;
    for (auto& c : ind)
      for (double& v : c) v = v <= q ? 1.0 : 0.0;
    return detail::ess_basic(ind);
  };
  d.ess_tail = std::min(indicator(q05), indicator(q95));
  return d;
}

}  // namespace survx
