#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "survx/diagnostics.hpp"
#include "survx/error.hpp"

namespace survx {

enum class Method { laplace, mcmc };

inline std::string to_string(Method m) { return m == Method::laplace ? "laplace" : "mcmc"; }

inline Method parse_method(const std::string& s) {
  if (s == "laplace") return Method::laplace;
  if (s == "mcmc") return Method::mcmc;
  throw ConfigError("unknown method '" + s + "' (expected laplace or mcmc)");
}

/// Posterior draws on the unconstrained scale, row-major
/// [draw x parameter].
struct PosteriorSample {
  Method method = Method::laplace;
  std::size_t n_params = 0;
  std::vector<double> draws;
  std::vector<int> chain_ids;  ///< one per draw
  std::vector<std::string> names;

  // Laplace
  std::vector<double> mode;
  double log_density_at_mode = 0.0;

  // MCMC
  std::vector<ParameterDiagnostics> diagnostics;  ///< one per parameter
  std::size_t divergences = 0;
  std::vector<double> step_sizes;  ///< adapted step size per chain
  std::vector<std::string> warnings;

  std::size_t n_draws() const { return n_params ? draws.size() / n_params : 0; }
  std::span<const double> draw(std::size_t i) const {
    return {draws.data() + i * n_params, n_params};
  }
  std::vector<double> column(std::size_t j) const {
    std::vector<double> out(n_draws());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = draws[i * n_params + j];
    return out;
  }
  double max_rhat() const {
    double m = 1.0;
    for (const auto& d : diagnostics) m = std::max(m, d.rhat);
    return m;
  }
};

/// Fills per-parameter diagnostics from chain_ids.
inline void compute_diagnostics(PosteriorSample& s) {
  int n_chains = 0;
  for (int c : s.chain_ids) n_chains = std::max(n_chains, c + 1);
  s.diagnostics.assign(s.n_params, {});
  for (std::size_t j = 0; j < s.n_params; ++j) {
    std::vector<std::vector<double>> chains(n_chains);
    for (std::size_t i = 0; i < s.n_draws(); ++i)
      chains[s.chain_ids[i]].push_back(s.draws[i * s.n_params + j]);
    std::size_t len = chains.front().size();
    for (const auto& c : chains) len = std::min(len, c.size());
    for (auto& c : chains) c.resize(len);
    s.diagnostics[j] = diagnose(chains);
  }
}

}  // namespace survx
