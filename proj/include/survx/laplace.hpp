#pragma once

// Posterior mode by L-BFGS plus a Gaussian approximation with covariance
// equal to the inverse negative Hessian at the mode.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <span>
#include <sstream>
#include <vector>

#include "survx/error.hpp"
#include "survx/optim.hpp"
#include "survx/rng.hpp"
#include "survx/sample.hpp"

namespace survx {

struct LaplaceOptions {
  int draws = 4000;
  int restarts = 20;
  double restart_jitter = 1.0;
  OptimOptions optim;
};

struct PosteriorMode {
  std::vector<double> theta;
  double log_density = 0.0;
  Eigen::MatrixXd neg_hessian;
};

/// Negative Hessian of the log density by central differences of the
/// exact gradient, symmetrised.
template <class Target>
Eigen::MatrixXd negative_hessian(const Target& target, std::span<const double> theta) {
  const std::size_t n = theta.size();
  Eigen::MatrixXd H(n, n);
  std::vector<double> x(theta.begin(), theta.end()), gp(n), gm(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double h = 1e-5 * std::max(1.0, std::abs(theta[j]));
    x[j] = theta[j] + h;
    target.log_density(x, gp);
    x[j] = theta[j] - h;
    target.log_density(x, gm);
    x[j] = theta[j];
    for (std::size_t i = 0; i < n; ++i) H(i, j) = -(gp[i] - gm[i]) / (2 * h);
  }
  return 0.5 * (H + H.transpose());
}

/// Maximises the log density from `init`, restarting from jittered points
/// when the optimiser fails or the Hessian is not positive definite.
template <class Target>
PosteriorMode find_mode(const Target& target, std::vector<double> init,
                        const LaplaceOptions& opt, std::uint64_t seed) {
  auto neg = [&](std::span<const double> x, std::span<double> g) {
    const double v = target.log_density(x, g);
    for (double& gi : g) gi = -gi;
    return std::isfinite(v) ? -v : std::numeric_limits<double>::infinity();
  };
  Rng rng = make_rng(seed, 0, 0x1a91ace);
  NormalSampler normal;
  std::string last_problem = "no attempt made";
  std::vector<double> start = init;
  for (int attempt = 0; attempt <= opt.restarts; ++attempt) {
    if (attempt > 0) {
      start = init;
      for (double& v : start) v += opt.restart_jitter * normal(rng);
    }
    OptimResult r = lbfgs_minimize(neg, start, opt.optim);
    if (!r.converged) {
      last_problem = "optimiser did not converge (" + r.message + ")";
      continue;
    }
    PosteriorMode m;
    m.neg_hessian = negative_hessian(target, r.x);
    Eigen::LLT<Eigen::MatrixXd> llt(m.neg_hessian);
    if (llt.info() != Eigen::Success || !m.neg_hessian.allFinite()) {
      last_problem = "Hessian at the mode is not positive definite";
      init = r.x;
      continue;
    }
    m.theta = std::move(r.x);
    m.log_density = -r.value;
    return m;
  }
  std::ostringstream msg;
  msg << "posterior mode search failed after " << opt.restarts << " restarts: " << last_problem;
  throw FitError(msg.str());
}

template <class Target>
PosteriorSample fit_laplace(const Target& target, std::vector<double> init,
                            const LaplaceOptions& opt, std::uint64_t seed) {
  PosteriorMode mode = find_mode(target, std::move(init), opt, seed);
  const std::size_t n = mode.theta.size();
  Eigen::LLT<Eigen::MatrixXd> llt(mode.neg_hessian);
  const Eigen::MatrixXd U = llt.matrixU();
  PosteriorSample s;
  s.method = Method::laplace;
  s.n_params = n;
  s.mode = mode.theta;
  s.log_density_at_mode = mode.log_density;
  s.draws.resize(static_cast<std::size_t>(opt.draws) * n);
  s.chain_ids.assign(static_cast<std::size_t>(opt.draws), 0);
  Rng rng = make_rng(seed, 1, 0x1a91ace);
  NormalSampler normal;
  Eigen::VectorXd z(n);
  const Eigen::Map<const Eigen::VectorXd> mu(mode.theta.data(), n);
  for (int d = 0; d < opt.draws; ++d) {
    for (std::size_t i = 0; i < n; ++i) z[i] = normal(rng);
    // Cov = (U'U)^{-1}, so U^{-1} z has the required covariance.
    const Eigen::VectorXd x = mu + U.triangularView<Eigen::Upper>().solve(z);
    std::copy(x.data(), x.data() + n, s.draws.begin() + static_cast<std::ptrdiff_t>(d * n));
  }
  return s;
}

}  // namespace survx
