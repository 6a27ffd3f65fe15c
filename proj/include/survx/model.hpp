#pragma once

// Hazard model. The (excess) hazard for covariates x is
//
//   h(t | x) = eta * exp(beta' x) * sum_i p_i(x) b_i(t)
//
// with M-spline bases b_i and coefficients p(x) = softmax(gamma(x)), where
// gamma_0 = 0 and gamma_i(x) = mu_i + delta_i' x + sigma * eps_i. Under
// relative survival the all-cause hazard adds a background rate looked up by
// attained age (age at baseline + t).
//
// Unconstrained parameter layout (ParameterLayout):
//   [log_eta | eps_1..eps_{n-1} | log_sigma | beta_s | z_{i,s} | log_tau_s]
// with delta_{i,s} = tau_s * z_{i,s}. beta is present for PH and non-PH
// models; z and log_tau only for non-PH models.

#include <cmath>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "survx/error.hpp"
#include "survx/lifetable.hpp"
#include "survx/mspline.hpp"

namespace survx {

enum class EffectMode { none, proportional_hazards, non_proportional_hazards, separate_arms };

inline std::string to_string(EffectMode m) {
  switch (m) {
    case EffectMode::none: return "none";
    case EffectMode::proportional_hazards: return "ph";
    case EffectMode::non_proportional_hazards: return "nonph";
    case EffectMode::separate_arms: return "separate";
  }
  return "none";
}

inline EffectMode parse_effect_mode(std::string_view s) {
  if (s == "none") return EffectMode::none;
  if (s == "ph" || s == "proportional_hazards") return EffectMode::proportional_hazards;
  if (s == "nonph" || s == "non_proportional_hazards") return EffectMode::non_proportional_hazards;
  if (s == "separate" || s == "separate_arms") return EffectMode::separate_arms;
  throw ConfigError("unknown effect mode '" + std::string(s) + "'");
}

struct NormalPrior {
  double mean = 0.0;
  double sd = 1.0;
};

struct GammaPrior {
  double shape = 2.0;
  double rate = 1.0;
};

struct PriorSpec {
  NormalPrior log_eta{0.0, 20.0};
  GammaPrior sigma{2.0, 1.0};
  double beta_sd = 2.5;
  GammaPrior tau{2.0, 1.0};
  /// mu_i = log(p*_i / p*_0) for the flat-hazard coefficients p*; size n.
  std::vector<double> walk_locations;
  /// Logistic scale of each random-walk step eps_{i-1} -> eps_i; size n - 1.
  std::vector<double> walk_weights;
};

/// Random-walk weights: spacing of consecutive Greville abscissae (the mean
/// of the knot intervals each step spans), normalised to mean one.
inline std::vector<double> random_walk_weights(const MSplineBasis& basis) {
  const auto g = basis.greville();
  std::vector<double> w;
  for (std::size_t i = 1; i < g.size(); ++i) w.push_back(g[i] - g[i - 1]);
  if (w.empty()) return w;
  double m = 0.0;
  for (double v : w) m += v;
  m /= static_cast<double>(w.size());
  for (double& v : w) v = (m > 0.0 && v > 0.0) ? v / m : 1.0;
  return w;
}

/// Default prior with random-walk locations centred on a flat hazard.
inline PriorSpec default_priors(const MSplineBasis& basis) {
  PriorSpec priors;
  const auto p = constant_hazard_coefficients(basis);
  priors.walk_locations.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) priors.walk_locations[i] = std::log(p[i] / p[0]);
  priors.walk_weights = random_walk_weights(basis);
  return priors;
}

struct SurvivalModelSpec {
  MSplineBasis basis;
  EffectMode effect_mode = EffectMode::none;
  std::vector<std::string> covariate_names;
  bool relative_survival = false;
  PriorSpec priors;
  std::shared_ptr<const LifeTable> backhaz;

  std::size_t n_basis() const { return basis.size(); }
  std::size_t n_covariates() const { return covariate_names.size(); }
  bool has_beta() const {
    return effect_mode == EffectMode::proportional_hazards ||
           effect_mode == EffectMode::non_proportional_hazards;
  }
  bool has_delta() const { return effect_mode == EffectMode::non_proportional_hazards; }

  void validate() const {
    const std::size_t n = n_basis();
    if (priors.walk_locations.size() != n || priors.walk_weights.size() + 1 != n)
      throw ConfigError("prior random-walk locations/weights do not match the basis");
    for (double w : priors.walk_weights)
      if (!(w > 0.0)) throw ConfigError("random-walk weights must be positive");
    if (!(priors.log_eta.sd > 0.0) || !(priors.sigma.shape > 0.0) || !(priors.sigma.rate > 0.0) ||
        !(priors.beta_sd > 0.0) || !(priors.tau.shape > 0.0) || !(priors.tau.rate > 0.0))
      throw ConfigError("prior scales and rates must be positive");
    if (has_beta() && covariate_names.empty())
      throw ConfigError("PH / non-PH models need at least one covariate");
    if (!has_beta() && !covariate_names.empty())
      throw ConfigError("covariates given for a model without covariate effects");
    for (const auto& c : covariate_names)
      if (c != "arm") throw ConfigError("unsupported covariate '" + c + "' (only 'arm')");
    if (relative_survival && !backhaz)
      throw ConfigError("relative survival requires a background mortality table");
  }
};

/// Convenience constructor applying default priors for the basis.
inline SurvivalModelSpec make_spec(MSplineBasis basis, EffectMode mode, bool relative_survival,
                                   std::shared_ptr<const LifeTable> backhaz = nullptr) {
  SurvivalModelSpec spec;
  spec.priors = default_priors(basis);
  spec.basis = std::move(basis);
  spec.effect_mode = mode;
  if (spec.has_beta()) spec.covariate_names = {"arm"};
  spec.relative_survival = relative_survival;
  spec.backhaz = std::move(backhaz);
  return spec;
}

/// Index map of the unconstrained parameter vector.
struct ParameterLayout {
  std::size_t n_basis = 0;
  std::size_t n_cov = 0;
  bool beta = false;
  bool delta = false;

  explicit ParameterLayout(const SurvivalModelSpec& spec)
      : n_basis(spec.n_basis()), n_cov(spec.n_covariates()), beta(spec.has_beta()),
        delta(spec.has_delta()) {}

  std::size_t log_eta() const { return 0; }
  /// eps_i for i in [1, n_basis).
  std::size_t eps(std::size_t i) const { return i; }
  std::size_t log_sigma() const { return n_basis; }
  std::size_t beta_at(std::size_t s) const { return n_basis + 1 + s; }
  std::size_t z_at(std::size_t i, std::size_t s) const {
    return n_basis + 1 + (beta ? n_cov : 0) + (i - 1) * n_cov + s;
  }
  std::size_t log_tau(std::size_t s) const {
    return n_basis + 1 + (beta ? n_cov : 0) + (n_basis - 1) * n_cov + s;
  }
  std::size_t size() const {
    return n_basis + 1 + (beta ? n_cov : 0) + (delta ? n_basis * n_cov : 0);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out(size());
    out[log_eta()] = "log_eta";
    for (std::size_t i = 1; i < n_basis; ++i) out[eps(i)] = "eps[" + std::to_string(i) + "]";
    out[log_sigma()] = "log_sigma";
    if (beta)
      for (std::size_t s = 0; s < n_cov; ++s) out[beta_at(s)] = "beta[" + std::to_string(s) + "]";
    if (delta) {
      for (std::size_t i = 1; i < n_basis; ++i)
        for (std::size_t s = 0; s < n_cov; ++s)
          out[z_at(i, s)] = "z[" + std::to_string(i) + "," + std::to_string(s) + "]";
      for (std::size_t s = 0; s < n_cov; ++s)
        out[log_tau(s)] = "log_tau[" + std::to_string(s) + "]";
    }
    return out;
  }
};

/// Natural-scale parameters.
struct ParameterVector {
  double eta = 1.0;
  double sigma = 1.0;
  std::vector<double> gamma;  ///< coefficient logits at x = 0; gamma[0] = 0
  std::vector<double> beta;   ///< log hazard ratios
  std::vector<double> delta;  ///< [basis x covariate], row 0 zero
  std::vector<double> tau;    ///< departure scales

  double delta_at(std::size_t i, std::size_t s) const { return delta[i * tau.size() + s]; }
};

inline void check_dimension(const SurvivalModelSpec& spec, std::size_t size) {
  if (size != ParameterLayout(spec).size()) {
    std::ostringstream msg;
    msg << "parameter vector has " << size << " entries, model expects "
        << ParameterLayout(spec).size();
    throw InputError(msg.str());
  }
}

inline ParameterVector to_natural(const SurvivalModelSpec& spec, std::span<const double> theta) {
  check_dimension(spec, theta.size());
  const ParameterLayout L(spec);
  ParameterVector p;
  p.eta = std::exp(theta[L.log_eta()]);
  p.sigma = std::exp(theta[L.log_sigma()]);
  const auto& mu = spec.priors.walk_locations;
  p.gamma.assign(L.n_basis, 0.0);
  for (std::size_t i = 1; i < L.n_basis; ++i) p.gamma[i] = mu[i] + p.sigma * theta[L.eps(i)];
  const std::size_t S = L.n_cov;
  p.beta.assign(S, 0.0);
  if (L.beta)
    for (std::size_t s = 0; s < S; ++s) p.beta[s] = theta[L.beta_at(s)];
  p.tau.assign(S, 1.0);
  p.delta.assign(L.n_basis * S, 0.0);
  if (L.delta) {
    for (std::size_t s = 0; s < S; ++s) p.tau[s] = std::exp(theta[L.log_tau(s)]);
    for (std::size_t i = 1; i < L.n_basis; ++i)
      for (std::size_t s = 0; s < S; ++s) p.delta[i * S + s] = p.tau[s] * theta[L.z_at(i, s)];
  }
  return p;
}

inline std::vector<double> to_unconstrained(const SurvivalModelSpec& spec,
                                            const ParameterVector& p) {
  const ParameterLayout L(spec);
  if (p.gamma.size() != L.n_basis || p.beta.size() != L.n_cov || p.tau.size() != L.n_cov ||
      p.delta.size() != L.n_basis * L.n_cov)
    throw InputError("natural parameters do not match the model dimensions");
  if (!(p.eta > 0.0) || !(p.sigma > 0.0)) throw InputError("eta and sigma must be positive");
  std::vector<double> theta(L.size(), 0.0);
  theta[L.log_eta()] = std::log(p.eta);
  theta[L.log_sigma()] = std::log(p.sigma);
  const auto& mu = spec.priors.walk_locations;
  for (std::size_t i = 1; i < L.n_basis; ++i) theta[L.eps(i)] = (p.gamma[i] - mu[i]) / p.sigma;
  const std::size_t S = L.n_cov;
  if (L.beta)
    for (std::size_t s = 0; s < S; ++s) theta[L.beta_at(s)] = p.beta[s];
  if (L.delta) {
    for (std::size_t s = 0; s < S; ++s) {
      if (!(p.tau[s] > 0.0)) throw InputError("tau must be positive");
      theta[L.log_tau(s)] = std::log(p.tau[s]);
    }
    for (std::size_t i = 1; i < L.n_basis; ++i)
      for (std::size_t s = 0; s < S; ++s) theta[L.z_at(i, s)] = p.delta[i * S + s] / p.tau[s];
  }
  return theta;
}

inline void check_covariates(const SurvivalModelSpec& spec, std::span<const double> x) {
  if (x.size() != spec.n_covariates()) {
    std::ostringstream msg;
    msg << "covariate vector has " << x.size() << " entries, model expects "
        << spec.n_covariates();
    throw InputError(msg.str());
  }
}

/// In-place softmax.
inline void softmax(std::span<double> v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    s += x;
  }
  for (double& x : v) x /= s;
}

/// Spline coefficients p(x).
inline std::vector<double> coefficients(const SurvivalModelSpec& spec, const ParameterVector& p,
                                        std::span<const double> x) {
  check_covariates(spec, x);
  std::vector<double> g = p.gamma;
  const std::size_t S = x.size();
  if (spec.has_delta())
    for (std::size_t i = 1; i < g.size(); ++i)
      for (std::size_t s = 0; s < S; ++s) g[i] += p.delta[i * S + s] * x[s];
  softmax(g);
  return g;
}

/// eta(x) = eta * exp(beta' x).
inline double scale(const SurvivalModelSpec& spec, const ParameterVector& p,
                    std::span<const double> x) {
  check_covariates(spec, x);
  double lp = 0.0;
  if (spec.has_beta())
    for (std::size_t s = 0; s < x.size(); ++s) lp += p.beta[s] * x[s];
  return p.eta * std::exp(lp);
}

/// Spline hazard (the excess hazard under relative survival).
inline double excess_hazard(const SurvivalModelSpec& spec, const ParameterVector& p,
                            std::span<const double> x, double t) {
  const auto coef = coefficients(spec, p, x);
  const auto b = spec.basis.eval(t);
  double a = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) a += coef[i] * b[i];
  return scale(spec, p, x) * a;
}

inline double excess_cumulative_hazard(const SurvivalModelSpec& spec, const ParameterVector& p,
                                       std::span<const double> x, double t) {
  const auto coef = coefficients(spec, p, x);
  const auto I = spec.basis.eval_integral(t);
  double c = 0.0;
  for (std::size_t i = 0; i < I.size(); ++i) c += coef[i] * I[i];
  return scale(spec, p, x) * c;
}

/// All-cause hazard at time t for someone aged `age` at baseline.
inline double hazard(const SurvivalModelSpec& spec, const ParameterVector& p,
                     std::span<const double> x, double t, double age = 0.0) {
  double h = excess_hazard(spec, p, x, t);
  if (spec.relative_survival) h += spec.backhaz->rate(age + t);
  return h;
}

inline double cumulative_hazard(const SurvivalModelSpec& spec, const ParameterVector& p,
                                std::span<const double> x, double t, double age = 0.0) {
  double H = excess_cumulative_hazard(spec, p, x, t);
  if (spec.relative_survival) H += spec.backhaz->cumulative(age, t);
  return H;
}

inline double survival(const SurvivalModelSpec& spec, const ParameterVector& p,
                       std::span<const double> x, double t, double age = 0.0) {
  return std::exp(-cumulative_hazard(spec, p, x, t, age));
}

/// Covariate vector of a record in `arm` for this model.
inline std::vector<double> covariates_for_arm(const SurvivalModelSpec& spec, int arm) {
  std::vector<double> x;
  for (const auto& name : spec.covariate_names)
    if (name == "arm") x.push_back(static_cast<double>(arm));
  return x;
}

}  // namespace survx
