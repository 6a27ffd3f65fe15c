#pragma once

// Model-level fitting: builds the posterior target(s) for a model spec and
// dataset and runs Laplace or MCMC. Separate-arm models are two independent
// single-arm fits; external data attaches to the control-arm fit.

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "survx/bayes.hpp"
#include "survx/laplace.hpp"
#include "survx/loo.hpp"
#include "survx/nuts.hpp"
#include "survx/parallel.hpp"

namespace survx {

struct FitSettings {
  Method method = Method::mcmc;
  LaplaceOptions laplace;
  NutsOptions nuts;
  std::uint64_t seed = 1;
};

/// One fitted single-target component.
struct ComponentFit {
  SurvivalModelSpec spec;
  std::vector<int> arms;  ///< arms this component predicts for
  Dataset data;           ///< the data it was fitted to
  PosteriorSample sample;
};

struct ModelFit {
  EffectMode effect_mode = EffectMode::none;
  std::vector<ComponentFit> components;

  const ComponentFit& for_arm(int arm) const {
    for (const auto& c : components)
      for (int a : c.arms)
        if (a == arm) return c;
    throw InputError("no fitted component covers arm " + std::to_string(arm));
  }
  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    for (const auto& c : components) out.insert(out.end(), c.sample.warnings.begin(), c.sample.warnings.end());
    return out;
  }
};

/// Starting point: flat hazard matching the crude event rate, every other
/// parameter at its prior centre.
inline std::vector<double> initial_point(const SurvivalModelSpec& spec, const Dataset& data) {
  const ParameterLayout L(spec);
  std::vector<double> theta(L.size(), 0.0);
  double events = 0.0, exposure = 0.0, background = 0.0;
  for (const auto& r : data.ipd) {
    events += r.event;
    exposure += r.time;
    if (spec.relative_survival && spec.backhaz) background += spec.backhaz->cumulative(r.age, r.time);
  }
  double rate = 0.1;
  if (events > 0 && exposure > 0) rate = std::max(events - background, 0.1 * events) / exposure;
  const auto& knots = spec.basis.knot_vector();
  theta[L.log_eta()] = std::log(rate * (knots.back() - knots.front()));
  const auto& pr = spec.priors;
  theta[L.log_sigma()] = std::log(pr.sigma.shape > 1 ? (pr.sigma.shape - 1) / pr.sigma.rate
                                                      : pr.sigma.shape / pr.sigma.rate);
  if (L.delta)
    for (std::size_t s = 0; s < L.n_cov; ++s)
      theta[L.log_tau(s)] = std::log(pr.tau.shape > 1 ? (pr.tau.shape - 1) / pr.tau.rate
                                                      : pr.tau.shape / pr.tau.rate);
  return theta;
}

inline PosteriorSample fit_target(const PosteriorTarget& target, const std::vector<double>& init,
                                  const FitSettings& settings, std::uint64_t seed) {
  PosteriorSample s = settings.method == Method::laplace
                          ? fit_laplace(target, init, settings.laplace, seed)
                          : fit_mcmc(target, init, settings.nuts, seed);
  s.names = target.layout().names();
  return s;
}

inline ModelFit fit_model(const SurvivalModelSpec& spec, const Dataset& data,
                          const FitSettings& settings) {
  spec.validate();
  data.validate();
  ModelFit fit;
  fit.effect_mode = spec.effect_mode;
  if (spec.effect_mode != EffectMode::separate_arms) {
    ComponentFit c;
    c.spec = spec;
    c.arms = {0, 1};
    c.data = data;
    const PosteriorTarget target(spec, data);
    c.sample = fit_target(target, initial_point(spec, data), settings, settings.seed);
    fit.components.push_back(std::move(c));
    return fit;
  }
  for (const auto& r : data.external)
    if (r.arm != 0)
      throw InputError("separate-arm models take external data for the control arm only");
  SurvivalModelSpec arm_spec = spec;
  arm_spec.effect_mode = EffectMode::none;
  arm_spec.covariate_names.clear();
  for (int arm : {0, 1}) {
    ComponentFit c;
    c.spec = arm_spec;
    c.arms = {arm};
    c.data = data.arm_subset(arm);
    const PosteriorTarget target(arm_spec, c.data);
    c.sample = fit_target(target, initial_point(arm_spec, c.data), settings,
                          stream_seed(settings.seed, static_cast<std::uint64_t>(arm), 0x5e9a));
    fit.components.push_back(std::move(c));
  }
  return fit;
}

/// PSIS-LOO over every individual record and external row of the fit.
inline LooResult loo_ic(const ModelFit& fit, unsigned threads = 1) {
  std::size_t n_draws = fit.components.front().sample.n_draws();
  for (const auto& c : fit.components) n_draws = std::min(n_draws, c.sample.n_draws());
  std::vector<std::vector<double>> blocks;
  std::size_t n_obs = 0;
  for (const auto& c : fit.components) {
    const PosteriorTarget target(c.spec, c.data);
    const std::size_t m = target.n_ipd() + target.n_external();
    std::vector<double> block(n_draws * m);
    parallel_for(n_draws, threads, [&](std::size_t i) {
      const auto ll = target.pointwise_loglik(c.sample.draw(i));
      std::copy(ll.begin(), ll.end(), block.begin() + static_cast<std::ptrdiff_t>(i * m));
    });
    n_obs += m;
    blocks.push_back(std::move(block));
  }
  std::vector<double> all(n_draws * n_obs);
  std::size_t offset = 0;
  for (const auto& block : blocks) {
    const std::size_t m = block.size() / n_draws;
    for (std::size_t i = 0; i < n_draws; ++i)
      std::copy(block.begin() + static_cast<std::ptrdiff_t>(i * m),
                block.begin() + static_cast<std::ptrdiff_t>((i + 1) * m),
                all.begin() + static_cast<std::ptrdiff_t>(i * n_obs + offset));
    offset += m;
  }
  return loo_ic(all, n_draws, n_obs);
}

}  // namespace survx
