#pragma once

// Posterior predictions from a fitted model: survival, hazard and RMST for
// an individual or standardised over a population, with optional
// treatment-effect waning of the active arm.

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "survx/fit.hpp"
#include "survx/parallel.hpp"
#include "survx/quadrature.hpp"
#include "survx/stats.hpp"

namespace survx {

/// Linear waning of the log hazard ratio from its value at t_min to zero at
/// t_max.
struct WaningSpec {
  double t_min = 5.0;
  double t_max = 10.0;

  void validate() const {
    if (!(t_min >= 0.0) || !(t_max > t_min) || !std::isfinite(t_max))
      throw ConfigError("waning needs 0 <= t_min < t_max");
  }
  double weight(double t) const { return (t_max - t) / (t_max - t_min); }
};

/// Covariate rows to standardise over. Only age varies; arm is set by the
/// prediction.
struct Population {
  std::vector<double> ages;

  static Population single(double age) { return Population{{age}}; }
};

struct PredictOptions {
  double horizon = 40.0;
  int nodes_per_year = 64;
  unsigned threads = 1;
};

namespace predict_detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Basis values and integrals at fixed times, plus a sub-quadrature of the
/// waning window for the active arm.
class CurveGrid {
 public:
  CurveGrid(const MSplineBasis& basis, std::vector<double> times,
            const std::optional<WaningSpec>& waning)
      : n_(basis.size()), times_(std::move(times)), waning_(waning) {
    for (std::size_t k = 0; k < times_.size(); ++k) {
      if (!(times_[k] >= 0.0)) throw InputError("prediction times must be non-negative");
      if (k > 0 && times_[k] < times_[k - 1]) throw InputError("prediction times must be ascending");
    }
    b_.resize(times_.size() * n_);
    I_.resize(times_.size() * n_);
    for (std::size_t k = 0; k < times_.size(); ++k) {
      basis.eval(times_[k], std::span<double>(b_.data() + k * n_, n_));
      basis.eval_integral(times_[k], std::span<double>(I_.data() + k * n_, n_));
    }
    if (waning_) build_waning(basis);
  }

  std::size_t size() const { return times_.size(); }
  const std::vector<double>& times() const { return times_; }

  /// Excess hazard and cumulative hazard for one arm of one posterior draw.
  void excess(const SurvivalModelSpec& spec, std::span<const double> theta, int arm,
              std::vector<double>& h, std::vector<double>& H) const {
    const ParameterVector p = to_natural(spec, theta);
    const auto x1 = covariates_for_arm(spec, arm);
    const auto c1 = coefficients(spec, p, x1);
    const double s1 = scale(spec, p, x1);
    h.resize(size());
    H.resize(size());
    if (!waning_ || arm == 0) {
      for (std::size_t k = 0; k < size(); ++k) {
        h[k] = s1 * dot(c1, row(b_, k));
        H[k] = s1 * dot(c1, row(I_, k));
      }
      return;
    }
    const auto x0 = covariates_for_arm(spec, 0);
    const auto c0 = coefficients(spec, p, x0);
    const double s0 = scale(spec, p, x0);
    const double log_hr = std::log(s1 * dot(c1, b_tmin_)) - std::log(s0 * dot(c0, b_tmin_));
    const double H1_tmin = s1 * dot(c1, I_tmin_);
    const double H0_tmax = s0 * dot(c0, I_tmax_);
    // Cumulative integral of the waned hazard at each window point.
    std::vector<double> cum(points_.size(), 0.0);
    for (std::size_t j = 0; j + 1 < points_.size(); ++j) {
      double acc = 0.0;
      for (const auto& node : segments_[j])
        acc += node.weight * s0 * dot(c0, node.basis) * std::exp(waning_->weight(node.t) * log_hr);
      cum[j + 1] = cum[j] + acc;
    }
    for (std::size_t k = 0; k < size(); ++k) {
      const double t = times_[k];
      if (t <= waning_->t_min) {
        h[k] = s1 * dot(c1, row(b_, k));
        H[k] = s1 * dot(c1, row(I_, k));
      } else if (t < waning_->t_max) {
        h[k] = s0 * dot(c0, row(b_, k)) * std::exp(waning_->weight(t) * log_hr);
        H[k] = H1_tmin + cum[point_index_[k]];
      } else {
        h[k] = s0 * dot(c0, row(b_, k));
        H[k] = H1_tmin + cum.back() + s0 * dot(c0, row(I_, k)) - H0_tmax;
      }
    }
  }

 private:
  struct Node {
    double t, weight;
    std::vector<double> basis;
  };

  std::span<const double> row(const std::vector<double>& m, std::size_t k) const {
    return {m.data() + k * n_, n_};
  }

  void build_waning(const MSplineBasis& basis) {
    const WaningSpec& w = *waning_;
    w.validate();
    b_tmin_ = basis.eval(w.t_min);
    I_tmin_ = basis.eval_integral(w.t_min);
    I_tmax_ = basis.eval_integral(w.t_max);
    points_ = {w.t_min};
    point_index_.assign(times_.size(), 0);
    for (std::size_t k = 0; k < times_.size(); ++k) {
      const double t = times_[k];
      if (t > w.t_min && t < w.t_max) {
        if (t > points_.back()) points_.push_back(t);
        point_index_[k] = points_.size() - 1;
      }
    }
    points_.push_back(w.t_max);
    // Integration pieces split at spline breakpoints and at most 0.25 wide.
    const GaussLegendre gl(8);
    const auto& bp = basis.breakpoints();
    segments_.resize(points_.size() - 1);
    for (std::size_t j = 0; j + 1 < points_.size(); ++j) {
      std::vector<double> cuts = {points_[j]};
      for (double k : bp)
        if (k > points_[j] && k < points_[j + 1]) cuts.push_back(k);
      cuts.push_back(points_[j + 1]);
      for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
        const int pieces = std::max(1, static_cast<int>(std::ceil((cuts[c + 1] - cuts[c]) / 0.25)));
        const double width = (cuts[c + 1] - cuts[c]) / pieces;
        for (int q = 0; q < pieces; ++q) {
          const double a = cuts[c] + q * width, half = 0.5 * width, mid = a + half;
          for (int i = 0; i < gl.size(); ++i) {
            Node node;
            node.t = mid + half * gl.nodes()[i];
            node.weight = half * gl.weights()[i];
            node.basis = basis.eval(node.t);
            segments_[j].push_back(std::move(node));
          }
        }
      }
    }
  }

  std::size_t n_;
  std::vector<double> times_;
  std::optional<WaningSpec> waning_;
  std::vector<double> b_, I_;
  std::vector<double> b_tmin_, I_tmin_, I_tmax_;
  std::vector<double> points_;
  std::vector<std::size_t> point_index_;
  std::vector<std::vector<Node>> segments_;
};

/// Population-averaged background survival and the survival-weighted
/// background hazard at each time.
struct Background {
  std::vector<double> survival, hazard;
};

inline Background background(const SurvivalModelSpec& spec, const Population& pop,
                             std::span<const double> times) {
  Background bg;
  bg.survival.assign(times.size(), 1.0);
  bg.hazard.assign(times.size(), 0.0);
  if (!spec.relative_survival) return bg;
  if (pop.ages.empty()) throw InputError("standardisation population is empty");
  const LifeTable& lt = *spec.backhaz;
  for (std::size_t k = 0; k < times.size(); ++k) {
    double s = 0.0, sh = 0.0;
    for (double a : pop.ages) {
      const double si = std::exp(-lt.cumulative(a, times[k]));
      s += si;
      sh += si * lt.rate(a + times[k]);
    }
    bg.survival[k] = s / static_cast<double>(pop.ages.size());
    bg.hazard[k] = s > 0.0 ? sh / s : lt.rate(pop.ages.front() + times[k]);
  }
  return bg;
}

inline void check_two_arm(const ModelFit& fit, const std::optional<WaningSpec>& waning) {
  if (!waning) return;
  if (fit.effect_mode == EffectMode::separate_arms)
    throw ConfigError("treatment waning is not available for separate-arm models");
  if (fit.effect_mode == EffectMode::none)
    throw ConfigError("treatment waning needs a PH or non-PH two-arm model");
  waning->validate();
}

inline std::size_t n_draws(const ModelFit& fit) {
  std::size_t n = fit.components.front().sample.n_draws();
  for (const auto& c : fit.components) n = std::min(n, c.sample.n_draws());
  return n;
}

}  // namespace predict_detail

/// Draws [time][draw] of marginal all-cause survival and hazard for `arm`.
struct CurveDraws {
  std::vector<double> times;
  std::vector<std::vector<double>> survival;
  std::vector<std::vector<double>> hazard;
};

inline CurveDraws curve_draws(const ModelFit& fit, int arm, const Population& pop,
                              std::vector<double> times,
                              const std::optional<WaningSpec>& waning = std::nullopt,
                              unsigned threads = 1) {
  predict_detail::check_two_arm(fit, waning);
  const ComponentFit& comp = fit.for_arm(arm);
  const predict_detail::CurveGrid grid(comp.spec.basis, times, arm == 1 ? waning : std::nullopt);
  const auto bg = predict_detail::background(comp.spec, pop, times);
  const std::size_t S = predict_detail::n_draws(fit), T = times.size();
  CurveDraws out;
  out.times = std::move(times);
  out.survival.assign(T, std::vector<double>(S));
  out.hazard.assign(T, std::vector<double>(S));
  parallel_for(S, threads, [&](std::size_t s) {
    std::vector<double> h, H;
    grid.excess(comp.spec, comp.sample.draw(s), arm, h, H);
    for (std::size_t k = 0; k < T; ++k) {
      out.survival[k][s] = bg.survival[k] * std::exp(-H[k]);
      out.hazard[k][s] = h[k] + bg.hazard[k];
    }
  });
  return out;
}

/// Per-draw marginal RMST of `arm` up to the horizon.
inline std::vector<double> rmst_draws(const ModelFit& fit, int arm, const Population& pop,
                                      const PredictOptions& opt = {},
                                      const std::optional<WaningSpec>& waning = std::nullopt) {
  if (!(opt.horizon > 0.0)) throw ConfigError("RMST horizon must be positive");
  predict_detail::check_two_arm(fit, waning);
  const CompositeRule rule = composite_gauss_legendre(opt.horizon, opt.nodes_per_year);
  const ComponentFit& comp = fit.for_arm(arm);
  const predict_detail::CurveGrid grid(comp.spec.basis, rule.nodes, arm == 1 ? waning : std::nullopt);
  const auto bg = predict_detail::background(comp.spec, pop, rule.nodes);
  const std::size_t S = predict_detail::n_draws(fit);
  std::vector<double> out(S);
  parallel_for(S, opt.threads, [&](std::size_t s) {
    std::vector<double> h, H;
    grid.excess(comp.spec, comp.sample.draw(s), arm, h, H);
    double acc = 0.0;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k)
      acc += rule.weights[k] * bg.survival[k] * std::exp(-H[k]);
    out[s] = acc;
  });
  return out;
}

/// Per-draw marginal RMST(active, optionally waned) - RMST(control).
inline std::vector<double> rmst_difference_draws(const ModelFit& fit, const Population& pop,
                                                 const PredictOptions& opt = {},
                                                 const std::optional<WaningSpec>& waning = std::nullopt) {
  auto active = rmst_draws(fit, 1, pop, opt, waning);
  const auto control = rmst_draws(fit, 0, pop, opt);
  for (std::size_t s = 0; s < active.size(); ++s) active[s] -= control[s];
  return active;
}

inline std::vector<Summary> summarise_rows(const std::vector<std::vector<double>>& rows) {
  std::vector<Summary> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(summarise(r));
  return out;
}

/// Conditional survival of one individual.
inline std::vector<Summary> survival_curve(const ModelFit& fit, int arm, double age,
                                           std::vector<double> times,
                                           const std::optional<WaningSpec>& waning = std::nullopt) {
  return summarise_rows(curve_draws(fit, arm, Population::single(age), std::move(times), waning).survival);
}

inline Summary marginal_survival(const ModelFit& fit, int arm, const Population& pop, double t) {
  return summarise(curve_draws(fit, arm, pop, {t}).survival.front());
}

inline Summary marginal_hazard(const ModelFit& fit, int arm, const Population& pop, double t) {
  return summarise(curve_draws(fit, arm, pop, {t}).hazard.front());
}

inline Summary rmst(const ModelFit& fit, int arm, const Population& pop,
                    const PredictOptions& opt = {}) {
  return summarise(rmst_draws(fit, arm, pop, opt));
}

inline Summary rmst_difference(const ModelFit& fit, const Population& pop,
                               const PredictOptions& opt = {},
                               const std::optional<WaningSpec>& waning = std::nullopt) {
  return summarise(rmst_difference_draws(fit, pop, opt, waning));
}

/// One row of plot-ready output.
struct TidyRow {
  double time = 0.0;
  std::string quantity;
  Summary summary;
  int arm = 0;
  std::string model_tag;
};

inline void write_tidy_csv(std::ostream& os, const std::vector<TidyRow>& rows) {
  os << "time,quantity,median,lo95,hi95,arm,model_tag\n";
  os.precision(10);
  for (const auto& r : rows)
    os << r.time << ',' << r.quantity << ',' << r.summary.median << ',' << r.summary.lower << ','
       << r.summary.upper << ',' << r.arm << ',' << r.model_tag << '\n';
}

inline nlohmann::json tidy_json(const std::vector<TidyRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"time", r.time},
                   {"quantity", r.quantity},
                   {"median", r.summary.median},
                   {"lo95", r.summary.lower},
                   {"hi95", r.summary.upper},
                   {"arm", r.arm},
                   {"model_tag", r.model_tag}});
  return out;
}

}  // namespace survx
