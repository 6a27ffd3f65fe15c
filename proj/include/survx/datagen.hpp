#pragma once

// Simulation data-generating mechanism: mixture-Weibull disease hazard with
// a time-varying treatment effect, Gompertz other-cause mortality by
// attained age, uniform censoring, and a biased external cohort reported as
// annual survivor counts.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "survx/data.hpp"
#include "survx/error.hpp"
#include "survx/lifetable.hpp"
#include "survx/quadrature.hpp"
#include "survx/rng.hpp"

namespace survx {

enum class Scenario { constant = 1, waning = 2, delayed_waning = 3 };

inline Scenario parse_scenario(int s) {
  if (s < 1 || s > 3) throw ConfigError("scenario must be 1, 2 or 3");
  return static_cast<Scenario>(s);
}

struct DgmConfig {
  double mix_p = 0.41;
  double shape1 = 1.53, scale1 = 0.52;
  double shape2 = 0.82, scale2 = 0.13;
  double gompertz_rate = 4.3e-5;
  double gompertz_shape = 0.094;
  double age_mean = 60.0, age_sd = 9.0;
  Scenario scenario = Scenario::constant;
  double hazard_ratio = 0.7;  ///< scenario 1 excess hazard ratio
  int n_per_arm = 200;
  double follow_up = 5.0;
  double censor_lo = 3.0, censor_hi = 5.0;
  double external_start = 6.0, external_end = 25.0;
  int external_n = 600;
  double bias_v = 0.0;
  double max_time = 120.0;

  void validate() const {
    if (!(mix_p > 0.0 && mix_p < 1.0)) throw ConfigError("mixture probability must be in (0, 1)");
    if (!(shape1 > 0 && scale1 > 0 && shape2 > 0 && scale2 > 0 && gompertz_rate > 0 &&
          gompertz_shape > 0 && age_sd >= 0 && hazard_ratio > 0))
      throw ConfigError("DGM shapes, scales and rates must be positive");
    if (n_per_arm < 1 || external_n < 0) throw ConfigError("sample sizes must be positive");
    if (!(censor_lo <= censor_hi) || !(follow_up > 0))
      throw ConfigError("invalid censoring window or follow-up");
    if (!(external_end > external_start) || external_start < 0)
      throw ConfigError("invalid external follow-up window");
  }
};

/// Log excess hazard ratio beta(t) of the active arm.
inline double effect_log_hr(Scenario scenario, double t, double hazard_ratio = 0.7) {
  switch (scenario) {
    case Scenario::constant: return std::log(hazard_ratio);
    case Scenario::waning: return -0.38 + 0.38 * std::tanh(0.8 * t - 1.2);
    case Scenario::delayed_waning: {
      const double mu = 0.8, sigma = 0.4, lambda = 0.35;
      const double f = 0.5 * lambda * std::exp(0.5 * lambda * (2 * mu + lambda * sigma * sigma - 2 * t)) *
                       std::erfc((mu + lambda * sigma * sigma - t) / (std::sqrt(2.0) * sigma));
      return -2.8 * f;
    }
  }
  return 0.0;
}

/// Control-arm disease-specific survival S_d0(t) = p S1 + (1 - p) S2.
inline double baseline_disease_survival(const DgmConfig& c, double t) {
  return c.mix_p * std::exp(-c.scale1 * std::pow(t, c.shape1)) +
         (1 - c.mix_p) * std::exp(-c.scale2 * std::pow(t, c.shape2));
}

inline double baseline_disease_hazard(const DgmConfig& c, double t) {
  auto dens = [&](double g, double l) {
    return l * g * std::pow(t, g - 1) * std::exp(-l * std::pow(t, g));
  };
  return (c.mix_p * dens(c.shape1, c.scale1) + (1 - c.mix_p) * dens(c.shape2, c.scale2)) /
         baseline_disease_survival(c, t);
}

inline double disease_hazard(const DgmConfig& c, double t, int arm) {
  const double h0 = baseline_disease_hazard(c, t);
  return arm == 1 ? h0 * std::exp(effect_log_hr(c.scenario, t, c.hazard_ratio)) : h0;
}

/// Gompertz other-cause cumulative hazard from attained age a to a + t.
inline double other_cause_cumhaz(const DgmConfig& c, double t, double age) {
  return c.gompertz_rate / c.gompertz_shape * std::exp(c.gompertz_shape * age) *
         std::expm1(c.gompertz_shape * t);
}

inline double other_cause_hazard(const DgmConfig& c, double t, double age) {
  return c.gompertz_rate * std::exp(c.gompertz_shape * (age + t));
}

inline double other_cause_survival(const DgmConfig& c, double t, double age) {
  return std::exp(-other_cause_cumhaz(c, t, age));
}

/// Background life table with the Gompertz rates, exact at whole ages.
inline std::shared_ptr<const LifeTable> gompertz_lifetable(const DgmConfig& c, double max_age = 130.0) {
  return std::make_shared<LifeTable>(LifeTable::from_cumulative(
      [&](double a) { return c.gompertz_rate / c.gompertz_shape * std::expm1(c.gompertz_shape * a); },
      0.0, max_age, 1.0));
}

/// Disease-specific cumulative hazard by direct 100-node Gauss-Legendre
/// quadrature, after substituting x = s^4 to smooth the t^(shape - 1)
/// singularity at zero.
inline double disease_cumhaz_quadrature(const DgmConfig& c, double t, int arm) {
  if (t <= 0.0) return 0.0;
  if (arm == 0) return -std::log(baseline_disease_survival(c, t));
  static const GaussLegendre gl(100);
  return gl.integrate(
      [&](double s) {
        const double s3 = s * s * s;
        return disease_hazard(c, s3 * s, arm) * 4.0 * s3;
      },
      0.0, std::pow(t, 0.25));
}

/// Disease-specific cumulative hazard of one arm, tabulated for fast
/// inversion. The control arm and the constant-effect active arm have
/// closed forms; otherwise H is tabulated on a grid in s = t^(1/4) and
/// interpolated by cubic Hermite polynomials using the exact hazard.
class DiseaseCumulativeHazard {
 public:
  DiseaseCumulativeHazard(const DgmConfig& c, int arm, int cells = 20000)
      : c_(c), arm_(arm) {
    closed_form_ = arm == 0 || c.scenario == Scenario::constant;
    if (closed_form_) return;
    s_max_ = std::pow(c.max_time, 0.25);
    ds_ = s_max_ / cells;
    H_.assign(cells + 1, 0.0);
    D_.assign(cells + 1, 0.0);
    const GaussLegendre gl(8);
    auto integrand = [&](double s) {
      const double s3 = s * s * s;
      return disease_hazard(c_, s3 * s, arm_) * 4.0 * s3;
    };
    for (int j = 0; j < cells; ++j) {
      H_[j + 1] = H_[j] + gl.integrate(integrand, j * ds_, (j + 1) * ds_);
      D_[j + 1] = integrand((j + 1) * ds_);
    }
  }

  double operator()(double t) const {
    if (t <= 0.0) return 0.0;
    const double H0 = -std::log(baseline_disease_survival(c_, t));
    if (closed_form_) return arm_ == 0 ? H0 : std::exp(effect_log_hr(c_.scenario, t, c_.hazard_ratio)) * H0;
    const double s = std::pow(t, 0.25);
    if (s >= s_max_) {
      // Beyond the table the effect has vanished to many digits.
      return H_.back() + (H0 + std::log(baseline_disease_survival(c_, c_.max_time)));
    }
    const auto j = static_cast<std::size_t>(s / ds_);
    const double u = s / ds_ - static_cast<double>(j);
    const double u2 = u * u, u3 = u2 * u;
    return (2 * u3 - 3 * u2 + 1) * H_[j] + (u3 - 2 * u2 + u) * ds_ * D_[j] +
           (-2 * u3 + 3 * u2) * H_[j + 1] + (u3 - u2) * ds_ * D_[j + 1];
  }

  double hazard(double t) const { return disease_hazard(c_, t, arm_); }

 private:
  DgmConfig c_;
  int arm_;
  bool closed_form_ = true;
  double s_max_ = 0.0, ds_ = 0.0;
  std::vector<double> H_, D_;
};

/// Time T with H_d(T) + H_o(T | age) = target, by Newton steps safeguarded
/// with bisection on a bracket grown geometrically from (0, 1]. Returns
/// +inf past max_time.
inline double invert_cumulative_hazard(const DiseaseCumulativeHazard& Hd, const DgmConfig& c,
                                       double age, double target, double scale = 1.0) {
  auto H = [&](double t) { return scale * (Hd(t) + other_cause_cumhaz(c, t, age)); };
  double lo = 0.0, hi = 1.0;
  while (H(hi) < target) {
    lo = hi;
    hi *= 2.0;
    if (lo >= c.max_time) return std::numeric_limits<double>::infinity();
  }
  double t = 0.5 * (lo + hi);
  for (int iter = 0; iter < 200 && hi - lo > 1e-12; ++iter) {
    const double f = H(t) - target;
    if (f < 0.0) lo = t;
    else hi = t;
    const double slope = scale * (Hd.hazard(t) + other_cause_hazard(c, t, age));
    double next = t - f / slope;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - t) < 1e-12 * std::max(1.0, t)) {
      t = next;
      break;
    }
    t = next;
  }
  return t > c.max_time ? std::numeric_limits<double>::infinity() : t;
}

struct SimulatedTrial {
  std::vector<IpdRecord> records;
  int capped = 0;  ///< event times beyond max_time, censored there
};

/// One arm of the trial; per individual the stream yields age, the event
/// uniform and the censoring uniform, in that order.
inline SimulatedTrial simulate_arm(const DgmConfig& c, int arm, int n, Rng& rng) {
  c.validate();
  const DiseaseCumulativeHazard Hd(c, arm);
  NormalSampler normal;
  SimulatedTrial out;
  out.records.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double age = c.age_mean + c.age_sd * normal(rng);
    const double e = -std::log(uniform_open(rng));
    const double cens = std::min(c.follow_up, c.censor_lo + (c.censor_hi - c.censor_lo) * uniform_open(rng));
    double t = invert_cumulative_hazard(Hd, c, age, e);
    if (!std::isfinite(t)) {
      ++out.capped;
      t = c.max_time;
    }
    IpdRecord r;
    r.arm = arm;
    r.age = age;
    r.event = t <= cens ? 1 : 0;
    r.time = std::min(t, cens);
    out.records.push_back(r);
  }
  return out;
}

/// Two-arm trial, arms drawn from independent sub-streams of `seed`.
inline SimulatedTrial simulate_trial(const DgmConfig& c, std::uint64_t seed) {
  SimulatedTrial out;
  for (int arm : {0, 1}) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(arm), 0x7a1a1);
    auto part = simulate_arm(c, arm, c.n_per_arm, rng);
    out.records.insert(out.records.end(), part.records.begin(), part.records.end());
    out.capped += part.capped;
  }
  return out;
}

/// External cohort alive at external_start, followed without censoring to
/// external_end, with all-cause cumulative hazard scaled by exp(bias_v).
/// Ages are redrawn from the trial age distribution and kept only for
/// individuals surviving to external_start. Rows carry the cohort's mean
/// expected (other-cause) survival relative to external_start.
inline std::vector<ExternalRecord> simulate_external(const DgmConfig& c, Rng& rng) {
  c.validate();
  const DiseaseCumulativeHazard Hd(c, 0);
  NormalSampler normal;
  const double scale = std::exp(c.bias_v);
  std::vector<double> times, ages;
  while (static_cast<int>(times.size()) < c.external_n) {
    const double age = c.age_mean + c.age_sd * normal(rng);
    const double e = -std::log(uniform_open(rng));
    const double t = invert_cumulative_hazard(Hd, c, age, e, scale);
    if (t > c.external_start) {
      times.push_back(t);
      ages.push_back(age);
    }
  }
  auto mean_backsurv = [&](double t) {
    double s = 0.0;
    for (double a : ages)
      s += std::exp(-(other_cause_cumhaz(c, t, a) - other_cause_cumhaz(c, c.external_start, a)));
    return s / static_cast<double>(ages.size());
  };
  std::vector<ExternalRecord> rows;
  const int n_years = static_cast<int>(std::round(c.external_end - c.external_start));
  for (int y = 0; y < n_years; ++y) {
    ExternalRecord r;
    r.start = c.external_start + y;
    r.stop = r.start + 1.0;
    for (double t : times) {
      r.n_at_risk += t > r.start;
      r.n_survivors += t > r.stop;
    }
    r.arm = 0;
    r.backsurv_start = mean_backsurv(r.start);
    r.backsurv_stop = mean_backsurv(r.stop);
    rows.push_back(r);
  }
  return rows;
}

/// Gauss-Hermite rule for expectations over N(0, 1) (Golub-Welsch).
struct NormalExpectationRule {
  std::vector<double> nodes, weights;

  explicit NormalExpectationRule(int n) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    for (int k = 0; k < n; ++k) {
      nodes.push_back(es.eigenvalues()[k]);
      weights.push_back(es.eigenvectors()(0, k) * es.eigenvectors()(0, k));
    }
  }
};

/// Marginal all-cause survival over the age distribution, by quadrature.
inline double marginal_survival_truth(const DgmConfig& c, int arm, double t,
                                      const DiseaseCumulativeHazard* Hd = nullptr) {
  static const NormalExpectationRule rule(80);
  const double sd = -(Hd ? (*Hd)(t) : disease_cumhaz_quadrature(c, t, arm));
  double so = 0.0;
  for (std::size_t k = 0; k < rule.nodes.size(); ++k)
    so += rule.weights[k] * other_cause_survival(c, t, c.age_mean + c.age_sd * rule.nodes[k]);
  return std::exp(sd) * so;
}

/// Marginal RMST by quadrature over time and age.
inline double marginal_rmst_truth(const DgmConfig& c, int arm, double horizon) {
  const DiseaseCumulativeHazard Hd(c, arm);
  const CompositeRule rule = composite_gauss_legendre(horizon, 16, 0.25);
  double acc = 0.0;
  for (std::size_t k = 0; k < rule.nodes.size(); ++k)
    acc += rule.weights[k] * marginal_survival_truth(c, arm, rule.nodes[k], &Hd);
  return acc;
}

}  // namespace survx
