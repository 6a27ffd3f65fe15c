#pragma once

// Log posterior on the unconstrained scale. Individual records contribute
// the right-censored log likelihood with all-cause hazard
// h*(age + t) + h_excess(t | x); external rows contribute binomial survivor
// counts with success probability S(stop) / S(start).

#include <cmath>
#include <limits>
#include <algorithm>
#include <numbers>
#include <span>
#include <sstream>
#include <vector>

#include "survx/data.hpp"
#include "survx/error.hpp"
#include "survx/model.hpp"

namespace survx {

namespace dist {

inline double normal_lpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

/// Gamma(shape, rate) density of exp(u), including the log-Jacobian u.
inline double gamma_log_scale_lpdf(double u, const GammaPrior& g) {
  return g.shape * std::log(g.rate) - std::lgamma(g.shape) + g.shape * u - g.rate * std::exp(u);
}

inline double logistic_lpdf(double x, double location, double scale) {
  const double z = std::abs((x - location) / scale);
  return -z - 2.0 * std::log1p(std::exp(-z)) - std::log(scale);
}

inline double log_choose(long n, long k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

/// r log q + (n - r) log(1 - q) given log q <= 0.
inline double binomial_kernel(long n, long r, double log_q) {
  double v = 0.0;
  if (r > 0) v += r * log_q;
  if (n > r) {
    if (!(log_q < 0.0)) return -std::numeric_limits<double>::infinity();
    v += (n - r) * std::log(-std::expm1(log_q));
  }
  return v;
}

}  // namespace dist

/// Posterior density for one model and dataset. Immutable after construction;
/// evaluation is thread-safe.
class PosteriorTarget {
 public:
  PosteriorTarget(SurvivalModelSpec spec, const Dataset& data)
      : spec_(std::move(spec)), layout_(spec_) {
    spec_.validate();
    data.validate();
    const std::size_t n = spec_.n_basis();
    const LifeTable* bh = spec_.relative_survival ? spec_.backhaz.get() : nullptr;

    for (const auto& r : data.ipd) {
      IpdTerm term;
      term.pattern = pattern_index(covariates_for_arm(spec_, r.arm));
      term.event = r.event;
      term.b.resize(n);
      term.I.resize(n);
      spec_.basis.eval(r.time, term.b);
      spec_.basis.eval_integral(r.time, term.I);
      if (bh) {
        term.back_rate = bh->rate(r.age + r.time);
        term.back_cum = bh->cumulative(r.age, r.time);
      }
      ipd_.push_back(std::move(term));
    }
    for (std::size_t k = 0; k < data.external.size(); ++k) {
      const auto& r = data.external[k];
      ExternalTerm term;
      term.pattern = pattern_index(covariates_for_arm(spec_, r.arm));
      term.n = r.n_at_risk;
      term.r = r.n_survivors;
      term.log_choose = dist::log_choose(term.n, term.r);
      term.dI.resize(n);
      std::vector<double> lo(n), hi(n);
      spec_.basis.eval_integral(r.start, lo);
      spec_.basis.eval_integral(r.stop, hi);
      for (std::size_t i = 0; i < n; ++i) term.dI[i] = hi[i] - lo[i];
      if (bh) {
        if (r.has_backsurv()) {
          term.log_back_ratio = std::log(r.backsurv_stop / r.backsurv_start);
        } else {
          if (!std::isfinite(data.reference_age)) {
            std::ostringstream msg;
            msg << "external record " << k
                << " has no expected-survival columns and no reference age is set";
            throw InputError(msg.str());
          }
          term.log_back_ratio = -bh->cumulative(data.reference_age + r.start, r.stop - r.start);
        }
      }
      external_.push_back(std::move(term));
    }
  }

  const SurvivalModelSpec& spec() const { return spec_; }
  const ParameterLayout& layout() const { return layout_; }
  std::size_t dim() const { return layout_.size(); }
  std::size_t n_ipd() const { return ipd_.size(); }
  std::size_t n_external() const { return external_.size(); }

  /// Log posterior; fills `grad` when non-empty. Returns -inf or NaN
  /// (never throws) on numerical failure so samplers can reject the point.
  double log_density(std::span<const double> theta, std::span<double> grad = {}) const {
    const bool want_grad = !grad.empty();
    if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);
    Workspace ws = prepare(theta);
    double lp = log_prior(theta, grad);
    lp += accumulate_likelihood(ws, want_grad, nullptr);
    if (want_grad) backpropagate(theta, ws, grad);
    return lp;
  }

  double log_prior(std::span<const double> theta, std::span<double> grad = {}) const {
    const auto& pr = spec_.priors;
    const ParameterLayout& L = layout_;
    const bool want_grad = !grad.empty();
    double lp = 0.0;

    const double le = theta[L.log_eta()];
    lp += dist::normal_lpdf(le, pr.log_eta.mean, pr.log_eta.sd);
    if (want_grad) grad[L.log_eta()] += -(le - pr.log_eta.mean) / (pr.log_eta.sd * pr.log_eta.sd);

    const double ls = theta[L.log_sigma()];
    lp += dist::gamma_log_scale_lpdf(ls, pr.sigma);
    if (want_grad) grad[L.log_sigma()] += pr.sigma.shape - pr.sigma.rate * std::exp(ls);

    double prev = 0.0;
    for (std::size_t i = 1; i < L.n_basis; ++i) {
      const double w = pr.walk_weights[i - 1];
      const double e = theta[L.eps(i)];
      lp += dist::logistic_lpdf(e, prev, w);
      if (want_grad) {
        const double d = -std::tanh(0.5 * (e - prev) / w) / w;
        grad[L.eps(i)] += d;
        if (i > 1) grad[L.eps(i - 1)] -= d;
      }
      prev = e;
    }

    if (L.beta) {
      for (std::size_t s = 0; s < L.n_cov; ++s) {
        const double b = theta[L.beta_at(s)];
        lp += dist::normal_lpdf(b, 0.0, pr.beta_sd);
        if (want_grad) grad[L.beta_at(s)] += -b / (pr.beta_sd * pr.beta_sd);
      }
    }
    if (L.delta) {
      for (std::size_t s = 0; s < L.n_cov; ++s) {
        const double lt = theta[L.log_tau(s)];
        lp += dist::gamma_log_scale_lpdf(lt, pr.tau);
        if (want_grad) grad[L.log_tau(s)] += pr.tau.shape - pr.tau.rate * std::exp(lt);
        for (std::size_t i = 1; i < L.n_basis; ++i) {
          const double z = theta[L.z_at(i, s)];
          lp += dist::normal_lpdf(z, 0.0, 1.0);
          if (want_grad) grad[L.z_at(i, s)] += -z;
        }
      }
    }
    return lp;
  }

  /// Log likelihood of every individual record then every external row,
  /// including parameter-free constants (background cumulative hazard,
  /// binomial coefficients).
  std::vector<double> pointwise_loglik(std::span<const double> theta) const {
    Workspace ws = prepare(theta);
    std::vector<double> out(ipd_.size() + external_.size());
    accumulate_likelihood(ws, false, out.data());
    return out;
  }

  /// Sum of individual-record log likelihoods.
  double loglik_ipd(std::span<const double> theta, std::vector<double>* per_record = nullptr) const {
    const auto all = pointwise_loglik(theta);
    double s = 0.0;
    for (std::size_t j = 0; j < ipd_.size(); ++j) s += all[j];
    if (per_record) per_record->assign(all.begin(), all.begin() + ipd_.size());
    return s;
  }

  double loglik_external(std::span<const double> theta) const {
    const auto all = pointwise_loglik(theta);
    double s = 0.0;
    for (std::size_t j = ipd_.size(); j < all.size(); ++j) s += all[j];
    return s;
  }

 private:
  struct IpdTerm {
    std::size_t pattern = 0;
    int event = 0;
    std::vector<double> b, I;
    double back_rate = 0.0, back_cum = 0.0;
  };
  struct ExternalTerm {
    std::size_t pattern = 0;
    long n = 0, r = 0;
    double log_choose = 0.0;
    std::vector<double> dI;
    double log_back_ratio = 0.0;
  };
  struct Pattern {
    std::vector<double> p;       // coefficients
    double eta = 0.0;            // scale eta(x)
    std::vector<double> adj_p;   // dL/dp
    double adj_log_eta = 0.0;    // dL/dlog eta(x)
  };
  struct Workspace {
    std::vector<Pattern> patterns;
  };

  std::size_t pattern_index(const std::vector<double>& x) {
    for (std::size_t c = 0; c < patterns_.size(); ++c)
      if (patterns_[c] == x) return c;
    patterns_.push_back(x);
    return patterns_.size() - 1;
  }

  Workspace prepare(std::span<const double> theta) const {
    check_dimension(spec_, theta.size());
    const ParameterLayout& L = layout_;
    const std::size_t n = L.n_basis, S = L.n_cov;
    const auto& mu = spec_.priors.walk_locations;
    const double sigma = std::exp(theta[L.log_sigma()]);
    Workspace ws;
    ws.patterns.resize(patterns_.size());
    for (std::size_t c = 0; c < patterns_.size(); ++c) {
      const auto& x = patterns_[c];
      auto& pat = ws.patterns[c];
      pat.p.assign(n, 0.0);
      for (std::size_t i = 1; i < n; ++i) {
        double g = mu[i] + sigma * theta[L.eps(i)];
        if (L.delta)
          for (std::size_t s = 0; s < S; ++s)
            g += std::exp(theta[L.log_tau(s)]) * theta[L.z_at(i, s)] * x[s];
        pat.p[i] = g;
      }
      softmax(pat.p);
      double lp = theta[L.log_eta()];
      if (L.beta)
        for (std::size_t s = 0; s < S; ++s) lp += theta[L.beta_at(s)] * x[s];
      pat.eta = std::exp(lp);
      pat.adj_p.assign(n, 0.0);
    }
    return ws;
  }

  double accumulate_likelihood(Workspace& ws, bool want_grad, double* pointwise) const {
    const std::size_t n = layout_.n_basis;
    double total = 0.0;
    for (std::size_t j = 0; j < ipd_.size(); ++j) {
      const auto& t = ipd_[j];
      auto& pat = ws.patterns[t.pattern];
      double A = 0.0, C = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        A += pat.p[i] * t.b[i];
        C += pat.p[i] * t.I[i];
      }
      const double h_ex = pat.eta * A;
      const double h_all = t.back_rate + h_ex;
      double ll = -pat.eta * C - t.back_cum;
      if (t.event) ll += std::log(h_all);
      total += ll;
      if (pointwise) pointwise[j] = ll;
      if (want_grad) {
        const double ev = t.event ? 1.0 / h_all : 0.0;
        pat.adj_log_eta += ev * h_ex - pat.eta * C;
        for (std::size_t i = 0; i < n; ++i)
          pat.adj_p[i] += pat.eta * (ev * t.b[i] - t.I[i]);
      }
    }
    for (std::size_t k = 0; k < external_.size(); ++k) {
      const auto& t = external_[k];
      auto& pat = ws.patterns[t.pattern];
      double dC = 0.0;
      for (std::size_t i = 0; i < n; ++i) dC += pat.p[i] * t.dI[i];
      const double log_q = -pat.eta * dC + t.log_back_ratio;
      const double ll = t.log_choose + dist::binomial_kernel(t.n, t.r, log_q);
      total += ll;
      if (pointwise) pointwise[ipd_.size() + k] = ll;
      if (want_grad) {
        // dL/dlog q = r - (n - r) q / (1 - q)
        double g = static_cast<double>(t.r);
        if (t.n > t.r) g -= (t.n - t.r) / std::expm1(-log_q);
        pat.adj_log_eta += g * (-pat.eta * dC);
        for (std::size_t i = 0; i < n; ++i) pat.adj_p[i] += g * (-pat.eta * t.dI[i]);
      }
    }
    return total;
  }

  void backpropagate(std::span<const double> theta, const Workspace& ws,
                     std::span<double> grad) const {
    const ParameterLayout& L = layout_;
    const std::size_t n = L.n_basis, S = L.n_cov;
    const double sigma = std::exp(theta[L.log_sigma()]);
    for (std::size_t c = 0; c < ws.patterns.size(); ++c) {
      const auto& x = patterns_[c];
      const auto& pat = ws.patterns[c];
      grad[L.log_eta()] += pat.adj_log_eta;
      if (L.beta)
        for (std::size_t s = 0; s < S; ++s) grad[L.beta_at(s)] += pat.adj_log_eta * x[s];
      double pa = 0.0;
      for (std::size_t i = 0; i < n; ++i) pa += pat.p[i] * pat.adj_p[i];
      for (std::size_t i = 1; i < n; ++i) {
        const double dg = pat.p[i] * (pat.adj_p[i] - pa);  // dL/dgamma_i
        const double e = theta[L.eps(i)];
        grad[L.eps(i)] += dg * sigma;
        grad[L.log_sigma()] += dg * sigma * e;
        if (L.delta) {
          for (std::size_t s = 0; s < S; ++s) {
            const double tau = std::exp(theta[L.log_tau(s)]);
            const double z = theta[L.z_at(i, s)];
            grad[L.z_at(i, s)] += dg * tau * x[s];
            grad[L.log_tau(s)] += dg * tau * z * x[s];
          }
        }
      }
    }
  }

  SurvivalModelSpec spec_;
  ParameterLayout layout_;
  std::vector<std::vector<double>> patterns_;
  std::vector<IpdTerm> ipd_;
  std::vector<ExternalTerm> external_;
};

/// Checked evaluation of the log posterior and its gradient.
struct LogPosterior {
  double value = 0.0;
  std::vector<double> gradient;
};

inline LogPosterior logpost_and_grad(const PosteriorTarget& target,
                                     std::span<const double> theta) {
  LogPosterior out;
  out.gradient.assign(target.dim(), 0.0);
  out.value = target.log_density(theta, out.gradient);
  bool finite = std::isfinite(out.value);
  for (double g : out.gradient) finite = finite && std::isfinite(g);
  if (!finite) {
    std::ostringstream msg;
    msg << "non-finite log posterior " << out.value << " at theta = [";
    const auto names = target.layout().names();
    for (std::size_t i = 0; i < theta.size(); ++i)
      msg << (i ? ", " : "") << names[i] << "=" << theta[i];
    msg << "]";
    throw NumericalError(msg.str());
  }
  return out;
}

inline double logprior(const SurvivalModelSpec& spec, std::span<const double> theta) {
  return PosteriorTarget(spec, Dataset{}).log_prior(theta);
}

/// Individual-record log likelihood; throws on a non-finite record.
inline double loglik_ipd(const SurvivalModelSpec& spec, std::span<const double> theta,
                         const std::vector<IpdRecord>& ipd,
                         std::vector<double>* per_record = nullptr) {
  Dataset d;
  d.ipd = ipd;
  d.backhaz = spec.backhaz;
  const PosteriorTarget target(spec, d);
  std::vector<double> rec;
  const double total = target.loglik_ipd(theta, &rec);
  for (std::size_t j = 0; j < rec.size(); ++j) {
    if (!std::isfinite(rec[j])) {
      std::ostringstream msg;
      msg << "non-finite log likelihood for individual record " << j;
      throw NumericalError(msg.str());
    }
  }
  if (per_record) *per_record = std::move(rec);
  return total;
}

/// External-data log likelihood; -inf is a valid value (e.g. q = 0, r > 0).
inline double loglik_external(const SurvivalModelSpec& spec, std::span<const double> theta,
                              const std::vector<ExternalRecord>& external,
                              double reference_age = std::numeric_limits<double>::quiet_NaN()) {
  Dataset d;
  d.external = external;
  d.backhaz = spec.backhaz;
  d.reference_age = reference_age;
  return PosteriorTarget(spec, d).loglik_external(theta);
}

}  // namespace survx
