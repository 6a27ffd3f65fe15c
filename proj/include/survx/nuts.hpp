#pragma once

// No-U-turn sampler with multinomial trajectory sampling, a diagonal
// metric, dual-averaging step-size adaptation and windowed metric
// adaptation during warmup.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <sstream>
#include <vector>

#include "survx/error.hpp"
#include "survx/parallel.hpp"
#include "survx/rng.hpp"
#include "survx/sample.hpp"

namespace survx {

struct NutsOptions {
  int chains = 4;
  int warmup = 1000;
  int iterations = 1000;
  int max_depth = 10;
  double target_accept = 0.8;
  double init_radius = 2.0;  ///< uniform jitter around the supplied init
  unsigned threads = 0;      ///< 0 = hardware concurrency
};

namespace nuts_detail {

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void add_to(Vec& a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

inline Vec sum(const Vec& a, const Vec& b) {
  Vec out = a;
  add_to(out, b);
  return out;
}

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct Point {
  Vec q, p, grad;
  double logp = 0.0;
};

class DualAveraging {
 public:
  void restart(double step) {
    mu_ = std::log(10.0 * step);
    s_bar_ = x_bar_ = 0.0;
    counter_ = 0;
  }
  void learn(double& step, double accept, double delta) {
    ++counter_;
    accept = std::min(1.0, accept);
    const double eta = 1.0 / (counter_ + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta - accept);
    const double x = mu_ - s_bar_ * std::sqrt(counter_) / gamma_;
    const double x_eta = std::pow(counter_, -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    step = std::exp(x);
  }
  void complete(double& step) const { step = std::exp(x_bar_); }

 private:
  double mu_ = 0.0, s_bar_ = 0.0, x_bar_ = 0.0;
  double counter_ = 0;
  double gamma_ = 0.05, t0_ = 10.0, kappa_ = 0.75;
};

/// Warmup schedule: initial fast buffer, doubling slow windows for the
/// metric, final fast buffer.
class WindowSchedule {
 public:
  explicit WindowSchedule(int warmup) : warmup_(warmup) {
    if (warmup < 20) {
      enabled_ = false;
      return;
    }
    init_ = 75;
    term_ = 50;
    base_ = 25;
    if (init_ + base_ + term_ > warmup) {
      init_ = static_cast<int>(0.15 * warmup);
      term_ = static_cast<int>(0.1 * warmup);
      base_ = warmup - (init_ + term_);
    }
    window_size_ = base_;
    window_end_ = init_ + window_size_;
    fix_last_window();
  }
  bool enabled() const { return enabled_; }
  bool in_slow_window(int it) const {
    return enabled_ && it >= init_ && it < warmup_ - term_;
  }
  /// True when iteration `it` closes a slow window.
  bool end_of_window(int it) const { return enabled_ && it + 1 == window_end_; }
  void advance() {
    window_size_ *= 2;
    window_end_ = window_end_ + window_size_;
    fix_last_window();
  }

 private:
  void fix_last_window() {
    const int slow_end = warmup_ - term_;
    if (window_end_ + 2 * window_size_ > slow_end) window_end_ = slow_end;
    if (window_end_ > slow_end) window_end_ = slow_end;
  }
  int warmup_;
  bool enabled_ = true;
  int init_ = 0, term_ = 0, base_ = 0;
  int window_size_ = 0, window_end_ = 0;
};

template <class Target>
class Chain {
 public:
  Chain(const Target& target, const NutsOptions& opt, std::uint64_t seed)
      : target_(target), opt_(opt), rng_(seed), n_(target.dim()), inv_metric_(n_, 1.0) {}

  void initialise(const Vec& init) {
    std::uniform_real_distribution<double> unif(-opt_.init_radius, opt_.init_radius);
    for (int attempt = 0; attempt < 100; ++attempt) {
      z_.q = init;
      if (attempt > 0 || opt_.init_radius > 0)
        for (double& v : z_.q) v += unif(rng_);
      if (evaluate(z_) && std::isfinite(z_.logp)) return;
    }
    throw FitError("could not find a finite initial point for the sampler after 100 attempts");
  }

  double step_size() const { return step_; }

  /// Runs warmup and sampling; appends draws to `out` (row-major).
  void run(Vec& out, std::size_t& divergences) {
    DualAveraging da;
    WindowSchedule windows(opt_.warmup);
    init_step_size();
    da.restart(step_);
    std::vector<Vec> window_draws;
    for (int it = 0; it < opt_.warmup; ++it) {
      const auto st = transition();
      da.learn(step_, st.accept, opt_.target_accept);
      if (windows.in_slow_window(it)) window_draws.push_back(z_.q);
      if (windows.end_of_window(it)) {
        update_metric(window_draws);
        window_draws.clear();
        windows.advance();
        init_step_size();
        da.restart(step_);
      }
    }
    if (opt_.warmup > 0) da.complete(step_);
    for (int it = 0; it < opt_.iterations; ++it) {
      const auto st = transition();
      if (st.divergent) ++divergences;
      out.insert(out.end(), z_.q.begin(), z_.q.end());
    }
  }

 private:
  struct Stats {
    double accept = 0.0;
    bool divergent = false;
  };

  bool evaluate(Point& z) const {
    z.grad.assign(n_, 0.0);
    z.logp = target_.log_density(std::span<const double>(z.q), std::span<double>(z.grad));
    if (!std::isfinite(z.logp)) return false;
    for (double g : z.grad)
      if (!std::isfinite(g)) return false;
    return true;
  }

  double hamiltonian(const Point& z) const {
    double k = 0.0;
    for (std::size_t i = 0; i < n_; ++i) k += z.p[i] * z.p[i] * inv_metric_[i];
    const double h = -z.logp + 0.5 * k;
    return std::isfinite(h) ? h : std::numeric_limits<double>::infinity();
  }

  Vec sharp(const Vec& p) const {
    Vec out(n_);
    for (std::size_t i = 0; i < n_; ++i) out[i] = inv_metric_[i] * p[i];
    return out;
  }

  void sample_momentum(Point& z) {
    z.p.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) z.p[i] = normal_(rng_) / std::sqrt(inv_metric_[i]);
  }

  void leapfrog(Point& z, double eps) const {
    for (std::size_t i = 0; i < n_; ++i) z.p[i] += 0.5 * eps * z.grad[i];
    for (std::size_t i = 0; i < n_; ++i) z.q[i] += eps * inv_metric_[i] * z.p[i];
    if (!evaluate(z)) {
      z.logp = -std::numeric_limits<double>::infinity();
      return;
    }
    for (std::size_t i = 0; i < n_; ++i) z.p[i] += 0.5 * eps * z.grad[i];
  }

  void init_step_size() {
    Point z = z_;
    sample_momentum(z);
    const double H0 = hamiltonian(z);
    Point w = z;
    leapfrog(w, step_);
    double delta = H0 - hamiltonian(w);
    const int direction = delta > std::log(0.8) ? 1 : -1;
    for (int k = 0; k < 100; ++k) {
      sample_momentum(z);
      const double h0 = hamiltonian(z);
      w = z;
      leapfrog(w, step_);
      delta = h0 - hamiltonian(w);
      if (direction == 1 && !(delta > std::log(0.8))) break;
      if (direction == -1 && !(delta < std::log(0.8))) break;
      step_ = direction == 1 ? 2.0 * step_ : 0.5 * step_;
      if (step_ > 1e7 || step_ < 1e-12) break;
    }
  }

  void update_metric(const std::vector<Vec>& draws) {
    const double m = static_cast<double>(draws.size());
    if (m < 3) return;
    for (std::size_t i = 0; i < n_; ++i) {
      double mean = 0.0, m2 = 0.0;
      for (std::size_t k = 0; k < draws.size(); ++k) {
        const double d = draws[k][i] - mean;
        mean += d / static_cast<double>(k + 1);
        m2 += d * (draws[k][i] - mean);
      }
      const double var = m2 / (m - 1.0);
      inv_metric_[i] = (m / (m + 5.0)) * var + 1e-3 * (5.0 / (m + 5.0));
    }
  }

  static bool criterion(const Vec& p_sharp_minus, const Vec& p_sharp_plus, const Vec& rho) {
    return dot(p_sharp_plus, rho) > 0 && dot(p_sharp_minus, rho) > 0;
  }

  struct Tree {
    Vec rho;
    Vec p_begin, p_end, p_sharp_begin, p_sharp_end;
    Point proposal;
    double log_sum_weight = -std::numeric_limits<double>::infinity();
  };

  /// Extends the trajectory from z by 2^depth leapfrog steps in direction
  /// `sign`; z is left at the new outer end.
  bool build_tree(int depth, Point& z, double sign, double H0, Tree& tree, double& sum_metro,
                  int& n_leapfrog, bool& divergent) {
    if (depth == 0) {
      leapfrog(z, sign * step_);
      ++n_leapfrog;
      const double h = hamiltonian(z);
      if (!std::isfinite(h) || h - H0 > 1000.0) {
        divergent = true;
        return false;
      }
      const double lw = H0 - h;
      tree.log_sum_weight = log_sum_exp(tree.log_sum_weight, lw);
      sum_metro += lw > 0 ? 1.0 : std::exp(lw);
      tree.proposal = z;
      tree.rho = z.p;
      tree.p_begin = tree.p_end = z.p;
      tree.p_sharp_begin = tree.p_sharp_end = sharp(z.p);
      return true;
    }
    Tree left;
    if (!build_tree(depth - 1, z, sign, H0, left, sum_metro, n_leapfrog, divergent)) return false;
    Tree right;
    if (!build_tree(depth - 1, z, sign, H0, right, sum_metro, n_leapfrog, divergent)) return false;

    const double lsw = log_sum_exp(left.log_sum_weight, right.log_sum_weight);
    tree.proposal = std::move(left.proposal);
    if (right.log_sum_weight > lsw) {
      tree.proposal = std::move(right.proposal);
    } else if (uniform_open(rng_) < std::exp(right.log_sum_weight - lsw)) {
      tree.proposal = std::move(right.proposal);
    }
    tree.log_sum_weight = lsw;
    tree.rho = sum(left.rho, right.rho);
    tree.p_begin = left.p_begin;
    tree.p_sharp_begin = left.p_sharp_begin;
    tree.p_end = right.p_end;
    tree.p_sharp_end = right.p_sharp_end;

    bool persist = criterion(left.p_sharp_begin, right.p_sharp_end, tree.rho);
    persist = persist && criterion(left.p_sharp_begin, right.p_sharp_begin,
                                   sum(left.rho, right.p_begin));
    persist = persist && criterion(left.p_sharp_end, right.p_sharp_end,
                                   sum(right.rho, left.p_end));
    return persist;
  }

  Stats transition() {
    sample_momentum(z_);
    const double H0 = hamiltonian(z_);
    Point z_minus = z_, z_plus = z_;
    Vec p_minus = z_.p, p_plus = z_.p;
    Vec p_sharp_minus = sharp(z_.p), p_sharp_plus = p_sharp_minus;
    Vec rho = z_.p;
    Point sample = z_;
    double log_sum_weight = 0.0;
    double sum_metro = 0.0;
    int n_leapfrog = 0;
    bool divergent = false;

    for (int depth = 0; depth < opt_.max_depth; ++depth) {
      Tree sub;
      const bool forward = uniform_open(rng_) > 0.5;
      bool valid;
      bool persist;
      if (forward) {
        valid = build_tree(depth, z_plus, 1.0, H0, sub, sum_metro, n_leapfrog, divergent);
        if (!valid) break;
        // Old trajectory followed by the new subtree.
        const Vec merged = sum(rho, sub.rho);
        persist = criterion(p_sharp_minus, sub.p_sharp_end, merged);
        persist = persist && criterion(p_sharp_minus, sub.p_sharp_begin, sum(rho, sub.p_begin));
        persist = persist && criterion(p_sharp_plus, sub.p_sharp_end, sum(sub.rho, p_plus));
        p_plus = sub.p_end;
        p_sharp_plus = sub.p_sharp_end;
        rho = merged;
      } else {
        valid = build_tree(depth, z_minus, -1.0, H0, sub, sum_metro, n_leapfrog, divergent);
        if (!valid) break;
        // New subtree (built backwards) followed by the old trajectory.
        const Vec merged = sum(rho, sub.rho);
        persist = criterion(sub.p_sharp_end, p_sharp_plus, merged);
        persist = persist && criterion(sub.p_sharp_end, p_sharp_minus, sum(sub.rho, p_minus));
        persist = persist && criterion(sub.p_sharp_begin, p_sharp_plus, sum(rho, sub.p_begin));
        p_minus = sub.p_end;
        p_sharp_minus = sub.p_sharp_end;
        rho = merged;
      }
      if (sub.log_sum_weight > log_sum_weight) {
        sample = sub.proposal;
      } else if (uniform_open(rng_) < std::exp(sub.log_sum_weight - log_sum_weight)) {
        sample = sub.proposal;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, sub.log_sum_weight);
      if (!persist) break;
    }
    z_ = std::move(sample);
    Stats st;
    st.accept = n_leapfrog > 0 ? sum_metro / n_leapfrog : 0.0;
    st.divergent = divergent;
    return st;
  }

  const Target& target_;
  NutsOptions opt_;
  Rng rng_;
  NormalSampler normal_;
  std::size_t n_;
  Vec inv_metric_;
  Point z_;
  double step_ = 1.0;
};

}  // namespace nuts_detail

/// Runs `opt.chains` independent chains (in parallel) from jittered copies
/// of `init`. Draws are merged in chain order, so results depend only on
/// the seed and chain count.
template <class Target>
PosteriorSample fit_mcmc(const Target& target, const std::vector<double>& init,
                         const NutsOptions& opt, std::uint64_t seed) {
  if (opt.chains < 1 || opt.iterations < 1 || opt.warmup < 0 || opt.max_depth < 1)
    throw ConfigError("invalid sampler settings");
  if (init.size() != target.dim()) throw InputError("initial point has the wrong dimension");
  const std::size_t C = static_cast<std::size_t>(opt.chains);
  std::vector<std::vector<double>> chain_draws(C);
  std::vector<std::size_t> chain_div(C, 0);
  std::vector<double> steps(C, 0.0);
  const unsigned threads = opt.threads ? opt.threads : default_thread_count();
  parallel_for(C, threads, [&](std::size_t c) {
    nuts_detail::Chain<Target> chain(target, opt, stream_seed(seed, c, 0x4e075));
    chain.initialise(init);
    chain_draws[c].reserve(static_cast<std::size_t>(opt.iterations) * target.dim());
    chain.run(chain_draws[c], chain_div[c]);
    steps[c] = chain.step_size();
  });
  PosteriorSample s;
  s.method = Method::mcmc;
  s.n_params = target.dim();
  for (std::size_t c = 0; c < C; ++c) {
    s.draws.insert(s.draws.end(), chain_draws[c].begin(), chain_draws[c].end());
    s.chain_ids.insert(s.chain_ids.end(), static_cast<std::size_t>(opt.iterations),
                       static_cast<int>(c));
    s.divergences += chain_div[c];
  }
  s.step_sizes = steps;
  compute_diagnostics(s);
  const double total = static_cast<double>(C) * opt.iterations;
  if (s.divergences > 0.01 * total) {
    std::ostringstream msg;
    msg << s.divergences << " divergent transitions after warmup";
    s.warnings.push_back(msg.str());
  }
  if (C > 1 && s.max_rhat() > 1.01) {
    std::ostringstream msg;
    msg << "maximum R-hat " << s.max_rhat() << " exceeds 1.01";
    s.warnings.push_back(msg.str());
  }
  return s;
}

}  // namespace survx
