#pragma once

// Limited-memory BFGS minimiser with a backtracking (Armijo) line search.

#include <algorithm>
#include <cmath>
#include <deque>
#include <span>
#include <string>
#include <vector>

namespace survx {

struct OptimOptions {
  int max_iterations = 2000;
  int history = 10;
  double grad_tol = 1e-6;    ///< on max |g_i| / max(1, |f|)
  double value_tol = 1e-13;  ///< relative change in f treated as stalled
};

struct OptimResult {
  std::vector<double> x;
  double value = 0.0;
  std::vector<double> gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

/// Minimises f, called as f(x, grad) -> value; non-finite values are
/// treated as infeasible and shrink the step.
template <class F>
OptimResult lbfgs_minimize(F&& f, std::vector<double> x, const OptimOptions& opt = {}) {
  const std::size_t n = x.size();
  OptimResult res;
  std::vector<double> g(n), xn(n), gn(n), d(n);
  auto dot = [](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  auto grad_norm = [&](std::span<const double> v) {
    double m = 0.0;
    for (double gi : v) m = std::max(m, std::abs(gi));
    return m;
  };
  double fx = f(std::span<const double>(x), std::span<double>(g));
  ++res.evaluations;
  if (!std::isfinite(fx) || grad_norm(g) != grad_norm(g)) {
    res.x = x;
    res.value = fx;
    res.gradient = g;
    res.message = "objective not finite at the starting point";
    return res;
  }
  struct Pair {
    std::vector<double> s, y;
    double rho;
  };
  std::deque<Pair> mem;
  int stalled = 0;
  for (int it = 0; it < opt.max_iterations; ++it) {
    res.iterations = it;
    if (grad_norm(g) <= opt.grad_tol * std::max(1.0, std::abs(fx))) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      break;
    }
    // Two-loop recursion for d = -H g.
    for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
    std::vector<double> alpha(mem.size());
    for (std::size_t k = mem.size(); k-- > 0;) {
      alpha[k] = mem[k].rho * dot(mem[k].s, d);
      for (std::size_t i = 0; i < n; ++i) d[i] -= alpha[k] * mem[k].y[i];
    }
    if (!mem.empty()) {
      const auto& last = mem.back();
      const double gamma = dot(last.s, last.y) / dot(last.y, last.y);
      for (double& v : d) v *= gamma;
    }
    for (std::size_t k = 0; k < mem.size(); ++k) {
      const double beta = mem[k].rho * dot(mem[k].y, d);
      for (std::size_t i = 0; i < n; ++i) d[i] += (alpha[k] - beta) * mem[k].s[i];
    }
    double slope = dot(g, d);
    if (!(slope < 0.0)) {
      mem.clear();
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
      slope = dot(g, d);
    }
    double step = 1.0;
    if (mem.empty()) step = std::min(1.0, 1.0 / std::max(1e-300, grad_norm(g)));
    double fn = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < n; ++i) xn[i] = x[i] + step * d[i];
      fn = f(std::span<const double>(xn), std::span<double>(gn));
      ++res.evaluations;
      bool finite = std::isfinite(fn);
      for (double v : gn) finite = finite && std::isfinite(v);
      if (finite && fn <= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= finite ? 0.5 : 0.1;
    }
    if (!accepted) {
      res.converged = grad_norm(g) <= 1e-3 * std::max(1.0, std::abs(fx));
      res.message = "line search failed";
      break;
    }
    Pair p{std::vector<double>(n), std::vector<double>(n), 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      p.s[i] = xn[i] - x[i];
      p.y[i] = gn[i] - g[i];
    }
    const double sy = dot(p.s, p.y);
    if (sy > 1e-12 * std::sqrt(dot(p.s, p.s) * dot(p.y, p.y))) {
      p.rho = 1.0 / sy;
      mem.push_back(std::move(p));
      if (static_cast<int>(mem.size()) > opt.history) mem.pop_front();
    }
    const double change = std::abs(fx - fn) / std::max(1.0, std::abs(fx));
    x.swap(xn);
    g.swap(gn);
    fx = fn;
    stalled = change < opt.value_tol ? stalled + 1 : 0;
    if (stalled >= 5) {
      res.converged = grad_norm(g) <= 1e-3 * std::max(1.0, std::abs(fx));
      res.message = "objective stalled";
      break;
    }
    res.iterations = it + 1;
  }
  if (res.message.empty()) res.message = "iteration limit reached";
  res.x = std::move(x);
  res.value = fx;
  res.gradient = std::move(g);
  return res;
}

}  // namespace survx
