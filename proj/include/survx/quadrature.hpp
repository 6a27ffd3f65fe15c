#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace survx {

/// Gauss-Legendre rule on [-1, 1], nodes ascending.
class GaussLegendre {
 public:
  explicit GaussLegendre(int n) : nodes_(n), weights_(n) {
    if (n < 1) throw std::invalid_argument("GaussLegendre: n must be >= 1");
    // P_n(x) and P_n'(x) by the three-term recurrence.
    auto legendre = [n](double x, double& dp) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      // p1 = P_n, p0 = P_{n-1} (P_0 = 1 when n == 1)
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      return p1;
    };
    const int half = (n + 1) / 2;
    for (int i = 0; i < half; ++i) {
      double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int iter = 0; iter < 100; ++iter) {
        const double dx = legendre(x, dp) / dp;
        x -= dx;
        if (std::abs(dx) < 1e-16) break;
      }
      legendre(x, dp);
      const double w = 2.0 / ((1.0 - x * x) * dp * dp);
      nodes_[i] = -x;
      weights_[i] = w;
      nodes_[n - 1 - i] = x;
      weights_[n - 1 - i] = w;
    }
    if (n % 2 == 1) nodes_[n / 2] = 0.0;
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& weights() const { return weights_; }

  /// Integral of f over [a, b].
  template <class F>
  double integrate(F&& f, double a, double b) const {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    double sum = 0.0;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      sum += weights_[i] * f(mid + half * nodes_[i]);
    return sum * half;
  }

 private:
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

/// Composite Gauss-Legendre nodes and weights on [0, horizon] with unit-width
/// (or shorter final) segments.
struct CompositeRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline CompositeRule composite_gauss_legendre(double horizon, int nodes_per_segment,
                                              double segment_width = 1.0) {
  CompositeRule rule;
  if (horizon <= 0.0) return rule;
  const GaussLegendre gl(nodes_per_segment);
  const int n_seg = static_cast<int>(std::ceil(horizon / segment_width - 1e-12));
  rule.nodes.reserve(static_cast<std::size_t>(n_seg) * nodes_per_segment);
  rule.weights.reserve(rule.nodes.capacity());
  for (int s = 0; s < n_seg; ++s) {
    const double a = s * segment_width;
    const double b = std::min(horizon, a + segment_width);
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    for (int i = 0; i < gl.size(); ++i) {
      rule.nodes.push_back(mid + half * gl.nodes()[i]);
      rule.weights.push_back(half * gl.weights()[i]);
    }
  }
  return rule;
}

}  // namespace survx
