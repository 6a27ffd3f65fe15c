#pragma once

// M-spline hazard bases. A basis of degree d over [lower, upper] uses the
// clamped knot vector (lower x (d+1), interior..., upper x (d+1)); each basis
// function is a B-spline rescaled to integrate to one. Beyond `upper` every
// basis function is held at its value at `upper`, so hazards built from the
// basis are constant there and cumulative hazards grow linearly.

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>
#include <vector>

#include "survx/error.hpp"
#include "survx/quadrature.hpp"
#include "survx/stats.hpp"

namespace survx {

class MSplineBasis {
 public:
  MSplineBasis() : MSplineBasis(3, {}, 0.0, 1.0) {}

  MSplineBasis(int degree, std::vector<double> interior_knots, double lower, double upper)
      : degree_(degree), interior_(std::move(interior_knots)), lower_(lower), upper_(upper) {
    if (degree_ < 0) throw ConfigError("spline degree must be non-negative");
    if (!(lower_ >= 0.0) || !(upper_ > lower_) || !std::isfinite(upper_))
      throw ConfigError("spline boundary knots must satisfy 0 <= lower < upper");
    double prev = lower_;
    for (double k : interior_) {
      if (!(k > prev)) {
        std::ostringstream msg;
        msg << "spline knots must be strictly ascending inside (" << lower_ << ", " << upper_
            << "); offending knot " << k;
        throw ConfigError(msg.str());
      }
      prev = k;
    }
    if (!(upper_ > prev)) throw ConfigError("interior knot at or beyond upper boundary");

    knots_.assign(degree_ + 1, lower_);
    knots_.insert(knots_.end(), interior_.begin(), interior_.end());
    knots_.insert(knots_.end(), degree_ + 1, upper_);

    breaks_.push_back(lower_);
    breaks_.insert(breaks_.end(), interior_.begin(), interior_.end());
    breaks_.push_back(upper_);
    build_integral_table();
  }

  int degree() const { return degree_; }
  std::size_t size() const { return interior_.size() + degree_ + 1; }
  double lower() const { return lower_; }
  double upper() const { return upper_; }
  const std::vector<double>& interior_knots() const { return interior_; }
  /// Full clamped knot vector.
  const std::vector<double>& knot_vector() const { return knots_; }
  /// Distinct breakpoints: lower, interior knots, upper.
  const std::vector<double>& breakpoints() const { return breaks_; }

  /// b_i(t) for all i. Zero below `lower`; held at the value at `upper` beyond it.
  void eval(double t, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    if (!(t >= lower_)) return;
    if (t > upper_) t = upper_;
    const std::size_t span = find_span(t);
    const int p = degree_;
    double bvals[kMaxOrder];
    bspline_nonzero(span, t, bvals);
    for (int r = 0; r <= p; ++r) {
      const std::size_t i = span - p + r;
      const double width = knots_[i + p + 1] - knots_[i];
      out[i] = width > 0.0 ? bvals[r] * (p + 1) / width : 0.0;
    }
  }

  std::vector<double> eval(double t) const {
    std::vector<double> out(size());
    eval(t, out);
    return out;
  }

  /// \int_0^t b_i(x) dx for all i; exact up to rounding. Grows linearly
  /// with slope b_i(upper) beyond the upper boundary.
  void eval_integral(double t, std::span<double> out) const {
    const std::size_t n = size();
    std::fill(out.begin(), out.end(), 0.0);
    if (!(t > lower_)) return;
    if (t >= upper_) {
      const double* at_upper = &cumulative_[(breaks_.size() - 1) * n];
      std::copy(at_upper, at_upper + n, out.begin());
      if (t > upper_) {
        std::vector<double> b(n);
        eval(upper_, b);
        for (std::size_t i = 0; i < n; ++i) out[i] += (t - upper_) * b[i];
      }
      return;
    }
    const auto it = std::upper_bound(breaks_.begin(), breaks_.end(), t);
    const std::size_t j = static_cast<std::size_t>(it - breaks_.begin()) - 1;
    const double* base = &cumulative_[j * n];
    std::copy(base, base + n, out.begin());
    add_piece_integral(breaks_[j], t, out);
  }

  std::vector<double> eval_integral(double t) const {
    std::vector<double> out(size());
    eval_integral(t, out);
    return out;
  }

  /// Greville abscissae (knot averages) locating each basis function in time.
  std::vector<double> greville() const {
    std::vector<double> g(size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (degree_ == 0) {
        g[i] = 0.5 * (knots_[i] + knots_[i + 1]);
      } else {
        double s = 0.0;
        for (int k = 1; k <= degree_; ++k) s += knots_[i + k];
        g[i] = s / degree_;
      }
    }
    return g;
  }

  static constexpr int kMaxOrder = 16;

 private:
  // Index `span` with knots_[span] <= t < knots_[span+1]; the last non-empty
  // span is used for t == upper (left limit).
  std::size_t find_span(double t) const {
    const std::size_t last = size() - 1;
    if (t >= upper_) return last;
    const auto it = std::upper_bound(knots_.begin() + degree_, knots_.begin() + last + 1, t);
    return static_cast<std::size_t>(it - knots_.begin()) - 1;
  }

  // Cox-de Boor triangular scheme: the d+1 B-splines that are non-zero on
  // `span`, for indices span-d .. span.
  void bspline_nonzero(std::size_t span, double t, double* n_out) const {
    const int p = degree_;
    double left[kMaxOrder], right[kMaxOrder];
    n_out[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
      left[j] = t - knots_[span + 1 - j];
      right[j] = knots_[span + j] - t;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double temp = n_out[r] / (right[r + 1] + left[j - r]);
        n_out[r] = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      n_out[j] = saved;
    }
  }

  // Adds \int_a^b b_i to out, for a, b inside one breakpoint interval.
  void add_piece_integral(double a, double b, std::span<double> out) const {
    if (b <= a) return;
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    std::vector<double> vals(size());
    for (int q = 0; q < rule_.size(); ++q) {
      eval(mid + half * rule_.nodes()[q], vals);
      const double w = half * rule_.weights()[q];
      for (std::size_t i = 0; i < vals.size(); ++i) out[i] += w * vals[i];
    }
  }

  void build_integral_table() {
    if (degree_ + 1 > kMaxOrder) throw ConfigError("spline degree too large");
    // Polynomial pieces of degree d are integrated exactly by this rule.
    rule_ = GaussLegendre(degree_ / 2 + 1);
    const std::size_t n = size();
    cumulative_.assign(breaks_.size() * n, 0.0);
    std::vector<double> acc(n, 0.0);
    for (std::size_t j = 1; j < breaks_.size(); ++j) {
      add_piece_integral(breaks_[j - 1], breaks_[j], acc);
      std::copy(acc.begin(), acc.end(), cumulative_.begin() + j * n);
    }
  }

  int degree_ = 3;
  std::vector<double> interior_;
  double lower_ = 0.0;
  double upper_ = 1.0;
  std::vector<double> knots_;
  std::vector<double> breaks_;
  std::vector<double> cumulative_;  // [breakpoint x basis]
  GaussLegendre rule_{1};
};

/// Knots for a hazard basis with `df` basis functions inside follow-up.
///
/// Interior knots sit at equally spaced type-7 quantiles of the event times
/// (df - degree - 1 of them; none when df <= degree + 1). Without extra knots
/// the upper boundary is the last event time. With extra knots the last event
/// time becomes an interior knot, all but the largest extra knot are appended
/// as interior knots, and the largest becomes the upper boundary.
inline MSplineBasis make_knots(std::span<const double> event_times, int df,
                               std::span<const double> extra_knots, int degree = 3) {
  if (event_times.empty()) throw ConfigError("make_knots: no event times");
  if (df < 1) throw ConfigError("make_knots: df must be positive");
  const double last = *std::max_element(event_times.begin(), event_times.end());
  if (!(last > 0.0)) throw ConfigError("make_knots: last event time must be positive");

  const int n_quantile = std::max(0, df - degree - 1);
  std::vector<double> interior;
  for (int k = 1; k <= n_quantile; ++k)
    interior.push_back(quantile(event_times, static_cast<double>(k) / (n_quantile + 1)));
  double prev = 0.0;
  for (double k : interior) {
    if (!(k > prev) || !(k < last)) {
      std::ostringstream msg;
      msg << "degenerate knots: " << n_quantile
          << " quantile knots requested but event times are too few or tied";
      throw ConfigError(msg.str());
    }
    prev = k;
  }

  if (extra_knots.empty()) return MSplineBasis(degree, interior, 0.0, last);

  std::vector<double> extra(extra_knots.begin(), extra_knots.end());
  std::sort(extra.begin(), extra.end());
  if (!(extra.front() > last)) {
    std::ostringstream msg;
    msg << "extra knot " << extra.front() << " does not exceed the last event time " << last;
    throw ConfigError(msg.str());
  }
  if (std::adjacent_find(extra.begin(), extra.end()) != extra.end())
    throw ConfigError("duplicate extra knots");
  interior.push_back(last);
  interior.insert(interior.end(), extra.begin(), extra.end() - 1);
  return MSplineBasis(degree, interior, 0.0, extra.back());
}

/// Coefficients p (summing to one) under which the basis represents a flat
/// hazard of 1 / (upper - lower) on the whole span. Uses the B-spline partition
/// of unity: p_i is proportional to the support width of basis i.
inline std::vector<double> constant_hazard_coefficients(const MSplineBasis& basis) {
  const auto& k = basis.knot_vector();
  const int d = basis.degree();
  std::vector<double> p(basis.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = k[i + d + 1] - k[i];
    total += p[i];
  }
  if (!(total > 0.0)) throw ConfigError("basis has zero total support");
  for (double& v : p) v /= total;
  return p;
}

}  // namespace survx
