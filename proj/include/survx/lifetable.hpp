#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "survx/error.hpp"

namespace survx {

/// Background (expected) mortality as a piecewise-constant rate by attained
/// age. Band k covers [ages[k], ages[k+1]); the last band is open-ended and
/// ages below the first band use the first rate.
class LifeTable {
 public:
  LifeTable() = default;

  LifeTable(std::vector<double> ages, std::vector<double> rates)
      : ages_(std::move(ages)), rates_(std::move(rates)) {
    if (ages_.empty() || ages_.size() != rates_.size())
      throw InputError("life table needs matching, non-empty age and rate columns");
    for (std::size_t k = 0; k < ages_.size(); ++k) {
      if (!std::isfinite(ages_[k]) || !(rates_[k] >= 0.0) || !std::isfinite(rates_[k]))
        throw InputError("life table rates must be finite and non-negative");
      if (k > 0 && !(ages_[k] > ages_[k - 1]))
        throw InputError("life table ages must be strictly ascending");
    }
    cumulative_.assign(ages_.size(), 0.0);
    for (std::size_t k = 1; k < ages_.size(); ++k)
      cumulative_[k] = cumulative_[k - 1] + rates_[k - 1] * (ages_[k] - ages_[k - 1]);
  }

  /// Table whose band rates reproduce a smooth cumulative hazard exactly at
  /// band edges: rate_k = (H(a_{k+1}) - H(a_k)) / width.
  template <class CumulativeHazard>
  static LifeTable from_cumulative(CumulativeHazard&& cumhaz, double min_age, double max_age,
                                   double width) {
    std::vector<double> ages, rates;
    for (double a = min_age; a < max_age - 1e-12; a += width) {
      ages.push_back(a);
      rates.push_back((cumhaz(a + width) - cumhaz(a)) / width);
    }
    return LifeTable(std::move(ages), std::move(rates));
  }

  bool empty() const { return ages_.empty(); }
  const std::vector<double>& ages() const { return ages_; }
  const std::vector<double>& rates() const { return rates_; }

  double rate(double age) const { return rates_[band(age)]; }

  /// Cumulative rate from age 0 (or the first band start) to `age`.
  double cumulative(double age) const {
    if (age <= ages_.front()) return rates_.front() * (age - ages_.front());
    const std::size_t k = band(age);
    return cumulative_[k] + rates_[k] * (age - ages_[k]);
  }

  /// \int_{age}^{age + t} rate.
  double cumulative(double age, double t) const { return cumulative(age + t) - cumulative(age); }

  /// Expected survival to time t for someone aged `age` at time 0.
  double survival(double t, double age) const { return std::exp(-cumulative(age, t)); }

 private:
  std::size_t band(double age) const {
    const auto it = std::upper_bound(ages_.begin(), ages_.end(), age);
    return it == ages_.begin() ? 0 : static_cast<std::size_t>(it - ages_.begin()) - 1;
  }

  std::vector<double> ages_;
  std::vector<double> rates_;
  std::vector<double> cumulative_;
};

}  // namespace survx
