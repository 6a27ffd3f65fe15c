#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <vector>

#include "survx/error.hpp"
#include "survx/lifetable.hpp"

namespace survx {

/// One right-censored individual from the trial.
struct IpdRecord {
  double time = 0.0;  ///< years from baseline
  int event = 0;      ///< 1 = death, 0 = censored
  int arm = 0;        ///< 0 = control, 1 = active
  double age = 0.0;   ///< age at baseline, years

  bool operator==(const IpdRecord&) const = default;
};

/// Aggregate survivor counts over one interval of an external cohort.
///
/// `backsurv_start` / `backsurv_stop` optionally give the cohort's expected
/// background survival at the interval ends; when absent (NaN) and the model
/// uses relative survival, the life table is evaluated at the dataset's
/// reference age.
struct ExternalRecord {
  double start = 0.0;
  double stop = 0.0;
  long n_at_risk = 0;
  long n_survivors = 0;
  int arm = 0;
  double backsurv_start = std::numeric_limits<double>::quiet_NaN();
  double backsurv_stop = std::numeric_limits<double>::quiet_NaN();

  bool has_backsurv() const { return std::isfinite(backsurv_start) && std::isfinite(backsurv_stop); }
};

struct Dataset {
  std::vector<IpdRecord> ipd;
  std::vector<ExternalRecord> external;
  std::shared_ptr<const LifeTable> backhaz;
  /// Age used to look up background rates for external rows without
  /// expected-survival columns.
  double reference_age = std::numeric_limits<double>::quiet_NaN();

  void validate() const {
    for (std::size_t i = 0; i < ipd.size(); ++i) {
      const auto& r = ipd[i];
      if (!(r.time >= 0.0) || !std::isfinite(r.time) || (r.event != 0 && r.event != 1) ||
          (r.arm != 0 && r.arm != 1) || !std::isfinite(r.age)) {
        std::ostringstream msg;
        msg << "invalid individual record " << i;
        throw InputError(msg.str());
      }
    }
    for (std::size_t i = 0; i < external.size(); ++i) {
      const auto& r = external[i];
      if (!(r.start >= 0.0) || !(r.stop > r.start) || !std::isfinite(r.stop) ||
          r.n_at_risk < 0 || r.n_survivors < 0 || r.n_survivors > r.n_at_risk ||
          (r.arm != 0 && r.arm != 1)) {
        std::ostringstream msg;
        msg << "invalid external record " << i;
        throw InputError(msg.str());
      }
      if (r.has_backsurv() && !(r.backsurv_start > 0.0 && r.backsurv_stop > 0.0)) {
        std::ostringstream msg;
        msg << "external record " << i << " has non-positive expected survival";
        throw InputError(msg.str());
      }
    }
  }

  /// Records of one arm (external rows keep their own arm labels).
  Dataset arm_subset(int arm) const {
    Dataset out;
    out.backhaz = backhaz;
    out.reference_age = reference_age;
    for (const auto& r : ipd)
      if (r.arm == arm) out.ipd.push_back(r);
    for (const auto& r : external)
      if (r.arm == arm) out.external.push_back(r);
    return out;
  }
};

/// Concatenation of two datasets sharing the first one's background table.
inline Dataset concatenate(const Dataset& a, const Dataset& b) {
  Dataset out = a;
  out.ipd.insert(out.ipd.end(), b.ipd.begin(), b.ipd.end());
  out.external.insert(out.external.end(), b.external.begin(), b.external.end());
  return out;
}

}  // namespace survx
