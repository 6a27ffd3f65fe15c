#pragma once

// File formats: trial IPD, external survivor counts and life tables as CSV;
// run configuration and fit artifacts as JSON.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "survx/csv.hpp"
#include "survx/datagen.hpp"
#include "survx/fit.hpp"
#include "survx/hash.hpp"
#include "survx/predict.hpp"
#include "survx/simstudy.hpp"

namespace survx {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// CSV data files

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return in;
}

/// time,event,arm[,age]; a missing age column leaves ages NaN.
inline std::vector<IpdRecord> read_ipd(std::istream& in, const std::string& source) {
  const auto t = csv::read(in, source);
  csv::require_header(t, {"time", "event", "arm"}, {"age"});
  const bool has_age = t.has("age");
  std::vector<IpdRecord> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    IpdRecord r;
    r.time = t.number(i, "time");
    r.event = static_cast<int>(t.integer(i, "event"));
    r.arm = static_cast<int>(t.integer(i, "arm"));
    r.age = has_age ? t.number(i, "age") : std::numeric_limits<double>::quiet_NaN();
    if (!(r.time >= 0.0) || !std::isfinite(r.time))
      throw InputError(t.where(i, "time") + ": time must be finite and non-negative");
    if (r.event != 0 && r.event != 1) throw InputError(t.where(i, "event") + ": event must be 0 or 1");
    if (r.arm != 0 && r.arm != 1) throw InputError(t.where(i, "arm") + ": arm must be 0 or 1");
    if (has_age && !std::isfinite(r.age)) throw InputError(t.where(i, "age") + ": age must be finite");
    out.push_back(r);
  }
  return out;
}

/// start,stop,n_at_risk,n_survivors,arm[,backsurv_start,backsurv_stop].
/// Within an arm intervals must be ordered and non-overlapping.
inline std::vector<ExternalRecord> read_external(std::istream& in, const std::string& source) {
  const auto t = csv::read(in, source);
  csv::require_header(t, {"start", "stop", "n_at_risk", "n_survivors", "arm"},
                      {"backsurv_start", "backsurv_stop"});
  if (t.has("backsurv_start") != t.has("backsurv_stop"))
    throw InputError(source + ": backsurv_start and backsurv_stop must be given together");
  const bool bs = t.has("backsurv_start");
  std::vector<ExternalRecord> out;
  double last_stop[2] = {-1.0, -1.0};
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    ExternalRecord r;
    r.start = t.number(i, "start");
    r.stop = t.number(i, "stop");
    r.n_at_risk = t.integer(i, "n_at_risk");
    r.n_survivors = t.integer(i, "n_survivors");
    r.arm = static_cast<int>(t.integer(i, "arm"));
    if (bs) {
      r.backsurv_start = t.number(i, "backsurv_start");
      r.backsurv_stop = t.number(i, "backsurv_stop");
    }
    const std::string row = source + " line " + std::to_string(t.line_numbers[i]);
    if (r.arm != 0 && r.arm != 1) throw InputError(row + ": arm must be 0 or 1");
    if (!(r.start >= 0.0) || !(r.stop > r.start) || !std::isfinite(r.stop))
      throw InputError(row + ": interval must satisfy 0 <= start < stop");
    if (r.start < last_stop[r.arm])
      throw InputError(row + ": intervals must be ordered and non-overlapping within an arm");
    last_stop[r.arm] = r.stop;
    if (r.n_at_risk < 0 || r.n_survivors < 0 || r.n_survivors > r.n_at_risk)
      throw InputError(row + ": need 0 <= n_survivors <= n_at_risk");
    if (bs && !(r.backsurv_start > 0.0 && r.backsurv_stop > 0.0))
      throw InputError(row + ": expected survival columns must be positive");
    out.push_back(r);
  }
  return out;
}

/// age,rate_per_year, or age,male,female blended as
/// male_fraction * male + (1 - male_fraction) * female.
inline LifeTable read_lifetable(std::istream& in, const std::string& source, double male_fraction = 0.8) {
  const auto t = csv::read(in, source);
  const bool by_sex = t.header.size() == 3 && t.header[1] == "male";
  if (by_sex) csv::require_header(t, {"age", "male", "female"});
  else csv::require_header(t, {"age", "rate_per_year"});
  if (by_sex && !(male_fraction >= 0.0 && male_fraction <= 1.0))
    throw InputError("male_fraction must be in [0, 1]");
  std::vector<double> ages, rates;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    ages.push_back(t.number(i, "age"));
    rates.push_back(by_sex ? male_fraction * t.number(i, "male") + (1 - male_fraction) * t.number(i, "female")
                           : t.number(i, "rate_per_year"));
  }
  try {
    return LifeTable(std::move(ages), std::move(rates));
  } catch (const InputError& e) {
    throw InputError(source + ": " + e.what());
  }
}

inline void write_ipd(std::ostream& os, const std::vector<IpdRecord>& rows) {
  os << "time,event,arm,age\n";
  for (const auto& r : rows)
    os << csv::format(r.time) << ',' << r.event << ',' << r.arm << ',' << csv::format(r.age) << '\n';
}

inline void write_external(std::ostream& os, const std::vector<ExternalRecord>& rows) {
  bool bs = !rows.empty();
  for (const auto& r : rows) bs = bs && r.has_backsurv();
  os << "start,stop,n_at_risk,n_survivors,arm" << (bs ? ",backsurv_start,backsurv_stop" : "") << '\n';
  for (const auto& r : rows) {
    os << csv::format(r.start) << ',' << csv::format(r.stop) << ',' << r.n_at_risk << ','
       << r.n_survivors << ',' << r.arm;
    if (bs) os << ',' << csv::format(r.backsurv_start) << ',' << csv::format(r.backsurv_stop);
    os << '\n';
  }
}

inline void write_lifetable(std::ostream& os, const LifeTable& lt) {
  os << "age,rate_per_year\n";
  for (std::size_t k = 0; k < lt.ages().size(); ++k)
    os << csv::format(lt.ages()[k]) << ',' << csv::format(lt.rates()[k]) << '\n';
}

template <class Writer, class Rows>
void write_file(const std::filesystem::path& path, Writer&& writer, const Rows& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  writer(os, rows);
}

// ---------------------------------------------------------------------------
// Configuration

struct DataConfig {
  std::string ipd;
  std::string external;   ///< empty = none
  std::string lifetable;  ///< empty = none
  double reference_age = std::numeric_limits<double>::quiet_NaN();
  double male_fraction = 0.8;
};

struct ModelConfig {
  EffectMode effect_mode = EffectMode::none;
  int df = 10;
  std::vector<double> extra_knots;
  bool relative_survival = false;
  NormalPrior log_eta{0.0, 20.0};
  GammaPrior sigma{2.0, 1.0};
  double beta_sd = 2.5;
  GammaPrior tau{2.0, 1.0};
};

struct PredictConfig {
  double horizon = 40.0;
  double step = 0.5;  ///< curve grid spacing
  std::optional<WaningSpec> waning;
  int nodes_per_year = 64;
};

struct TruthConfig {
  long n = 10'000'000;
  double horizon = 40.0;
};

/// Table-style grid of case-study models: every effect mode on every data
/// combination, plus waning rows for the PH model.
struct CaseStudyConfig {
  std::vector<EffectMode> effect_modes{EffectMode::proportional_hazards,
                                       EffectMode::non_proportional_hazards, EffectMode::separate_arms};
  std::vector<std::string> datasets{"trial", "trial+poprates", "trial+poprates+registry"};
  std::vector<double> waning_ends{6.0, 10.0, 20.0};
  double waning_start = 5.0;
};

struct StudySettings {
  int n_reps = 1000;
  double horizon = 40.0;
  double failure_threshold = 0.02;
  int nodes_per_year = 64;
  std::vector<StudyCell> cells;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 1;
  DataConfig data;
  ModelConfig model;
  FitSettings fit;
  PredictConfig predict;
  DgmConfig dgm;
  TruthConfig truth;
  std::optional<StudySettings> study;
  std::optional<CaseStudyConfig> case_study;
  std::filesystem::path base_dir;  ///< directory relative data paths resolve against; not serialised

  std::filesystem::path resolve(const std::string& p) const {
    if (p.empty()) return {};
    const std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  }

  void validate() const {
    if (model.df < 1) throw ConfigError("model.df must be positive");
    predict_waning_check(model.effect_mode, predict.waning, "predict.waning");
    if (!(predict.horizon > 0)) throw ConfigError("predict.horizon must be positive");
    if (!(predict.step > 0)) throw ConfigError("predict.step must be positive");
    if (predict.nodes_per_year < 1) throw ConfigError("predict.nodes_per_year must be positive");
    dgm.validate();
    if (truth.n < 2) throw ConfigError("truth.n must be at least 2");
    if (study) study_config().validate();
    if (case_study) {
      if (case_study->effect_modes.empty() || case_study->datasets.empty())
        throw ConfigError("case_study needs effect_modes and datasets");
      for (double e : case_study->waning_ends) WaningSpec{case_study->waning_start, e}.validate();
    }
  }

  static void predict_waning_check(EffectMode mode, const std::optional<WaningSpec>& w, const std::string& key) {
    if (!w) return;
    w->validate();
    if (mode == EffectMode::separate_arms)
      throw ConfigError(key + ": treatment-effect waning cannot be combined with separate-arm models");
    if (mode == EffectMode::none) throw ConfigError(key + ": waning needs a model with a treatment effect");
  }

  StudyConfig study_config() const {
    if (!study) throw ConfigError("config has no study section");
    StudyConfig s;
    s.dgm = dgm;
    s.n_reps = study->n_reps;
    s.seed = seed;
    s.horizon = study->horizon;
    s.cells = study->cells;
    s.fit = fit;
    s.failure_threshold = study->failure_threshold;
    s.nodes_per_year = study->nodes_per_year;
    return s;
  }
};

namespace config_detail {

/// Typed access to one JSON object, rejecting keys not in `allowed`.
class Reader {
 public:
  Reader(const json& j, std::string path, std::initializer_list<const char*> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw InputError("config: '" + display() + "' must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!ok.count(it.key())) throw InputError("config: unknown key '" + key(it.key()) + "'");
  }

  bool has(const char* k) const { return j_.contains(k) && !j_.at(k).is_null(); }
  const json& at(const char* k) const { return j_.at(k); }
  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  void number(const char* k, double& out) const {
    if (!has(k)) return;
    const auto& v = j_.at(k);
    if (!v.is_number()) throw InputError("config: '" + key(k) + "' must be a number");
    out = v.get<double>();
    if (!std::isfinite(out)) throw InputError("config: '" + key(k) + "' must be finite");
  }
  template <class Int>
  void integer(const char* k, Int& out) const {
    if (!has(k)) return;
    const auto& v = j_.at(k);
    if (!v.is_number_integer()) throw InputError("config: '" + key(k) + "' must be an integer");
    if constexpr (std::is_unsigned_v<Int>) {
      if (v.is_number_unsigned()) out = static_cast<Int>(v.get<std::uint64_t>());
      else if (v.get<long long>() < 0) throw InputError("config: '" + key(k) + "' must be non-negative");
      else out = static_cast<Int>(v.get<long long>());
    } else {
      out = static_cast<Int>(v.get<long long>());
    }
  }
  void boolean(const char* k, bool& out) const {
    if (!has(k)) return;
    if (!j_.at(k).is_boolean()) throw InputError("config: '" + key(k) + "' must be true or false");
    out = j_.at(k).get<bool>();
  }
  void string(const char* k, std::string& out) const {
    if (!has(k)) return;
    if (!j_.at(k).is_string()) throw InputError("config: '" + key(k) + "' must be a string");
    out = j_.at(k).get<std::string>();
  }
  void numbers(const char* k, std::vector<double>& out) const {
    if (!has(k)) return;
    const auto& v = j_.at(k);
    if (!v.is_array()) throw InputError("config: '" + key(k) + "' must be an array of numbers");
    out.clear();
    for (const auto& x : v) {
      if (!x.is_number()) throw InputError("config: '" + key(k) + "' must be an array of numbers");
      out.push_back(x.get<double>());
    }
  }
  void mode(const char* k, EffectMode& out) const {
    std::string s;
    string(k, s);
    if (s.empty()) return;
    try {
      out = parse_effect_mode(s);
    } catch (const Error& e) {
      throw InputError("config: '" + key(k) + "': " + e.what());
    }
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }
  const json& j_;
  std::string path_;
};

inline void read_normal(const Reader& parent, const char* k, NormalPrior& p) {
  if (!parent.has(k)) return;
  Reader r(parent.at(k), parent.key(k), {"mean", "sd"});
  r.number("mean", p.mean);
  r.number("sd", p.sd);
}

inline void read_gamma(const Reader& parent, const char* k, GammaPrior& p) {
  if (!parent.has(k)) return;
  Reader r(parent.at(k), parent.key(k), {"shape", "rate"});
  r.number("shape", p.shape);
  r.number("rate", p.rate);
}

inline std::optional<WaningSpec> read_waning(const Reader& parent, const char* k) {
  if (!parent.has(k)) return std::nullopt;
  Reader r(parent.at(k), parent.key(k), {"t_min", "t_max"});
  WaningSpec w;
  r.number("t_min", w.t_min);
  r.number("t_max", w.t_max);
  return w;
}

inline json to_json(const NormalPrior& p) { return {{"mean", p.mean}, {"sd", p.sd}}; }
inline json to_json(const GammaPrior& p) { return {{"shape", p.shape}, {"rate", p.rate}}; }
inline json to_json(const std::optional<WaningSpec>& w) {
  if (!w) return nullptr;
  return {{"t_min", w->t_min}, {"t_max", w->t_max}};
}
inline json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline StudyCell read_cell(const json& j, const std::string& path, const StudyCell& defaults) {
  Reader r(j, path,
           {"model_tag", "effect_mode", "external", "bias_v", "bias", "df", "extra_knots",
            "relative_survival", "waning", "log_eta", "sigma", "beta_sd", "tau"});
  StudyCell c = defaults;
  r.string("model_tag", c.tag);
  r.mode("effect_mode", c.effect_mode);
  r.boolean("external", c.external);
  r.number("bias_v", c.bias_v);
  if (r.has("bias")) {
    // Relative hazard bias, e.g. 0.2 for +20%.
    double rel = 0.0;
    r.number("bias", rel);
    if (!(rel > -1.0)) throw InputError("config: '" + r.key("bias") + "' must exceed -1");
    c.bias_v = std::log1p(rel);
  }
  r.integer("df", c.df);
  r.numbers("extra_knots", c.extra_knots);
  r.boolean("relative_survival", c.relative_survival);
  c.waning = read_waning(r, "waning");
  read_normal(r, "log_eta", c.log_eta);
  read_gamma(r, "sigma", c.sigma);
  r.number("beta_sd", c.beta_sd);
  read_gamma(r, "tau", c.tau);
  return c;
}

inline json cell_to_json(const StudyCell& c) {
  return {{"model_tag", c.tag},
          {"effect_mode", to_string(c.effect_mode)},
          {"external", c.external},
          {"bias_v", c.bias_v},
          {"df", c.df},
          {"extra_knots", c.extra_knots},
          {"relative_survival", c.relative_survival},
          {"waning", to_json(c.waning)},
          {"log_eta", to_json(c.log_eta)},
          {"sigma", to_json(c.sigma)},
          {"beta_sd", c.beta_sd},
          {"tau", to_json(c.tau)}};
}

}  // namespace config_detail

/// Parses a run configuration, applying defaults and rejecting unknown keys
/// and malformed values (errors name the offending key).
inline RunConfig parse_config(const json& j) {
  using config_detail::Reader;
  Reader root(j, "",
              {"schema_version", "seed", "data", "model", "fit", "predict", "dgm", "truth", "study",
               "case_study"});
  RunConfig c;
  if (!root.has("schema_version")) throw InputError("config: missing required key 'schema_version'");
  root.integer("schema_version", c.schema_version);
  if (c.schema_version != kSchemaVersion)
    throw InputError("config: unsupported schema_version " + std::to_string(c.schema_version) +
                     " (expected " + std::to_string(kSchemaVersion) + ")");
  root.integer("seed", c.seed);

  if (root.has("data")) {
    Reader r(root.at("data"), "data", {"ipd", "external", "lifetable", "reference_age", "male_fraction"});
    r.string("ipd", c.data.ipd);
    r.string("external", c.data.external);
    r.string("lifetable", c.data.lifetable);
    r.number("reference_age", c.data.reference_age);
    r.number("male_fraction", c.data.male_fraction);
  }
  if (root.has("model")) {
    Reader r(root.at("model"), "model",
             {"effect_mode", "df", "extra_knots", "relative_survival", "log_eta", "sigma", "beta_sd", "tau"});
    r.mode("effect_mode", c.model.effect_mode);
    r.integer("df", c.model.df);
    r.numbers("extra_knots", c.model.extra_knots);
    r.boolean("relative_survival", c.model.relative_survival);
    config_detail::read_normal(r, "log_eta", c.model.log_eta);
    config_detail::read_gamma(r, "sigma", c.model.sigma);
    r.number("beta_sd", c.model.beta_sd);
    config_detail::read_gamma(r, "tau", c.model.tau);
  }
  if (root.has("fit")) {
    Reader r(root.at("fit"), "fit",
             {"method", "chains", "warmup", "iterations", "max_depth", "target_accept", "laplace_draws",
              "restarts"});
    std::string m;
    r.string("method", m);
    if (!m.empty()) {
      try {
        c.fit.method = parse_method(m);
      } catch (const Error& e) {
        throw InputError(std::string("config: 'fit.method': ") + e.what());
      }
    }
    r.integer("chains", c.fit.nuts.chains);
    r.integer("warmup", c.fit.nuts.warmup);
    r.integer("iterations", c.fit.nuts.iterations);
    r.integer("max_depth", c.fit.nuts.max_depth);
    r.number("target_accept", c.fit.nuts.target_accept);
    r.integer("laplace_draws", c.fit.laplace.draws);
    r.integer("restarts", c.fit.laplace.restarts);
  }
  if (root.has("predict")) {
    Reader r(root.at("predict"), "predict", {"horizon", "step", "waning", "nodes_per_year"});
    r.number("horizon", c.predict.horizon);
    r.number("step", c.predict.step);
    c.predict.waning = config_detail::read_waning(r, "waning");
    r.integer("nodes_per_year", c.predict.nodes_per_year);
  }
  if (root.has("dgm")) {
    Reader r(root.at("dgm"), "dgm",
             {"scenario", "hazard_ratio", "n_per_arm", "follow_up", "censor_lo", "censor_hi",
              "external_start", "external_end", "external_n", "bias_v", "age_mean", "age_sd"});
    int scenario = static_cast<int>(c.dgm.scenario);
    r.integer("scenario", scenario);
    try {
      c.dgm.scenario = parse_scenario(scenario);
    } catch (const Error& e) {
      throw InputError(std::string("config: 'dgm.scenario': ") + e.what());
    }
    r.number("hazard_ratio", c.dgm.hazard_ratio);
    r.integer("n_per_arm", c.dgm.n_per_arm);
    r.number("follow_up", c.dgm.follow_up);
    r.number("censor_lo", c.dgm.censor_lo);
    r.number("censor_hi", c.dgm.censor_hi);
    r.number("external_start", c.dgm.external_start);
    r.number("external_end", c.dgm.external_end);
    r.integer("external_n", c.dgm.external_n);
    r.number("bias_v", c.dgm.bias_v);
    r.number("age_mean", c.dgm.age_mean);
    r.number("age_sd", c.dgm.age_sd);
  }
  if (root.has("truth")) {
    Reader r(root.at("truth"), "truth", {"n", "horizon"});
    r.integer("n", c.truth.n);
    r.number("horizon", c.truth.horizon);
  }
  if (root.has("study")) {
    Reader r(root.at("study"), "study",
             {"n_reps", "horizon", "failure_threshold", "nodes_per_year", "cell_defaults", "cells"});
    StudySettings s;
    r.integer("n_reps", s.n_reps);
    r.number("horizon", s.horizon);
    r.number("failure_threshold", s.failure_threshold);
    r.integer("nodes_per_year", s.nodes_per_year);
    StudyCell defaults;
    if (r.has("cell_defaults"))
      defaults = config_detail::read_cell(r.at("cell_defaults"), "study.cell_defaults", defaults);
    if (r.has("cells")) {
      const auto& cells = r.at("cells");
      if (!cells.is_array()) throw InputError("config: 'study.cells' must be an array");
      for (std::size_t i = 0; i < cells.size(); ++i)
        s.cells.push_back(config_detail::read_cell(cells[i], "study.cells[" + std::to_string(i) + "]", defaults));
    }
    c.study = std::move(s);
  }
  if (root.has("case_study")) {
    Reader r(root.at("case_study"), "case_study", {"effect_modes", "datasets", "waning_ends", "waning_start"});
    CaseStudyConfig cs;
    if (r.has("effect_modes")) {
      cs.effect_modes.clear();
      for (const auto& m : r.at("effect_modes")) {
        if (!m.is_string()) throw InputError("config: 'case_study.effect_modes' must be strings");
        cs.effect_modes.push_back(parse_effect_mode(m.get<std::string>()));
      }
    }
    if (r.has("datasets")) {
      cs.datasets.clear();
      for (const auto& d : r.at("datasets")) {
        if (!d.is_string()) throw InputError("config: 'case_study.datasets' must be strings");
        const auto name = d.get<std::string>();
        if (name != "trial" && name != "trial+poprates" && name != "trial+poprates+registry")
          throw InputError("config: unknown case_study dataset '" + name + "'");
        cs.datasets.push_back(name);
      }
    }
    r.numbers("waning_ends", cs.waning_ends);
    r.number("waning_start", cs.waning_start);
    c.case_study = std::move(cs);
  }
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

/// Canonical serialisation: every field with its resolved value.
inline json config_to_json(const RunConfig& c) {
  using namespace config_detail;
  json j;
  j["schema_version"] = c.schema_version;
  j["seed"] = c.seed;
  j["data"] = {{"ipd", c.data.ipd},
               {"external", c.data.external},
               {"lifetable", c.data.lifetable},
               {"reference_age", number_or_null(c.data.reference_age)},
               {"male_fraction", c.data.male_fraction}};
  j["model"] = {{"effect_mode", to_string(c.model.effect_mode)},
                {"df", c.model.df},
                {"extra_knots", c.model.extra_knots},
                {"relative_survival", c.model.relative_survival},
                {"log_eta", to_json(c.model.log_eta)},
                {"sigma", to_json(c.model.sigma)},
                {"beta_sd", c.model.beta_sd},
                {"tau", to_json(c.model.tau)}};
  j["fit"] = {{"method", to_string(c.fit.method)},
              {"chains", c.fit.nuts.chains},
              {"warmup", c.fit.nuts.warmup},
              {"iterations", c.fit.nuts.iterations},
              {"max_depth", c.fit.nuts.max_depth},
              {"target_accept", c.fit.nuts.target_accept},
              {"laplace_draws", c.fit.laplace.draws},
              {"restarts", c.fit.laplace.restarts}};
  j["predict"] = {{"horizon", c.predict.horizon},
                  {"step", c.predict.step},
                  {"waning", to_json(c.predict.waning)},
                  {"nodes_per_year", c.predict.nodes_per_year}};
  j["dgm"] = {{"scenario", static_cast<int>(c.dgm.scenario)},
              {"hazard_ratio", c.dgm.hazard_ratio},
              {"n_per_arm", c.dgm.n_per_arm},
              {"follow_up", c.dgm.follow_up},
              {"censor_lo", c.dgm.censor_lo},
              {"censor_hi", c.dgm.censor_hi},
              {"external_start", c.dgm.external_start},
              {"external_end", c.dgm.external_end},
              {"external_n", c.dgm.external_n},
              {"bias_v", c.dgm.bias_v},
              {"age_mean", c.dgm.age_mean},
              {"age_sd", c.dgm.age_sd}};
  j["truth"] = {{"n", c.truth.n}, {"horizon", c.truth.horizon}};
  if (c.study) {
    json cells = json::array();
    for (const auto& cell : c.study->cells) cells.push_back(cell_to_json(cell));
    j["study"] = {{"n_reps", c.study->n_reps},
                  {"horizon", c.study->horizon},
                  {"failure_threshold", c.study->failure_threshold},
                  {"nodes_per_year", c.study->nodes_per_year},
                  {"cells", cells}};
  }
  if (c.case_study) {
    json modes = json::array();
    for (auto m : c.case_study->effect_modes) modes.push_back(to_string(m));
    j["case_study"] = {{"effect_modes", modes},
                       {"datasets", c.case_study->datasets},
                       {"waning_ends", c.case_study->waning_ends},
                       {"waning_start", c.case_study->waning_start}};
  }
  return j;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  auto in = open_input(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": invalid JSON: " + e.what());
  }
  RunConfig c = parse_config(j);
  c.base_dir = path.parent_path();
  return c;
}

inline void save_config(const std::filesystem::path& path, const RunConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  os << config_to_json(c).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Assembling data and models from a configuration

/// Loads the configured files. IPD without ages takes data.reference_age;
/// external rows are dropped when `use_external` is false.
inline Dataset load_dataset(const RunConfig& c, bool use_external = true, bool use_lifetable = true) {
  if (c.data.ipd.empty()) throw InputError("config: 'data.ipd' is required");
  Dataset d;
  {
    const auto path = c.resolve(c.data.ipd);
    auto in = open_input(path);
    d.ipd = read_ipd(in, path.string());
  }
  for (auto& r : d.ipd) {
    if (std::isnan(r.age)) {
      if (std::isnan(c.data.reference_age))
        throw InputError(c.data.ipd + " has no age column; set data.reference_age");
      r.age = c.data.reference_age;
    }
  }
  if (use_external && !c.data.external.empty()) {
    const auto path = c.resolve(c.data.external);
    auto in = open_input(path);
    d.external = read_external(in, path.string());
  }
  if (use_lifetable && !c.data.lifetable.empty()) {
    const auto path = c.resolve(c.data.lifetable);
    auto in = open_input(path);
    d.backhaz = std::make_shared<LifeTable>(read_lifetable(in, path.string(), c.data.male_fraction));
  }
  d.reference_age = c.data.reference_age;
  d.validate();
  return d;
}

inline SurvivalModelSpec build_spec(const ModelConfig& m, const Dataset& d) {
  std::vector<double> events;
  for (const auto& r : d.ipd)
    if (r.event) events.push_back(r.time);
  auto spec = make_spec(make_knots(events, m.df, m.extra_knots), m.effect_mode, m.relative_survival, d.backhaz);
  spec.priors.log_eta = m.log_eta;
  spec.priors.sigma = m.sigma;
  spec.priors.beta_sd = m.beta_sd;
  spec.priors.tau = m.tau;
  spec.validate();
  return spec;
}

/// One row of the expanded case-study grid.
struct CaseStudyRun {
  std::string tag;
  EffectMode effect_mode = EffectMode::none;
  std::string dataset;
  bool relative_survival = false;
  bool external = false;
  std::optional<WaningSpec> waning;  ///< a prediction setting; the fit is shared with the unwaned row
};

inline std::vector<CaseStudyRun> expand_case_study(const CaseStudyConfig& cs) {
  std::vector<CaseStudyRun> out;
  auto add = [&](EffectMode m, const std::string& ds, std::optional<WaningSpec> w) {
    CaseStudyRun r;
    r.effect_mode = m;
    r.dataset = ds;
    r.relative_survival = ds != "trial";
    r.external = ds == "trial+poprates+registry";
    r.waning = w;
    r.tag = to_string(m) + "/" + ds;
    if (w) {
      std::ostringstream os;
      os << "/waning" << w->t_max;
      r.tag += os.str();
    }
    out.push_back(r);
  };
  for (auto m : cs.effect_modes)
    for (const auto& ds : cs.datasets) add(m, ds, std::nullopt);
  for (double end : cs.waning_ends)
    for (const auto& ds : cs.datasets) add(EffectMode::proportional_hazards, ds, WaningSpec{cs.waning_start, end});
  return out;
}

// ---------------------------------------------------------------------------
// Fit artifacts

namespace artifact_detail {

inline json spec_to_json(const SurvivalModelSpec& s) {
  using config_detail::to_json;
  json lt = nullptr;
  if (s.backhaz) lt = {{"ages", s.backhaz->ages()}, {"rates", s.backhaz->rates()}};
  return {{"degree", s.basis.degree()},
          {"interior_knots", s.basis.interior_knots()},
          {"lower", s.basis.lower()},
          {"upper", s.basis.upper()},
          {"effect_mode", to_string(s.effect_mode)},
          {"covariates", s.covariate_names},
          {"relative_survival", s.relative_survival},
          {"priors",
           {{"log_eta", to_json(s.priors.log_eta)},
            {"sigma", to_json(s.priors.sigma)},
            {"beta_sd", s.priors.beta_sd},
            {"tau", to_json(s.priors.tau)},
            {"walk_locations", s.priors.walk_locations},
            {"walk_weights", s.priors.walk_weights}}},
          {"lifetable", lt}};
}

inline SurvivalModelSpec spec_from_json(const json& j) {
  SurvivalModelSpec s;
  s.basis = MSplineBasis(j.at("degree").get<int>(), j.at("interior_knots").get<std::vector<double>>(),
                         j.at("lower").get<double>(), j.at("upper").get<double>());
  s.effect_mode = parse_effect_mode(j.at("effect_mode").get<std::string>());
  s.covariate_names = j.at("covariates").get<std::vector<std::string>>();
  s.relative_survival = j.at("relative_survival").get<bool>();
  const auto& p = j.at("priors");
  s.priors.log_eta = {p.at("log_eta").at("mean").get<double>(), p.at("log_eta").at("sd").get<double>()};
  s.priors.sigma = {p.at("sigma").at("shape").get<double>(), p.at("sigma").at("rate").get<double>()};
  s.priors.beta_sd = p.at("beta_sd").get<double>();
  s.priors.tau = {p.at("tau").at("shape").get<double>(), p.at("tau").at("rate").get<double>()};
  s.priors.walk_locations = p.at("walk_locations").get<std::vector<double>>();
  s.priors.walk_weights = p.at("walk_weights").get<std::vector<double>>();
  if (!j.at("lifetable").is_null())
    s.backhaz = std::make_shared<LifeTable>(j.at("lifetable").at("ages").get<std::vector<double>>(),
                                            j.at("lifetable").at("rates").get<std::vector<double>>());
  s.validate();
  return s;
}

}  // namespace artifact_detail

inline std::string spec_hash(const SurvivalModelSpec& s) {
  return hex64(fnv1a64(artifact_detail::spec_to_json(s).dump()));
}

/// Self-contained fit: model specs, posterior draws and diagnostics. Data
/// used by the fit are not stored.
inline json fit_to_json(const ModelFit& fit) {
  json comps = json::array();
  for (const auto& c : fit.components) {
    const auto& s = c.sample;
    json draws = json::array();
    for (std::size_t i = 0; i < s.n_draws(); ++i) {
      const auto d = s.draw(i);
      draws.push_back(std::vector<double>(d.begin(), d.end()));
    }
    json diag = json::array();
    for (std::size_t k = 0; k < s.diagnostics.size(); ++k)
      diag.push_back({{"parameter", k < s.names.size() ? s.names[k] : std::to_string(k)},
                      {"rhat", s.diagnostics[k].rhat},
                      {"ess_bulk", s.diagnostics[k].ess_bulk},
                      {"ess_tail", s.diagnostics[k].ess_tail}});
    comps.push_back({{"arms", c.arms},
                     {"spec", artifact_detail::spec_to_json(c.spec)},
                     {"spec_hash", spec_hash(c.spec)},
                     {"method", to_string(s.method)},
                     {"names", s.names},
                     {"chain_ids", s.chain_ids},
                     {"draws", draws},
                     {"divergences", s.divergences},
                     {"step_sizes", s.step_sizes},
                     {"diagnostics", diag},
                     {"warnings", s.warnings}});
  }
  return {{"schema_version", kSchemaVersion},
          {"kind", "survx-fit"},
          {"effect_mode", to_string(fit.effect_mode)},
          {"components", comps}};
}

inline ModelFit fit_from_json(const json& j, const std::string& source = "fit") {
  try {
    if (j.at("kind").get<std::string>() != "survx-fit") throw InputError(source + ": not a fit artifact");
    if (j.at("schema_version").get<int>() != kSchemaVersion)
      throw InputError(source + ": unsupported schema_version");
    ModelFit fit;
    fit.effect_mode = parse_effect_mode(j.at("effect_mode").get<std::string>());
    for (const auto& cj : j.at("components")) {
      ComponentFit c;
      c.arms = cj.at("arms").get<std::vector<int>>();
      c.spec = artifact_detail::spec_from_json(cj.at("spec"));
      if (spec_hash(c.spec) != cj.at("spec_hash").get<std::string>())
        throw InputError(source + ": model spec does not match its recorded hash");
      auto& s = c.sample;
      s.method = parse_method(cj.at("method").get<std::string>());
      s.names = cj.at("names").get<std::vector<std::string>>();
      s.n_params = ParameterLayout(c.spec).size();
      for (const auto& d : cj.at("draws")) {
        const auto v = d.get<std::vector<double>>();
        if (v.size() != s.n_params) throw InputError(source + ": draw has the wrong dimension");
        s.draws.insert(s.draws.end(), v.begin(), v.end());
      }
      s.chain_ids = cj.at("chain_ids").get<std::vector<int>>();
      s.divergences = cj.at("divergences").get<std::size_t>();
      s.step_sizes = cj.at("step_sizes").get<std::vector<double>>();
      for (const auto& d : cj.at("diagnostics"))
        s.diagnostics.push_back({d.at("rhat").get<double>(), d.at("ess_bulk").get<double>(),
                                 d.at("ess_tail").get<double>()});
      s.warnings = cj.at("warnings").get<std::vector<std::string>>();
      if (s.n_draws() == 0) throw InputError(source + ": fit has no draws");
      fit.components.push_back(std::move(c));
    }
    if (fit.components.empty()) throw InputError(source + ": fit has no components");
    return fit;
  } catch (const json::exception& e) {
    throw InputError(source + ": malformed fit artifact: " + e.what());
  } catch (const ConfigError& e) {
    throw InputError(source + ": " + e.what());
  }
}

inline ModelFit load_fit(const std::filesystem::path& path) {
  auto in = open_input(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": invalid JSON: " + e.what());
  }
  return fit_from_json(j, path.string());
}

}  // namespace survx
