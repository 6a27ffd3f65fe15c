#pragma once

// Replication study: simulate trials and external cohorts, fit a grid of
// models, and summarise estimand performance with Monte Carlo standard
// errors.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "survx/csv.hpp"
#include "survx/datagen.hpp"
#include "survx/fit.hpp"
#include "survx/hash.hpp"
#include "survx/predict.hpp"
#include "survx/stats.hpp"

namespace survx {

// ---------------------------------------------------------------------------
// True estimands

struct TruthEstimate {
  double value = 0.0;       ///< Monte Carlo mean
  double mc_se = 0.0;       ///< its standard error
  double quadrature = 0.0;  ///< deterministic value by quadrature over time and age
};

struct Truth {
  Scenario scenario = Scenario::constant;
  double horizon = 40.0;
  long n = 0;
  TruthEstimate control, active, difference;
};

/// Marginal RMST of both arms from a large uncensored sample with common
/// random numbers across arms, cross-checked by quadrature. Deterministic for
/// a given seed whatever the thread count.
inline Truth true_estimands(const DgmConfig& cfg, double horizon, long n, std::uint64_t seed,
                            unsigned threads = 1) {
  cfg.validate();
  if (n < 2) throw ConfigError("truth sample size must be at least 2");
  if (!(horizon > 0)) throw ConfigError("RMST horizon must be positive");
  const DiseaseCumulativeHazard H0(cfg, 0), H1(cfg, 1);
  constexpr long chunk = 1 << 16;
  const auto n_chunks = static_cast<std::size_t>((n + chunk - 1) / chunk);
  struct Sums {
    double s0 = 0, q0 = 0, s1 = 0, q1 = 0, sd = 0, qd = 0;
  };
  std::vector<Sums> sums(n_chunks);
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    Rng rng = make_rng(seed, c, 0x7ee7);
    NormalSampler normal;
    const long m = std::min<long>(chunk, n - static_cast<long>(c) * chunk);
    Sums s;
    for (long i = 0; i < m; ++i) {
      const double age = cfg.age_mean + cfg.age_sd * normal(rng);
      const double e = -std::log(uniform_open(rng));
      const double r0 = std::min(horizon, invert_cumulative_hazard(H0, cfg, age, e));
      const double r1 = std::min(horizon, invert_cumulative_hazard(H1, cfg, age, e));
      s.s0 += r0;
      s.q0 += r0 * r0;
      s.s1 += r1;
      s.q1 += r1 * r1;
      s.sd += r1 - r0;
      s.qd += (r1 - r0) * (r1 - r0);
    }
    sums[c] = s;
  });
  Sums tot;
  for (const auto& s : sums) {
    tot.s0 += s.s0, tot.q0 += s.q0, tot.s1 += s.s1, tot.q1 += s.q1, tot.sd += s.sd, tot.qd += s.qd;
  }
  const double N = static_cast<double>(n);
  auto est = [&](double s, double q) {
    TruthEstimate t;
    t.value = s / N;
    t.mc_se = std::sqrt(std::max(0.0, (q - s * s / N) / (N - 1)) / N);
    return t;
  };
  Truth out;
  out.scenario = cfg.scenario;
  out.horizon = horizon;
  out.n = n;
  out.control = est(tot.s0, tot.q0);
  out.active = est(tot.s1, tot.q1);
  out.difference = est(tot.sd, tot.qd);
  out.control.quadrature = marginal_rmst_truth(cfg, 0, horizon);
  out.active.quadrature = marginal_rmst_truth(cfg, 1, horizon);
  out.difference.quadrature = out.active.quadrature - out.control.quadrature;
  return out;
}

// ---------------------------------------------------------------------------
// Study configuration

enum class Estimand { rmst_control, rmst_difference };

inline std::string to_string(Estimand e) {
  return e == Estimand::rmst_control ? "rmst_control" : "rmst_difference";
}

inline Estimand parse_estimand(std::string_view s) {
  if (s == "rmst_control") return Estimand::rmst_control;
  if (s == "rmst_difference") return Estimand::rmst_difference;
  throw InputError("unknown estimand '" + std::string(s) + "'");
}

/// One model fitted to every replication. Models without a treatment effect
/// are fitted to the control arm only and target control-arm RMST; the
/// others use both arms and target the RMST difference.
struct StudyCell {
  std::string tag;
  EffectMode effect_mode = EffectMode::none;
  bool external = true;
  double bias_v = 0.0;  ///< log relative bias of the external cohort's hazard
  int df = 10;
  std::vector<double> extra_knots;
  bool relative_survival = true;
  std::optional<WaningSpec> waning;
  NormalPrior log_eta{0.0, 20.0};
  GammaPrior sigma{2.0, 1.0};
  double beta_sd = 2.5;
  GammaPrior tau{2.0, 3.0};

  Estimand estimand() const {
    return effect_mode == EffectMode::none ? Estimand::rmst_control : Estimand::rmst_difference;
  }

  void validate() const {
    if (tag.empty()) throw ConfigError("study cell needs a model_tag");
    if (tag.find_first_of(",\"\n") != std::string::npos)
      throw ConfigError("model_tag '" + tag + "' may not contain commas, quotes or newlines");
    if (df < 1) throw ConfigError("study cell '" + tag + "': df must be positive");
    if (waning) {
      waning->validate();
      if (effect_mode == EffectMode::separate_arms || effect_mode == EffectMode::none)
        throw ConfigError("study cell '" + tag + "': waning needs a PH or non-PH model");
    }
  }
};

struct StudyConfig {
  DgmConfig dgm;
  int n_reps = 1000;
  std::uint64_t seed = 1;
  double horizon = 40.0;
  std::vector<StudyCell> cells;
  FitSettings fit;
  double failure_threshold = 0.02;
  int nodes_per_year = 64;
  unsigned threads = 1;

  void validate() const {
    dgm.validate();
    if (n_reps < 2) throw ConfigError("n_reps must be at least 2");
    if (cells.empty()) throw ConfigError("study has no model cells");
    if (!(horizon > 0)) throw ConfigError("horizon must be positive");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      cells[i].validate();
      for (std::size_t j = 0; j < i; ++j)
        if (cells[j].tag == cells[i].tag) throw ConfigError("duplicate model_tag '" + cells[i].tag + "'");
    }
  }
};

/// Replication data shared by every cell of one replication.
struct Replication {
  std::vector<IpdRecord> trial;
  std::map<double, std::vector<ExternalRecord>> external;  ///< by bias_v
};

/// Trial for replication `rep`; external cohorts for each bias level share a
/// random stream so bias levels are compared on common random numbers.
inline Replication simulate_replication(const StudyConfig& cfg, int rep) {
  Replication r;
  r.trial = simulate_trial(cfg.dgm, stream_seed(cfg.seed, static_cast<std::uint64_t>(rep), 0x7121a1)).records;
  for (const auto& cell : cfg.cells) {
    if (!cell.external || r.external.count(cell.bias_v)) continue;
    DgmConfig d = cfg.dgm;
    d.bias_v = cell.bias_v;
    Rng rng = make_rng(cfg.seed, static_cast<std::uint64_t>(rep), 0xe8e7);
    r.external[cell.bias_v] = simulate_external(d, rng);
  }
  return r;
}

inline SurvivalModelSpec cell_spec(const StudyCell& cell, const Dataset& data) {
  std::vector<double> events;
  for (const auto& rec : data.ipd)
    if (rec.event) events.push_back(rec.time);
  auto spec = make_spec(make_knots(events, cell.df, cell.extra_knots), cell.effect_mode,
                        cell.relative_survival, data.backhaz);
  spec.priors.log_eta = cell.log_eta;
  spec.priors.sigma = cell.sigma;
  spec.priors.beta_sd = cell.beta_sd;
  spec.priors.tau = cell.tau;
  return spec;
}

// ---------------------------------------------------------------------------
// Per-replication results

struct RepResult {
  int scenario = 1;
  std::string model_tag;
  double bias_v = 0.0;
  int rep = 0;
  Estimand estimand = Estimand::rmst_control;
  double estimate = std::nan("");  ///< posterior median; NaN marks a failed fit
  double post_sd = std::nan("");
  double lo95 = std::nan("");
  double hi95 = std::nan("");

  bool failed() const { return !std::isfinite(estimate); }
};

inline const std::vector<std::string>& rep_csv_header() {
  static const std::vector<std::string> h{"scenario", "model_tag", "bias_v", "rep", "estimand",
                                          "estimate", "post_sd", "lo95", "hi95"};
  return h;
}

inline std::string rep_csv_row(const RepResult& r) {
  std::ostringstream os;
  os << r.scenario << ',' << r.model_tag << ',' << csv::format(r.bias_v) << ',' << r.rep << ','
     << to_string(r.estimand) << ',' << csv::format(r.estimate) << ',' << csv::format(r.post_sd)
     << ',' << csv::format(r.lo95) << ',' << csv::format(r.hi95);
  return os.str();
}

inline void write_rep_csv(std::ostream& os, const std::vector<RepResult>& rows) {
  const auto& h = rep_csv_header();
  for (std::size_t j = 0; j < h.size(); ++j) os << (j ? "," : "") << h[j];
  os << '\n';
  for (const auto& r : rows) os << rep_csv_row(r) << '\n';
}

inline std::vector<RepResult> read_rep_csv(std::istream& in, const std::string& source) {
  const auto t = csv::read(in, source);
  csv::require_header(t, rep_csv_header());
  std::vector<RepResult> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    RepResult r;
    r.scenario = static_cast<int>(t.integer(i, "scenario"));
    r.model_tag = t.rows[i][t.column("model_tag")];
    r.bias_v = t.number(i, "bias_v");
    r.rep = static_cast<int>(t.integer(i, "rep"));
    r.estimand = parse_estimand(t.rows[i][t.column("estimand")]);
    r.estimate = t.number(i, "estimate");
    r.post_sd = t.number(i, "post_sd");
    r.lo95 = t.number(i, "lo95");
    r.hi95 = t.number(i, "hi95");
    out.push_back(std::move(r));
  }
  return out;
}

/// Fits one cell to one replication and summarises the estimand.
inline RepResult run_cell(const StudyConfig& cfg, const StudyCell& cell, const Replication& data,
                          int rep) {
  RepResult out;
  out.scenario = static_cast<int>(cfg.dgm.scenario);
  out.model_tag = cell.tag;
  out.bias_v = cell.bias_v;
  out.rep = rep;
  out.estimand = cell.estimand();

  Dataset d;
  d.backhaz = gompertz_lifetable(cfg.dgm);
  for (const auto& r : data.trial)
    if (cell.estimand() == Estimand::rmst_difference || r.arm == 0) d.ipd.push_back(r);
  if (cell.external) d.external = data.external.at(cell.bias_v);

  FitSettings fs = cfg.fit;
  fs.seed = stream_seed(cfg.seed, static_cast<std::uint64_t>(rep), fnv1a64(cell.tag));
  fs.nuts.threads = 1;
  const ModelFit fit = fit_model(cell_spec(cell, d), d, fs);

  Population pop;
  for (const auto& r : data.trial) pop.ages.push_back(r.age);
  PredictOptions po;
  po.horizon = cfg.horizon;
  po.nodes_per_year = cfg.nodes_per_year;
  const auto draws = cell.estimand() == Estimand::rmst_control
                         ? rmst_draws(fit, 0, pop, po)
                         : rmst_difference_draws(fit, pop, po, cell.waning);
  const Summary s = summarise(draws);
  out.estimate = s.median;
  out.post_sd = s.sd;
  out.lo95 = s.lower;
  out.hi95 = s.upper;
  return out;
}

// ---------------------------------------------------------------------------
// Performance summary

struct CellPerformance {
  int scenario = 1;
  std::string model_tag;
  double bias_v = 0.0;
  Estimand estimand = Estimand::rmst_control;
  double truth = 0.0;
  int n_reps = 0;    ///< successful replications
  int n_failed = 0;
  double failure_rate = 0.0;
  bool flagged = false;  ///< failure rate above the configured threshold
  double bias = 0.0, bias_mcse = 0.0;
  double mse = 0.0, mse_mcse = 0.0;
  double model_sd = 0.0, model_sd_mcse = 0.0;
  double coverage = 0.0, coverage_mcse = 0.0;
};

/// Bias, MSE, mean posterior SD and CrI coverage over the successful
/// replications of one cell, each with its Monte Carlo standard error.
inline CellPerformance performance(const std::vector<RepResult>& rows, double truth,
                                   double failure_threshold = 0.02) {
  CellPerformance p;
  if (rows.empty()) throw InputError("performance summary of an empty cell");
  p.scenario = rows.front().scenario;
  p.model_tag = rows.front().model_tag;
  p.bias_v = rows.front().bias_v;
  p.estimand = rows.front().estimand;
  p.truth = truth;
  std::vector<double> err, sq, sds, cover;
  for (const auto& r : rows) {
    if (r.failed()) {
      ++p.n_failed;
      continue;
    }
    err.push_back(r.estimate - truth);
    sq.push_back((r.estimate - truth) * (r.estimate - truth));
    sds.push_back(r.post_sd);
    cover.push_back(r.lo95 <= truth && truth <= r.hi95 ? 1.0 : 0.0);
  }
  p.n_reps = static_cast<int>(err.size());
  p.failure_rate = static_cast<double>(p.n_failed) / static_cast<double>(rows.size());
  p.flagged = p.failure_rate > failure_threshold;
  if (p.n_reps == 0) {
    p.bias = p.mse = p.model_sd = p.coverage = std::nan("");
    p.bias_mcse = p.mse_mcse = p.model_sd_mcse = p.coverage_mcse = std::nan("");
    return p;
  }
  const double n = p.n_reps;
  auto se = [&](const std::vector<double>& v) { return v.size() > 1 ? sd(v) / std::sqrt(n) : 0.0; };
  p.bias = mean(err);
  p.bias_mcse = se(err);
  p.mse = mean(sq);
  p.mse_mcse = se(sq);
  p.model_sd = mean(sds);
  p.model_sd_mcse = se(sds);
  p.coverage = mean(cover);
  p.coverage_mcse = std::sqrt(p.coverage * (1 - p.coverage) / n);
  return p;
}

inline void write_summary_csv(std::ostream& os, const std::vector<CellPerformance>& cells) {
  os << "scenario,model_tag,bias_v,estimand,true_value,bias,bias_mcse,mse,mse_mcse,model_sd,"
        "model_sd_mcse,coverage,coverage_mcse,n_reps,n_failed,failure_rate,flagged\n";
  for (const auto& c : cells)
    os << c.scenario << ',' << c.model_tag << ',' << csv::format(c.bias_v) << ',' << to_string(c.estimand)
       << ',' << csv::format(c.truth) << ',' << csv::format(c.bias) << ',' << csv::format(c.bias_mcse)
       << ',' << csv::format(c.mse) << ',' << csv::format(c.mse_mcse) << ',' << csv::format(c.model_sd)
       << ',' << csv::format(c.model_sd_mcse) << ',' << csv::format(c.coverage) << ','
       << csv::format(c.coverage_mcse) << ',' << c.n_reps << ',' << c.n_failed << ','
       << csv::format(c.failure_rate) << ',' << (c.flagged ? 1 : 0) << '\n';
}

/// Plain-text table in the layout of the published performance tables.
inline std::string format_summary(const std::vector<CellPerformance>& cells) {
  std::ostringstream os;
  os << std::fixed;
  os.precision(2);
  os << "model_tag                      bias_v  true   bias (MCSE)      MSE (MCSE)       model SD (MCSE)  coverage (MCSE)  failed\n";
  for (const auto& c : cells) {
    std::string tag = c.model_tag;
    tag.resize(std::max<std::size_t>(tag.size(), 30), ' ');
    auto pair = [&](double v, double s) {
      std::ostringstream p;
      p << std::fixed;
      p.precision(2);
      p << v << " (";
      p.precision(3);
      p << s << ")";
      std::string out = p.str();
      out.resize(std::max<std::size_t>(out.size(), 16), ' ');
      return out;
    };
    os << tag << ' ';
    os.width(6);
    os << c.bias_v << "  ";
    os.width(5);
    os << c.truth << "  " << pair(c.bias, c.bias_mcse) << ' ' << pair(c.mse, c.mse_mcse) << ' '
       << pair(c.model_sd, c.model_sd_mcse) << ' ' << pair(c.coverage, c.coverage_mcse) << ' '
       << c.n_failed << (c.flagged ? " FLAGGED" : "") << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Study driver

struct StudyResult {
  Truth truth;
  std::vector<RepResult> reps;  ///< ordered by cell, then replication
  std::vector<CellPerformance> performance;
  std::vector<std::string> failures;  ///< "tag rep: message"
};

struct StudyOutput {
  std::filesystem::path rep_csv;      ///< incremental per-replication results; empty = none
  std::filesystem::path summary_csv;  ///< empty = none
  std::function<void(const RepResult&)> progress;
};

inline double cell_truth(const StudyCell& cell, const Truth& truth) {
  return cell.estimand() == Estimand::rmst_control ? truth.control.quadrature : truth.difference.quadrature;
}

/// Runs every (cell, replication) job not already present in the per-rep CSV
/// and appends each result as it completes. Failed fits are recorded with
/// NaN estimates and excluded from the summary. The returned rows and
/// summary are ordered by cell then replication regardless of scheduling.
inline StudyResult run_study(const StudyConfig& cfg, const StudyOutput& output = {}) {
  cfg.validate();
  StudyResult result;
  result.truth.scenario = cfg.dgm.scenario;
  result.truth.horizon = cfg.horizon;
  result.truth.control.quadrature = marginal_rmst_truth(cfg.dgm, 0, cfg.horizon);
  result.truth.active.quadrature = marginal_rmst_truth(cfg.dgm, 1, cfg.horizon);
  result.truth.difference.quadrature = result.truth.active.quadrature - result.truth.control.quadrature;

  const int scenario = static_cast<int>(cfg.dgm.scenario);
  using Key = std::tuple<std::string, int>;
  std::map<Key, RepResult> done;
  std::vector<RepResult> other_scenarios;
  if (!output.rep_csv.empty() && std::filesystem::exists(output.rep_csv)) {
    std::ifstream in(output.rep_csv);
    for (auto& r : read_rep_csv(in, output.rep_csv.string()))
      if (r.scenario == scenario) done[{r.model_tag, r.rep}] = r;
      else other_scenarios.push_back(r);
  }

  std::ofstream append;
  if (!output.rep_csv.empty()) {
    const bool fresh = !std::filesystem::exists(output.rep_csv) || std::filesystem::file_size(output.rep_csv) == 0;
    if (output.rep_csv.has_parent_path()) std::filesystem::create_directories(output.rep_csv.parent_path());
    append.open(output.rep_csv, std::ios::app);
    if (!append) throw InputError("cannot write " + output.rep_csv.string());
    if (fresh) write_rep_csv(append, {});
  }

  std::vector<int> pending_reps;
  for (int rep = 0; rep < cfg.n_reps; ++rep) {
    bool all = true;
    for (const auto& c : cfg.cells) all = all && done.count({c.tag, rep});
    if (!all) pending_reps.push_back(rep);
  }

  std::mutex mu;
  std::vector<std::vector<RepResult>> fresh_rows(pending_reps.size());
  std::vector<std::vector<std::string>> messages(pending_reps.size());
  parallel_for(pending_reps.size(), std::max(1u, cfg.threads), [&](std::size_t k) {
    const int rep = pending_reps[k];
    const Replication data = simulate_replication(cfg, rep);
    for (const auto& cell : cfg.cells) {
      {
        std::lock_guard<std::mutex> lock(mu);
        if (done.count({cell.tag, rep})) continue;
      }
      RepResult r;
      try {
        r = run_cell(cfg, cell, data, rep);
      } catch (const Error& e) {
        r.scenario = scenario;
        r.model_tag = cell.tag;
        r.bias_v = cell.bias_v;
        r.rep = rep;
        r.estimand = cell.estimand();
        messages[k].push_back(cell.tag + " rep " + std::to_string(rep) + ": " + e.what());
      }
      fresh_rows[k].push_back(r);
      std::lock_guard<std::mutex> lock(mu);
      if (append) {
        append << rep_csv_row(r) << '\n';
        append.flush();
      }
      if (output.progress) output.progress(r);
    }
  });
  for (std::size_t k = 0; k < pending_reps.size(); ++k) {
    for (auto& r : fresh_rows[k]) done[{r.model_tag, r.rep}] = r;
    for (auto& m : messages[k]) result.failures.push_back(m);
  }

  for (const auto& cell : cfg.cells) {
    std::vector<RepResult> rows;
    for (int rep = 0; rep < cfg.n_reps; ++rep) rows.push_back(done.at({cell.tag, rep}));
    result.performance.push_back(performance(rows, cell_truth(cell, result.truth), cfg.failure_threshold));
    result.reps.insert(result.reps.end(), rows.begin(), rows.end());
  }

  if (append) {
    // Rewrite in canonical order now that every job is present.
    append.close();
    std::vector<RepResult> all = other_scenarios;
    for (const auto& [key, r] : done) all.push_back(r);
    std::sort(all.begin(), all.end(), [](const RepResult& a, const RepResult& b) {
      return std::tie(a.scenario, a.model_tag, a.rep) < std::tie(b.scenario, b.model_tag, b.rep);
    });
    std::ofstream out(output.rep_csv, std::ios::trunc);
    write_rep_csv(out, all);
  }
  if (!output.summary_csv.empty()) {
    if (output.summary_csv.has_parent_path()) std::filesystem::create_directories(output.summary_csv.parent_path());
    std::ofstream out(output.summary_csv);
    if (!out) throw InputError("cannot write " + output.summary_csv.string());
    write_summary_csv(out, result.performance);
  }
  return result;
}

}  // namespace survx
