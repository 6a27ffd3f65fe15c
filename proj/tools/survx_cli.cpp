// survx command-line interface: fit, predict, simulate, simstudy, truth.
//
// Exit codes: 0 success, 1 numerical or fit failure, 2 input or
// configuration error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "survx/dataio.hpp"

namespace fs = std::filesystem;
using namespace survx;

namespace {

#ifndef SURVX_VERSION
#define SURVX_VERSION "dev"
#endif

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string method;
  unsigned threads = 0;
};

fs::path default_out_dir() {
  if (const char* env = std::getenv("SURVX_OUT_DIR"); env && *env) return env;
  return "survx-out";
}

RunConfig resolve_config(const Common& o) {
  RunConfig c;
  if (!o.config.empty()) {
    c = load_config(o.config);
  }
  if (o.seed) c.seed = *o.seed;
  if (!o.method.empty()) c.fit.method = parse_method(o.method);
  c.fit.nuts.threads = o.threads;
  return c;
}

unsigned thread_count(const Common& o) { return o.threads ? o.threads : default_thread_count(); }

fs::path out_dir(const Common& o) {
  const fs::path p = o.out_dir.empty() ? default_out_dir() : fs::path(o.out_dir);
  fs::create_directories(p);
  return p;
}

std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

/// Written beside every run's outputs; contains no timestamps so identical
/// runs give identical manifests.
void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& c,
                    const std::vector<fs::path>& outputs) {
  json files = json::array();
  for (const auto& p : outputs) files.push_back({{"file", p.filename().string()}, {"fnv1a64", file_hash(p)}});
  const json manifest = {{"command", command},
                         {"survx_version", SURVX_VERSION},
                         {"compiler", __VERSION__},
                         {"config_hash", hex64(fnv1a64(config_to_json(c).dump()))},
                         {"seed", c.seed},
                         {"method", to_string(c.fit.method)},
                         {"config", config_to_json(c)},
                         {"outputs", files}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

std::string fmt_summary(const Summary& s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << s.median << " (" << s.lower << ", " << s.upper << ")";
  return os.str();
}

Population population_of(const Dataset& d) {
  Population pop;
  for (const auto& r : d.ipd) pop.ages.push_back(r.age);
  return pop;
}

json diagnostics_json(const ModelFit& fit, const std::optional<LooResult>& loo) {
  json comps = json::array();
  for (const auto& c : fit.components) {
    json params = json::array();
    for (std::size_t k = 0; k < c.sample.diagnostics.size(); ++k)
      params.push_back({{"parameter", c.sample.names.at(k)},
                        {"rhat", c.sample.diagnostics[k].rhat},
                        {"ess_bulk", c.sample.diagnostics[k].ess_bulk},
                        {"ess_tail", c.sample.diagnostics[k].ess_tail}});
    comps.push_back({{"arms", c.arms},
                     {"method", to_string(c.sample.method)},
                     {"draws", c.sample.n_draws()},
                     {"divergences", c.sample.divergences},
                     {"max_rhat", c.sample.max_rhat()},
                     {"parameters", params},
                     {"warnings", c.sample.warnings}});
  }
  json j = {{"components", comps}};
  if (loo)
    j["loo"] = {{"looic", loo->looic}, {"se_looic", loo->se_looic}, {"p_loo", loo->p_loo},
                {"n_high_k", loo->n_high_k}, {"warning", loo->warning}};
  return j;
}

ModelFit fit_one(const SurvivalModelSpec& spec, const Dataset& d, const RunConfig& c) {
  FitSettings fs = c.fit;
  fs.seed = c.seed;
  return fit_model(spec, d, fs);
}

int cmd_fit_single(const Common& o, const RunConfig& c) {
  const Dataset d = load_dataset(c);
  const auto spec = build_spec(c.model, d);
  const ModelFit fit = fit_one(spec, d, c);
  const fs::path dir = out_dir(o);
  std::optional<LooResult> loo;
  try {
    loo = loo_ic(fit, thread_count(o));
  } catch (const Error& e) {
    std::cerr << "warning: LOO not computed: " << e.what() << '\n';
  }
  const auto fit_path = dir / "fit.json";
  std::ofstream(fit_path) << fit_to_json(fit).dump() << '\n';
  const auto diag_path = dir / "diagnostics.json";
  std::ofstream(diag_path) << diagnostics_json(fit, loo).dump(2) << '\n';

  const Population pop = population_of(d);
  PredictOptions po;
  po.horizon = c.predict.horizon;
  po.nodes_per_year = c.predict.nodes_per_year;
  po.threads = thread_count(o);
  PredictOptions p5 = po;
  p5.horizon = std::min(5.0, c.predict.horizon);
  std::cout << "model: " << to_string(c.model.effect_mode) << ", df " << c.model.df << ", "
            << spec.n_basis() << " basis functions, knots [" << spec.basis.lower();
  for (double k : spec.basis.interior_knots()) std::cout << ", " << k;
  std::cout << ", " << spec.basis.upper() << "]\n";
  std::cout << "method: " << to_string(c.fit.method) << "\n";
  const bool two_arm = c.model.effect_mode != EffectMode::none;
  for (int arm = 0; arm <= (two_arm ? 1 : 0); ++arm) {
    std::cout << "arm " << arm << " RMST(" << p5.horizon << "y) = " << fmt_summary(summarise(rmst_draws(fit, arm, pop, p5)))
              << "  RMST(" << po.horizon << "y) = " << fmt_summary(summarise(rmst_draws(fit, arm, pop, po))) << '\n';
  }
  if (two_arm)
    std::cout << "RMSTD(" << po.horizon << "y) = "
              << fmt_summary(summarise(rmst_difference_draws(fit, pop, po, c.predict.waning))) << '\n';
  if (loo) {
    std::cout << std::fixed << std::setprecision(1) << "LOOIC = " << loo->looic << " (SE " << loo->se_looic
              << "), p_loo = " << loo->p_loo << '\n';
    if (loo->warning) std::cerr << "warning: " << loo->n_high_k << " observations have Pareto k > 0.7\n";
  }
  for (const auto& w : fit.warnings()) std::cerr << "warning: " << w << '\n';
  write_manifest(dir, "fit", c, {fit_path, diag_path});
  return 0;
}

int cmd_fit_case_study(const Common& o, const RunConfig& c) {
  const auto runs = expand_case_study(*c.case_study);
  const fs::path dir = out_dir(o);
  std::map<std::string, ModelFit> fits;
  std::map<std::string, Dataset> data;
  std::vector<fs::path> outputs;
  const auto table_path = dir / "case_study.csv";
  std::ofstream table(table_path);
  table << "model_tag,effect_mode,dataset,waning_start,waning_end,quantity,median,lo95,hi95\n";
  PredictOptions po;
  po.horizon = c.predict.horizon;
  po.nodes_per_year = c.predict.nodes_per_year;
  po.threads = thread_count(o);
  for (const auto& run : runs) {
    if (!data.count(run.dataset)) data[run.dataset] = load_dataset(c, run.external, run.relative_survival);
    const Dataset& d = data.at(run.dataset);
    const std::string fit_key = to_string(run.effect_mode) + "/" + run.dataset;
    if (!fits.count(fit_key)) {
      ModelConfig m = c.model;
      m.effect_mode = run.effect_mode;
      m.relative_survival = run.relative_survival;
      std::cerr << "fitting " << fit_key << '\n';
      fits.emplace(fit_key, fit_one(build_spec(m, d), d, c));
      std::string file = "fit_" + fit_key + ".json";
      std::replace(file.begin(), file.end(), '/', '_');
      std::replace(file.begin(), file.end(), '+', '_');
      std::ofstream(dir / file) << fit_to_json(fits.at(fit_key)).dump() << '\n';
      outputs.push_back(dir / file);
    }
    const ModelFit& fit = fits.at(fit_key);
    const Population pop = population_of(d);
    const Summary control = summarise(rmst_draws(fit, 0, pop, po));
    const Summary diff = summarise(rmst_difference_draws(fit, pop, po, run.waning));
    const std::string ws = run.waning ? csv::format(run.waning->t_min) : "";
    const std::string we = run.waning ? csv::format(run.waning->t_max) : "";
    for (const auto& [q, s] : {std::pair{"rmst_control", control}, std::pair{"rmst_difference", diff}})
      table << run.tag << ',' << to_string(run.effect_mode) << ',' << run.dataset << ',' << ws << ',' << we << ','
            << q << ',' << csv::format(s.median) << ',' << csv::format(s.lower) << ',' << csv::format(s.upper) << '\n';
    std::cout << std::left << std::setw(40) << run.tag << " RMST " << fmt_summary(control) << "   RMSTD "
              << fmt_summary(diff) << '\n';
  }
  table.close();
  outputs.insert(outputs.begin(), table_path);
  write_manifest(dir, "fit", c, outputs);
  return 0;
}

int cmd_fit(const Common& o) {
  if (o.config.empty()) throw InputError("fit needs --config");
  const RunConfig c = resolve_config(o);
  return c.case_study ? cmd_fit_case_study(o, c) : cmd_fit_single(o, c);
}

struct PredictFlags {
  std::string fit;
  std::optional<double> waning_start, waning_end;
  std::optional<double> age;
  bool no_waning = false;
};

int cmd_predict(const Common& o, const PredictFlags& p) {
  RunConfig c = resolve_config(o);
  if (p.fit.empty()) throw InputError("predict needs --fit");
  const ModelFit fit = load_fit(p.fit);
  if (p.no_waning) c.predict.waning.reset();
  if (p.waning_start || p.waning_end) {
    WaningSpec w = c.predict.waning.value_or(WaningSpec{});
    if (p.waning_start) w.t_min = *p.waning_start;
    if (p.waning_end) w.t_max = *p.waning_end;
    c.predict.waning = w;
  }
  RunConfig::predict_waning_check(fit.effect_mode, c.predict.waning, "--waning");

  Population pop;
  if (p.age) pop = Population::single(*p.age);
  else if (!c.data.ipd.empty()) pop = population_of(load_dataset(c, false, false));
  else if (std::isfinite(c.data.reference_age)) pop = Population::single(c.data.reference_age);
  else throw InputError("predict needs --age, or a config with data.ipd or data.reference_age");

  std::vector<double> times;
  for (double t = 0.0; t <= c.predict.horizon + 1e-9; t += c.predict.step) times.push_back(t);
  const bool two_arm = fit.effect_mode != EffectMode::none;
  const std::string tag = to_string(fit.effect_mode) +
                          (c.predict.waning ? "_waning" + csv::format(c.predict.waning->t_min) + "-" +
                                                  csv::format(c.predict.waning->t_max)
                                            : "");
  std::vector<TidyRow> rows;
  for (int arm = 0; arm <= (two_arm ? 1 : 0); ++arm) {
    const auto draws = curve_draws(fit, arm, pop, times, arm == 1 ? c.predict.waning : std::nullopt, thread_count(o));
    const auto s = summarise_rows(draws.survival);
    const auto h = summarise_rows(draws.hazard);
    for (std::size_t k = 0; k < times.size(); ++k) {
      rows.push_back({times[k], "survival", s[k], arm, tag});
      if (times[k] > 0) rows.push_back({times[k], "hazard", h[k], arm, tag});
    }
  }
  PredictOptions po;
  po.horizon = c.predict.horizon;
  po.nodes_per_year = c.predict.nodes_per_year;
  po.threads = thread_count(o);
  std::vector<TidyRow> rmst_rows;
  for (int arm = 0; arm <= (two_arm ? 1 : 0); ++arm)
    rmst_rows.push_back({po.horizon, "rmst", summarise(rmst_draws(fit, arm, pop, po, arm == 1 ? c.predict.waning : std::nullopt)), arm, tag});
  if (two_arm)
    rmst_rows.push_back({po.horizon, "rmst_difference", summarise(rmst_difference_draws(fit, pop, po, c.predict.waning)), 1, tag});

  const fs::path dir = out_dir(o);
  const auto curves = dir / "curves.csv";
  const auto rmst_path = dir / "rmst.csv";
  {
    std::ofstream os(curves);
    write_tidy_csv(os, rows);
    std::ofstream rs(rmst_path);
    write_tidy_csv(rs, rmst_rows);
  }
  for (const auto& r : rmst_rows)
    std::cout << r.quantity << " arm " << r.arm << " (" << r.time << "y): " << fmt_summary(r.summary) << '\n';
  write_manifest(dir, "predict", c, {curves, rmst_path});
  return 0;
}

int cmd_simulate(const Common& o) {
  const RunConfig c = resolve_config(o);
  const auto trial = simulate_trial(c.dgm, c.seed);
  Rng rng = make_rng(c.seed, 0, 0xe8e7);
  const auto external = simulate_external(c.dgm, rng);
  const fs::path dir = out_dir(o);
  const auto ipd = dir / "ipd.csv", ext = dir / "external.csv", lt = dir / "lifetable.csv";
  write_file(ipd, [](std::ostream& os, const auto& r) { write_ipd(os, r); }, trial.records);
  write_file(ext, [](std::ostream& os, const auto& r) { write_external(os, r); }, external);
  write_file(lt, [](std::ostream& os, const auto& t) { write_lifetable(os, *t); }, gompertz_lifetable(c.dgm));
  if (trial.capped) std::cerr << "warning: " << trial.capped << " event times exceeded " << c.dgm.max_time << " years\n";
  std::cout << "wrote " << trial.records.size() << " trial records and " << external.size() << " external rows to "
            << dir.string() << '\n';
  write_manifest(dir, "simulate", c, {ipd, ext, lt});
  return 0;
}

int cmd_simstudy(const Common& o, std::optional<int> reps) {
  RunConfig c = resolve_config(o);
  if (!c.study) throw InputError("simstudy needs a config with a 'study' section");
  if (reps) c.study->n_reps = *reps;
  StudyConfig s = c.study_config();
  s.threads = thread_count(o);
  s.fit.nuts.threads = 1;
  const fs::path dir = out_dir(o);
  StudyOutput out;
  out.rep_csv = dir / "simstudy_reps.csv";
  out.summary_csv = dir / "simstudy_summary.csv";
  std::size_t done = 0;
  const std::size_t total = static_cast<std::size_t>(s.n_reps) * s.cells.size();
  out.progress = [&](const RepResult& r) {
    ++done;
    std::cerr << "\r[" << done << "] " << r.model_tag << " rep " << r.rep << (r.failed() ? " FAILED" : "") << "      "
              << std::flush;
  };
  const auto result = run_study(s, out);
  if (done) std::cerr << '\n';
  std::cout << "scenario " << static_cast<int>(s.dgm.scenario) << ", " << s.n_reps << " replications ("
            << total << " jobs)\n"
            << std::fixed << std::setprecision(3) << "true control RMST " << result.truth.control.quadrature
            << ", true RMSTD " << result.truth.difference.quadrature << "\n"
            << format_summary(result.performance);
  for (const auto& f : result.failures) std::cerr << "failed: " << f << '\n';
  for (const auto& p : result.performance)
    if (p.flagged)
      std::cerr << "warning: cell " << p.model_tag << " failure rate " << p.failure_rate << " exceeds threshold\n";
  write_manifest(dir, "simstudy", c, {out.rep_csv, out.summary_csv});
  return 0;
}

int cmd_truth(const Common& o, std::optional<long> n) {
  RunConfig c = resolve_config(o);
  if (n) c.truth.n = *n;
  const fs::path dir = out_dir(o);
  json all = json::array();
  std::cout << std::fixed << std::setprecision(4) << "N = " << c.truth.n << ", horizon " << c.truth.horizon << "y\n";
  for (int sc : {1, 2, 3}) {
    DgmConfig d = c.dgm;
    d.scenario = parse_scenario(sc);
    const Truth t = true_estimands(d, c.truth.horizon, c.truth.n, c.seed, thread_count(o));
    if (sc == 1)
      std::cout << "control RMST " << t.control.value << " (MC SE " << t.control.mc_se << "; quadrature "
                << t.control.quadrature << ")\n";
    std::cout << "scenario " << sc << " RMSTD " << t.difference.value << " (MC SE " << t.difference.mc_se
              << "; quadrature " << t.difference.quadrature << ")\n";
    auto est = [](const TruthEstimate& e) {
      return json{{"value", e.value}, {"mc_se", e.mc_se}, {"quadrature", e.quadrature}};
    };
    all.push_back({{"scenario", sc}, {"control", est(t.control)}, {"active", est(t.active)},
                   {"difference", est(t.difference)}});
  }
  const auto path = dir / "truth.json";
  std::ofstream(path) << json{{"n", c.truth.n}, {"horizon", c.truth.horizon}, {"scenarios", all}}.dump(2) << '\n';
  write_manifest(dir, "truth", c, {path});
  return 0;
}

void add_common(CLI::App* sub, Common& o, bool config_required) {
  auto* opt = sub->add_option("--config", o.config, "JSON run configuration");
  if (config_required) opt->required();
  sub->add_option("--seed", o.seed, "random seed (overrides the config)");
  sub->add_option("--out-dir", o.out_dir, "output directory (default $SURVX_OUT_DIR or ./survx-out)");
  sub->add_option("--method", o.method, "posterior method")->check(CLI::IsMember({"mcmc", "laplace"}));
  sub->add_option("--threads", o.threads, "worker threads (default: logical cores)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"survx: Bayesian flexible survival extrapolation"};
  app.set_version_flag("--version", std::string("survx ") + SURVX_VERSION);
  app.require_subcommand(1);

  Common o;
  PredictFlags pf;
  std::optional<int> reps;
  std::optional<long> truth_n;

  auto* fit = app.add_subcommand("fit", "fit a model (or the configured case-study grid)");
  add_common(fit, o, true);
  auto* predict = app.add_subcommand("predict", "survival, hazard and RMST tables from a saved fit");
  add_common(predict, o, false);
  predict->add_option("--fit", pf.fit, "fit.json written by 'survx fit'")->required();
  predict->add_option("--waning-start", pf.waning_start, "start of treatment-effect waning (years)");
  predict->add_option("--waning-end", pf.waning_end, "time the effect has fully waned (years)");
  predict->add_flag("--no-waning", pf.no_waning, "ignore waning settings in the config");
  predict->add_option("--age", pf.age, "predict for a single baseline age");
  auto* simulate = app.add_subcommand("simulate", "simulate one trial and external cohort");
  add_common(simulate, o, false);
  auto* simstudy = app.add_subcommand("simstudy", "run (or resume) a replication study");
  add_common(simstudy, o, true);
  simstudy->add_option("--reps", reps, "number of replications (overrides the config)");
  auto* truth = app.add_subcommand("truth", "true marginal RMST and RMSTD by simulation");
  add_common(truth, o, false);
  truth->add_option("--n", truth_n, "Monte Carlo sample size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*fit) return cmd_fit(o);
    if (*predict) return cmd_predict(o, pf);
    if (*simulate) return cmd_simulate(o);
    if (*simstudy) return cmd_simstudy(o, reps);
    if (*truth) return cmd_truth(o, truth_n);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
