#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "server.hpp"
#include "tpsd/tpsd.h"

namespace {

using Json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitBadInput = 2;
constexpr int kExitEstimatorFailure = 3;

struct CliError {
  int code;
  std::string message;
};

int exit_code(tpsd_status s) {
  switch (s) {
    case TPSD_OK: return kExitOk;
    case TPSD_ERR_INVALID_ARGUMENT:
    case TPSD_ERR_PARSE:
    case TPSD_ERR_MISSING_COLUMN:
    case TPSD_ERR_MISSING_VALUE:
    case TPSD_ERR_EMPTY_STRATUM:
    case TPSD_ERR_INFEASIBLE: return kExitBadInput;
    case TPSD_ERR_RANK_DEFICIENT:
    case TPSD_ERR_NON_CONVERGENCE:
    case TPSD_ERR_SEPARATION:
    case TPSD_ERR_SINGULAR:
    case TPSD_ERR_DIVERGENCE:
    case TPSD_ERR_ESTIMATOR_FAILURE: return kExitEstimatorFailure;
    default: return kExitError;
  }
}

void check(tpsd_status s) {
  if (s != TPSD_OK) throw CliError{exit_code(s), std::string(tpsd_status_name(s)) + ": " + tpsd_last_error()};
}

std::string take(char* p) {
  std::string s = p ? p : "";
  tpsd_string_free(p);
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError{kExitBadInput, "cannot read '" + path + "'"};
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Inline JSON, or @path to read it from a file.
Json json_arg(const std::string& text, const char* what) {
  std::string src = !text.empty() && text[0] == '@' ? read_file(text.substr(1)) : text;
  try {
    return Json::parse(src);
  } catch (const nlohmann::json::exception& e) {
    throw CliError{kExitBadInput, std::string(what) + " is not valid JSON: " + e.what()};
  }
}

void write_output(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CliError{kExitError, "cannot write '" + path + "'"};
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

Json presets() {
  char* text = nullptr;
  check(tpsd_presets_json(&text));
  return Json::parse(take(text));
}

Json find_preset(const std::string& id) {
  for (const auto& p : presets()) {
    if (p.at("id") == id) return p;
  }
  throw CliError{kExitBadInput, "unknown preset '" + id + "'"};
}

std::string preset_for_series(const std::string& series) { return series == "nwts" ? "nwts" : "series" + series; }

struct SimulateArgs {
  std::string config, preset, series, format = "csv", out, dump_cohort;
  std::vector<double> rho, sigma, beta1, sens_spec, tail;
  long long big_n = -1, n = -1;
  std::vector<std::string> designs, estimators;
  std::size_t reps = 0;
  std::uint64_t seed = 1;
  unsigned jobs = 1;
  double time_budget = 0.0;
  bool seed_set = false;
};

Json simulation_config(const SimulateArgs& a) {
  Json cfg;
  if (!a.config.empty()) {
    cfg = json_arg("@" + a.config, "config");
    if (!cfg.is_object()) throw CliError{kExitBadInput, "config must be a JSON object"};
  } else if (!a.preset.empty() || !a.series.empty()) {
    Json p = find_preset(a.preset.empty() ? preset_for_series(a.series) : a.preset);
    cfg["scenario"] = p.at("scenario");
    cfg["grid"] = a.preset.empty() ? Json::object() : p.at("grid");
    cfg["designs"] = p.at("designs");
    cfg["estimators"] = p.at("estimators");
  } else {
    throw CliError{kExitBadInput, "simulate needs --config, --preset or --series"};
  }
  if (!cfg.contains("grid")) cfg["grid"] = Json::object();
  auto axis = [&](const char* name, const std::vector<double>& v) {
    if (!v.empty()) cfg["grid"][name] = v;
  };
  axis("rho", a.rho);
  axis("sigma", a.sigma);
  axis("beta1", a.beta1);
  axis("sens_spec", a.sens_spec);
  axis("tail", a.tail);
  if (a.big_n >= 0) cfg["scenario"]["N"] = a.big_n;
  if (a.n >= 0) cfg["scenario"]["n"] = a.n;
  if (!a.designs.empty()) cfg["designs"] = a.designs;
  if (!a.estimators.empty()) cfg["estimators"] = a.estimators;
  if (a.reps > 0) cfg["reps"] = a.reps;
  if (a.seed_set || !cfg.contains("seed")) cfg["seed"] = a.seed;
  cfg["jobs"] = a.jobs;
  return cfg;
}

int run_simulate(const SimulateArgs& a) {
  Json cfg = simulation_config(a);
  if (!a.dump_cohort.empty()) {
    tpsd_cohort* c = nullptr;
    check(tpsd_cohort_generate(cfg.at("scenario").dump().c_str(), cfg.at("seed").get<std::uint64_t>(), &c));
    char* csv = nullptr;
    tpsd_status s = tpsd_cohort_to_csv(c, &csv);
    tpsd_cohort_free(c);
    check(s);
    write_output(take(csv), a.dump_cohort);
    if (!cfg.contains("reps")) return kExitOk;
  }
  tpsd_report* report = nullptr;
  check(tpsd_simulate(cfg.dump().c_str(), a.time_budget, &report));
  char* text = nullptr;
  tpsd_status s = tpsd_report_format(report, a.format.c_str(), &text);
  tpsd_report_free(report);
  check(s);
  write_output(take(text), a.out);
  return kExitOk;
}

struct DataArgs {
  std::string data, schema, strata, outcome, imputation, preset, out;
  Json preset_data;

  void resolve() {
    if (!preset.empty()) {
      Json p = find_preset(preset);
      if (!p.contains("data")) throw CliError{kExitBadInput, "preset '" + preset + "' has no data layout"};
      preset_data = p.at("data");
    }
  }
  Json get(const std::string& arg, const char* key, const char* what) const {
    if (!arg.empty()) return json_arg(arg, what);
    if (preset_data.contains(key)) return preset_data.at(key);
    return nullptr;
  }
  tpsd_cohort* load() const {
    if (data.empty()) throw CliError{kExitBadInput, "--data is required"};
    Json sch = get(schema, "schema", "schema");
    if (sch.is_null()) throw CliError{kExitBadInput, "--schema is required"};
    tpsd_cohort* c = nullptr;
    check(tpsd_cohort_load_csv(data.c_str(), sch.dump().c_str(), &c));
    return c;
  }
};

struct AllocateArgs : DataArgs {
  std::string method, h_hat_column, case_column, variable, scenario, series, moments;
  std::size_t n = 0, min = 2;
  std::uint64_t seed = 1;
  bool min_set = false;
};

int run_allocate(AllocateArgs& a) {
  a.resolve();
  if (!a.moments.empty()) {
    Json m = json_arg(a.moments, "moments");
    m["n"] = a.n;
    m["min_per_stratum"] = a.min;
    if (!a.method.empty()) m["method"] = a.method;
    tpsd_allocation* alloc = nullptr;
    check(tpsd_allocate_moments(m.dump().c_str(), &alloc));
    char* text = nullptr;
    tpsd_status s = tpsd_allocation_to_json(alloc, &text);
    tpsd_allocation_free(alloc);
    check(s);
    write_output(take(text), a.out);
    return kExitOk;
  }
  if (!a.scenario.empty() || !a.series.empty()) {
    Json req;
    req["scenario"] = !a.scenario.empty() ? json_arg(a.scenario, "scenario")
                                          : find_preset(preset_for_series(a.series)).at("scenario");
    if (a.n > 0) req["scenario"]["n"] = a.n;
    if (a.min_set) req["scenario"]["min_per_stratum"] = a.min;
    if (!a.method.empty()) req["methods"] = {a.method};
    req["seed"] = a.seed;
    char* text = nullptr;
    check(tpsd_scenario_allocate(req.dump().c_str(), &text));
    write_output(take(text), a.out);
    return kExitOk;
  }
  if (a.method.empty()) throw CliError{kExitBadInput, "--method is required"};
  Json rule = a.get(a.strata, "strata", "strata");
  if (rule.is_null()) throw CliError{kExitBadInput, "--strata is required"};
  Json req;
  req["method"] = a.method;
  req["n"] = a.n;
  req["min_per_stratum"] = a.min;
  req["seed"] = a.seed;
  Json outcome = a.get(a.outcome, "outcome", "outcome");
  if (!outcome.is_null()) req["outcome"] = outcome;
  if (!a.h_hat_column.empty()) {
    req["h_hat_column"] = a.h_hat_column;
  } else {
    Json imp = a.get(a.imputation, "imputation", "imputation");
    if (!imp.is_null()) req["imputation"] = imp;
  }
  std::string cases = !a.case_column.empty() ? a.case_column : a.preset_data.value("case_column", std::string());
  if (!cases.empty()) req["case_column"] = cases;
  if (!a.variable.empty()) req["variable"] = a.variable;

  tpsd_cohort* cohort = a.load();
  tpsd_strata* strata = nullptr;
  tpsd_allocation* alloc = nullptr;
  tpsd_status s = tpsd_stratify(cohort, rule.dump().c_str(), &strata);
  if (s == TPSD_OK) s = tpsd_allocate(cohort, strata, req.dump().c_str(), &alloc);
  std::string text;
  if (s == TPSD_OK) {
    char* p = nullptr;
    s = tpsd_allocation_to_json(alloc, &p);
    text = take(p);
  }
  tpsd_allocation_free(alloc);
  tpsd_strata_free(strata);
  tpsd_cohort_free(cohort);
  check(s);
  write_output(text, a.out);
  return kExitOk;
}

struct EstimateArgs : DataArgs {
  std::string estimator = "raking", pi_column, distance = "exponential";
  std::vector<std::string> aux;
};

int run_estimate(EstimateArgs& a) {
  a.resolve();
  Json req;
  req["estimator"] = a.estimator;
  Json outcome = a.get(a.outcome, "outcome", "outcome");
  if (outcome.is_null()) throw CliError{kExitBadInput, "--outcome is required"};
  req["outcome"] = outcome;
  if (!a.pi_column.empty()) {
    req["pi_column"] = a.pi_column;
  } else {
    Json rule = a.get(a.strata, "strata", "strata");
    if (rule.is_null()) throw CliError{kExitBadInput, "--strata or --pi-column is required"};
    req["strata"] = rule;
  }
  if (!a.aux.empty()) {
    req["auxiliary_columns"] = a.aux;
  } else {
    Json imp = a.get(a.imputation, "imputation", "imputation");
    if (!imp.is_null()) {
      if (a.imputation.empty()) imp["m"] = 1;
      req["imputation"] = imp;
    }
  }
  req["distance"] = a.distance;
  tpsd_cohort* cohort = a.load();
  char* text = nullptr;
  tpsd_status s = tpsd_estimate(cohort, req.dump().c_str(), &text);
  tpsd_cohort_free(cohort);
  check(s);
  write_output(take(text), a.out);
  return kExitOk;
}

std::atomic<tpsd_server::Server*> g_server{nullptr};

void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

int run_serve(const tpsd_server::Options& opt) {
  tpsd_server::Server server(opt);
  int port = server.bind();
  if (port < 0) throw CliError{kExitError, "cannot bind " + opt.host + ":" + std::to_string(opt.port)};
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "listening on http://" << opt.host << ':' << port << '\n';
  server.listen();
  g_server = nullptr;
  return kExitOk;
}

void add_data_options(CLI::App* cmd, DataArgs& a) {
  cmd->add_option("--data", a.data, "Phase-1 CSV file");
  cmd->add_option("--schema", a.schema, "Column roles as JSON (inline or @file)");
  cmd->add_option("--strata", a.strata, "Stratification rule as JSON (inline or @file)");
  cmd->add_option("--outcome", a.outcome, "Outcome model as JSON (inline or @file)");
  cmd->add_option("--imputation", a.imputation, "Imputation spec as JSON (inline or @file)");
  cmd->add_option("--preset", a.preset, "Take schema, strata and models from a preset (nwts)");
  cmd->add_option("--out,-o", a.out, "Output file (default stdout)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-phase sampling designs: allocation, estimation and Monte Carlo comparison"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(tpsd_version()));

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo comparison of designs and estimators");
  simulate->add_option("--config", sim.config, "Simulation config JSON file");
  simulate->add_option("--preset", sim.preset, "Preset id with its full parameter grid");
  simulate->add_option("--series", sim.series, "Series 1-4 or nwts with default parameters")
      ->check(CLI::IsMember({"1", "2", "3", "4", "nwts"}));
  simulate->add_option("--rho", sim.rho, "Series 1 correlation values");
  simulate->add_option("--sigma", sim.sigma, "Measurement error sd values");
  simulate->add_option("--beta1", sim.beta1, "Target coefficient values");
  simulate->add_option("--sens-spec", sim.sens_spec, "Sensitivity = specificity values (series 4)");
  simulate->add_option("--tail", sim.tail, "Series 1 tail residual multiplier");
  simulate->add_option("--N", sim.big_n, "Phase-1 size");
  simulate->add_option("--n", sim.n, "Phase-2 size");
  simulate->add_option("--designs", sim.designs, "Designs (SRS BSS PSS SCC IF-IPW IF-GR)");
  simulate->add_option("--estimators", sim.estimators, "Estimators (IPW Raking)");
  simulate->add_option("--reps", sim.reps, "Replicates per grid point");
  simulate->add_option("--seed", sim.seed, "Master seed")->each([&](const std::string&) { sim.seed_set = true; });
  simulate->add_option("--jobs,-j", sim.jobs, "Worker threads (does not change results)");
  simulate->add_option("--format", sim.format, "csv, json or markdown")
      ->check(CLI::IsMember({"csv", "json", "markdown", "md"}));
  simulate->add_option("--out,-o", sim.out, "Output file (default stdout)");
  simulate->add_option("--time-budget", sim.time_budget, "Abort after this many seconds (0 = none)");
  simulate->add_option("--dump-cohort", sim.dump_cohort, "Write one generated cohort as CSV");

  AllocateArgs alloc;
  auto* allocate = app.add_subcommand("allocate", "Stratum sample sizes for one design");
  add_data_options(allocate, alloc);
  allocate->add_option("--method", alloc.method, "neyman, if-ipw, if-gr, pss, bss, scc or srs");
  allocate->add_option("--n", alloc.n, "Phase-2 size");
  allocate->add_option("--min", alloc.min, "Minimum per stratum")->each([&](const std::string&) { alloc.min_set = true; });
  allocate->add_option("--h-hat-column", alloc.h_hat_column, "Column holding the estimated influence function");
  allocate->add_option("--case-column", alloc.case_column, "Binary case indicator (scc)");
  allocate->add_option("--variable", alloc.variable, "Column whose within-stratum sd drives neyman");
  allocate->add_option("--moments", alloc.moments, "Stratum sizes and sd as JSON instead of data");
  allocate->add_option("--scenario", alloc.scenario, "Allocate on a generated scenario (JSON)");
  allocate->add_option("--series", alloc.series, "Allocate on a generated scenario of this series");
  allocate->add_option("--seed", alloc.seed, "Seed for srs and imputation draws");

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "IPW or generalized raking estimate from two-phase data");
  add_data_options(estimate, est);
  estimate->add_option("--estimator", est.estimator, "ipw or raking")->check(CLI::IsMember({"ipw", "raking"}));
  estimate->add_option("--pi-column", est.pi_column, "Column of inclusion probabilities");
  estimate->add_option("--aux", est.aux, "Auxiliary columns (instead of imputation)");
  estimate->add_option("--distance", est.distance, "exponential or chi-square")
      ->check(CLI::IsMember({"exponential", "chi-square"}));

  tpsd_server::Options srv;
  auto* serve = app.add_subcommand("serve", "JSON API for the explorer UI");
  serve->add_option("--host", srv.host, "Bind address");
  serve->add_option("--port", srv.port, "Port (0 = any free port)");
  serve->add_option("--static-dir", srv.static_dir, "Serve a UI bundle from this directory");
  serve->add_option("--time-budget", srv.time_budget_seconds, "Seconds per /simulate request before 503");
  serve->add_option("--max-reps", srv.max_reps, "Upper limit on reps per /simulate request");
  serve->add_option("--jobs,-j", srv.jobs, "Worker threads per simulation");

  auto* list = app.add_subcommand("presets", "Print scenario presets as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitBadInput;
  }

  try {
    if (*simulate) return run_simulate(sim);
    if (*allocate) return run_allocate(alloc);
    if (*estimate) return run_estimate(est);
    if (*serve) return run_serve(srv);
    if (*list) {
      write_output(presets().dump(2), "");
      return kExitOk;
    }
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << '\n';
    return e.code;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadInput;
  }
  return kExitError;
}
