#include "tpsd/json_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tpsd/error.hpp"

namespace tpsd {

namespace {

template <class T>
T get(const Json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::Parse, std::string("field '") + key + "' has the wrong type");
  }
}

double number_or_nan(const Json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

Json nan_to_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

void require_object(const Json& j, const char* what) {
  if (!j.is_object()) fail(ErrorCode::Parse, std::string(what) + " must be a JSON object");
}

// Wraps nlohmann type errors so callers only see tpsd::Error.
template <class F>
auto guarded(const char* what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string(what) + ": " + e.what());
  }
}

}  // namespace

Json to_json(const ScenarioSpec& s) {
  Json j;
  j["series"] = to_string(s.series);
  j["N"] = s.cohort_size;
  j["n"] = s.phase2_size;
  switch (s.series) {
    case Series::One:
      j["rho"] = s.rho;
      j["tail"] = s.tail_residual_multiplier;
      break;
    case Series::Two:
    case Series::Three:
      j["sigma"] = s.sigma;
      break;
    case Series::Four:
      j["sensitivity"] = s.sensitivity;
      j["specificity"] = s.specificity;
      j["prevalence"] = s.prevalence;
      break;
    case Series::Nwts:
      j["cohort_seed"] = s.cohort_seed;
      break;
  }
  if (!s.beta.empty()) j["beta"] = s.beta;
  j["design_imputations"] = s.design_imputations;
  j["analysis_imputations"] = s.analysis_imputations;
  j["min_per_stratum"] = s.min_per_stratum;
  return j;
}

ScenarioSpec scenario_from_json(const Json& j) {
  require_object(j, "scenario");
  return guarded("scenario", [&] {
    auto it = j.find("series");
    if (it == j.end()) fail(ErrorCode::Parse, "scenario needs a 'series'");
    std::string series = it->is_number() ? std::to_string(it->get<int>()) : it->get<std::string>();
    ScenarioSpec s = ScenarioSpec::defaults(parse_series(series));
    s.cohort_size = get<std::size_t>(j, "N", s.cohort_size);
    s.phase2_size = get<std::size_t>(j, "n", s.phase2_size);
    s.rho = get<double>(j, "rho", s.rho);
    s.tail_residual_multiplier = get<double>(j, "tail", s.tail_residual_multiplier);
    s.sigma = get<double>(j, "sigma", s.sigma);
    s.sensitivity = get<double>(j, "sensitivity", s.sensitivity);
    s.specificity = get<double>(j, "specificity", s.specificity);
    if (j.contains("sens_spec")) s.sensitivity = s.specificity = j.at("sens_spec").get<double>();
    s.prevalence = get<double>(j, "prevalence", s.prevalence);
    s.beta = get<std::vector<double>>(j, "beta", s.beta);
    if (j.contains("beta1")) apply_parameter(s, "beta1", j.at("beta1").get<double>());
    s.cohort_seed = get<std::uint64_t>(j, "cohort_seed", s.cohort_seed);
    s.design_imputations = get<int>(j, "design_imputations", s.design_imputations);
    s.analysis_imputations = get<int>(j, "analysis_imputations", s.analysis_imputations);
    s.min_per_stratum = get<std::size_t>(j, "min_per_stratum", s.min_per_stratum);
    for (auto& [key, _] : j.items()) {
      static const char* known[] = {"series", "N", "n", "rho", "tail", "sigma", "sensitivity", "specificity",
                                    "sens_spec", "prevalence", "beta", "beta1", "cohort_seed",
                                    "design_imputations", "analysis_imputations", "min_per_stratum"};
      if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
        fail(ErrorCode::Parse, "unknown scenario field '" + key + "'");
      }
    }
    return s;
  });
}

Json to_json(const SimulationConfig& c) {
  Json j;
  j["scenario"] = to_json(c.base);
  Json grid = Json::object();
  for (const auto& a : c.grid) grid[a.name] = a.values;
  j["grid"] = grid;
  Json designs = Json::array(), estimators = Json::array();
  for (auto d : c.designs) designs.push_back(to_string(d));
  for (auto e : c.estimators) estimators.push_back(to_string(e));
  j["designs"] = designs;
  j["estimators"] = estimators;
  j["reps"] = c.reps;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  j["max_failure_rate"] = c.max_failure_rate;
  return j;
}

SimulationConfig simulation_from_json(const Json& j) {
  require_object(j, "simulation config");
  return guarded("simulation config", [&] {
    SimulationConfig c;
    if (!j.contains("scenario")) fail(ErrorCode::Parse, "simulation config needs a 'scenario'");
    c.base = scenario_from_json(j.at("scenario"));
    if (j.contains("grid")) {
      require_object(j.at("grid"), "grid");
      for (auto& [name, values] : j.at("grid").items()) {
        GridAxis axis{name, values.is_array() ? values.get<std::vector<double>>() : std::vector<double>{values.get<double>()}};
        c.grid.push_back(std::move(axis));
      }
    }
    for (const auto& d : get<std::vector<std::string>>(j, "designs", {})) c.designs.push_back(parse_design(d));
    for (const auto& e : get<std::vector<std::string>>(j, "estimators", {"IPW", "Raking"})) {
      c.estimators.push_back(parse_estimator(e));
    }
    c.reps = get<std::size_t>(j, "reps", c.reps);
    c.seed = get<std::uint64_t>(j, "seed", c.seed);
    c.jobs = get<unsigned>(j, "jobs", c.jobs);
    c.max_failure_rate = get<double>(j, "max_failure_rate", c.max_failure_rate);
    return c;
  });
}

Json to_json(const Allocation& a) {
  Json strata = Json::array();
  for (std::size_t k = 0; k < a.n.size(); ++k) {
    Json s;
    s["k"] = k + 1;
    s["N"] = k < a.sizes.size() ? a.sizes[k] : 0;
    s["n"] = a.n[k];
    s["sd"] = nan_to_null(k < a.sd.size() ? a.sd[k] : std::numeric_limits<double>::quiet_NaN());
    strata.push_back(s);
  }
  Json policy;
  policy["method"] = a.policy.method;
  policy["min_per_stratum"] = a.policy.min_per_stratum;
  policy["fallback_proportional"] = a.policy.fallback_proportional;
  policy["gamma"] = a.policy.gamma ? Json(*a.policy.gamma) : Json(nullptr);
  Json j;
  j["strata"] = strata;
  j["total"] = a.total;
  j["policy"] = policy;
  return j;
}

Allocation allocation_from_json(const Json& j) {
  require_object(j, "allocation");
  return guarded("allocation", [&] {
    Allocation a;
    for (const auto& s : j.at("strata")) {
      a.sizes.push_back(s.at("N").get<std::size_t>());
      a.n.push_back(s.at("n").get<std::size_t>());
      a.sd.push_back(s.contains("sd") ? number_or_nan(s.at("sd")) : std::numeric_limits<double>::quiet_NaN());
    }
    a.total = get<std::size_t>(j, "total", 0);
    if (j.contains("policy")) {
      const auto& p = j.at("policy");
      a.policy.method = get<std::string>(p, "method", "");
      a.policy.min_per_stratum = get<std::size_t>(p, "min_per_stratum", 0);
      a.policy.fallback_proportional = get<bool>(p, "fallback_proportional", false);
      if (p.contains("gamma") && !p.at("gamma").is_null()) a.policy.gamma = p.at("gamma").get<double>();
    }
    return a;
  });
}

Json to_json(const ReportRow& r) {
  Json j;
  j["design"] = r.design;
  j["estimator"] = r.estimator;
  j["params"] = r.params;
  j["mse_star"] = r.mse_scaled;
  j["se"] = r.se;
  j["reps"] = r.reps;
  j["mc_se"] = r.mc_se;
  j["failures"] = r.failures;
  j["fallbacks"] = r.fallbacks;
  j["bias"] = r.bias;
  j["mse_scale"] = r.mse_scale;
  j["series"] = r.series;
  j["mean_allocation"] = r.mean_allocation;
  return j;
}

Json to_json(const MonteCarloReport& r) {
  Json j;
  j["seed"] = r.seed;
  j["requested_reps"] = r.requested_reps;
  Json rows = Json::array();
  for (const auto& row : r.rows) rows.push_back(to_json(row));
  j["rows"] = rows;
  return j;
}

MonteCarloReport report_from_json_value(const Json& j) {
  require_object(j, "report");
  return guarded("report", [&] {
    MonteCarloReport r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.requested_reps = j.at("requested_reps").get<std::size_t>();
    for (const auto& x : j.at("rows")) {
      ReportRow row;
      row.design = x.at("design").get<std::string>();
      row.estimator = x.at("estimator").get<std::string>();
      row.params = x.at("params").get<std::string>();
      row.mse_scaled = x.at("mse_star").get<double>();
      row.se = x.at("se").get<double>();
      row.reps = x.at("reps").get<std::size_t>();
      row.mc_se = x.at("mc_se").get<double>();
      row.failures = get<std::size_t>(x, "failures", 0);
      row.fallbacks = get<std::size_t>(x, "fallbacks", 0);
      row.bias = get<double>(x, "bias", 0.0);
      row.mse_scale = get<double>(x, "mse_scale", 1000.0);
      row.series = get<std::string>(x, "series", "");
      row.mean_allocation = get<std::vector<double>>(x, "mean_allocation", {});
      r.rows.push_back(std::move(row));
    }
    return r;
  });
}

Json to_json(const EstimatorResult& r) {
  Json j;
  j["estimator"] = to_string(r.estimator);
  Json coef = Json::object();
  for (Eigen::Index i = 0; i < r.beta.size(); ++i) {
    std::string name = static_cast<std::size_t>(i) < r.names.size() ? r.names[static_cast<std::size_t>(i)] : "b" + std::to_string(i);
    coef[name] = nan_to_null(r.beta(i));
  }
  j["coefficients"] = coef;
  j["target"] = r.target_index < r.names.size() ? r.names[r.target_index] : "";
  j["target_coef"] = nan_to_null(r.target_coef);
  j["converged"] = r.converged;
  Json d;
  d["calibration_converged"] = r.diagnostics.calibration_converged;
  d["calibration_residual"] = nan_to_null(r.diagnostics.calibration_residual);
  d["calibration_iterations"] = r.diagnostics.calibration_iterations;
  d["negative_weights"] = r.diagnostics.negative_weights;
  d["fell_back_to_ipw"] = r.diagnostics.fell_back_to_ipw;
  d["imputation_converged"] = r.diagnostics.imputation_converged;
  d["message"] = r.diagnostics.message;
  j["diagnostics"] = d;
  return j;
}

Json to_json(const Term& t) {
  Json j;
  switch (t.kind) {
    case Term::Kind::Main:
      j["kind"] = "main";
      j["column"] = t.column;
      break;
    case Term::Kind::Indicator:
      j["kind"] = "indicator";
      j["column"] = t.column;
      j["threshold"] = t.threshold;
      break;
    case Term::Kind::Spline:
      j["kind"] = "spline";
      j["column"] = t.column;
      j["knot"] = t.knot;
      break;
    case Term::Kind::Interaction: {
      j["kind"] = "interaction";
      Json f = Json::array();
      for (const auto& x : t.factors) f.push_back(to_json(x));
      j["factors"] = f;
      break;
    }
  }
  return j;
}

Term term_from_json(const Json& j) {
  return guarded("term", [&] {
    if (j.is_string()) return Term::main(j.get<std::string>());
    require_object(j, "term");
    std::string kind = get<std::string>(j, "kind", "main");
    if (kind == "main") return Term::main(j.at("column").get<std::string>());
    if (kind == "indicator") return Term::indicator(j.at("column").get<std::string>(), j.at("threshold").get<double>());
    if (kind == "spline") return Term::spline(j.at("column").get<std::string>(), j.at("knot").get<double>());
    if (kind == "interaction") {
      std::vector<Term> f;
      for (const auto& x : j.at("factors")) f.push_back(term_from_json(x));
      return Term::interaction(std::move(f));
    }
    fail(ErrorCode::Parse, "unknown term kind '" + kind + "'");
  });
}

Json to_json(const ModelSpec& m) {
  Json j;
  j["family"] = to_string(m.family);
  j["response"] = m.response;
  Json terms = Json::array();
  for (const auto& t : m.terms) terms.push_back(to_json(t));
  j["terms"] = terms;
  if (!m.target.empty()) j["target"] = m.target;
  return j;
}

ModelSpec model_from_json(const Json& j) {
  require_object(j, "model");
  return guarded("model", [&] {
    ModelSpec m;
    m.family = parse_family(get<std::string>(j, "family", "linear"));
    m.response = j.at("response").get<std::string>();
    for (const auto& t : j.at("terms")) m.terms.push_back(term_from_json(t));
    m.target = get<std::string>(j, "target", "");
    return m;
  });
}

Json to_json(const StratificationRule& r) {
  Json j;
  j["kind"] = to_string(r.kind);
  j["inputs"] = r.inputs;
  j["breakpoints"] = r.breakpoints;
  if (!r.merge.empty()) j["merge"] = r.merge;
  return j;
}

StratificationRule stratification_from_json(const Json& j) {
  require_object(j, "stratification rule");
  return guarded("stratification rule", [&] {
    StratificationRule r;
    std::string kind = get<std::string>(j, "kind", "quantile-cut");
    if (kind == "quantile-cut" || kind == "quantile") {
      r.kind = StratificationKind::QuantileCut;
    } else if (kind == "cross-classification" || kind == "cross") {
      r.kind = StratificationKind::CrossClassification;
    } else if (kind == "explicit-column" || kind == "column") {
      r.kind = StratificationKind::ExplicitColumn;
    } else {
      fail(ErrorCode::Parse, "unknown stratification kind '" + kind + "'");
    }
    const auto& inputs = j.at("inputs");
    r.inputs = inputs.is_string() ? std::vector<std::string>{inputs.get<std::string>()}
                                  : inputs.get<std::vector<std::string>>();
    if (j.contains("breakpoints")) {
      const auto& b = j.at("breakpoints");
      if (!b.empty() && b.front().is_number()) {
        r.breakpoints = {b.get<std::vector<double>>()};
      } else {
        r.breakpoints = b.get<std::vector<std::vector<double>>>();
      }
    }
    r.merge = get<std::vector<int>>(j, "merge", {});
    return r;
  });
}

Json to_json(const Schema& s) {
  Json j = Json::object();
  for (const auto& [name, role] : s) j[name] = to_string(role);
  return j;
}

Schema schema_from_json(const Json& j) {
  require_object(j, "schema");
  return guarded("schema", [&] {
    Schema s;
    for (auto& [name, role] : j.items()) s[name] = parse_column_role(role.get<std::string>());
    return s;
  });
}

Json presets_json() {
  auto preset = [](const char* id, const char* title, Series series, Json grid, std::vector<const char*> designs) {
    Json p;
    p["id"] = id;
    p["title"] = title;
    p["scenario"] = to_json(ScenarioSpec::defaults(series));
    p["grid"] = std::move(grid);
    p["designs"] = designs;
    p["estimators"] = {"IPW", "Raking"};
    Json limits;
    limits["reps"] = {1, 500};
    limits["N"] = {50, 100000};
    switch (series) {
      case Series::One:
        limits["rho"] = {0.0, 1.0};
        limits["tail"] = {0.0, 10.0};
        break;
      case Series::Two:
      case Series::Three:
        limits["sigma"] = {0.05, 3.0};
        limits["beta1"] = {-3.0, 3.0};
        break;
      case Series::Four:
        limits["sens_spec"] = {0.5, 1.0};
        limits["beta1"] = {-3.0, 3.0};
        limits["prevalence"] = {0.01, 0.3};
        break;
      case Series::Nwts:
        limits["N"] = {3915, 3915};
        limits["n"] = {8, 3915};
        break;
    }
    p["limits"] = limits;
    return p;
  };
  std::vector<const char*> five = {"SRS", "BSS", "PSS", "IF-IPW", "IF-GR"};
  std::vector<const char*> scc = {"SRS", "SCC", "PSS", "IF-IPW", "IF-GR"};
  Json out = Json::array();
  out.push_back(preset("series1", "Linear outcome, auxiliary correlated with the influence function", Series::One,
                       {{"rho", {0.99, 0.9, 0.8, 0.7, 0.6, 0.5}}}, five));
  {
    Json p = preset("series1-tail", "Series 1 with inflated tail-stratum residual variance", Series::One,
                    {{"rho", {0.9}}}, five);
    p["scenario"]["tail"] = 3.0;
    p["estimators"] = {"Raking"};
    out.push_back(p);
  }
  out.push_back(preset("series2", "Linear outcome, additive measurement error", Series::Two,
                       {{"sigma", {0.5, 0.75, 1.0}}, {"beta1", {0.0, 1.0, 2.0}}}, five));
  out.push_back(preset("series3", "Logistic outcome, additive measurement error", Series::Three,
                       {{"sigma", {0.5, 0.75, 1.0}}, {"beta1", {0.0, 0.5, 1.0}}}, five));
  out.push_back(preset("series4", "Rare binary outcome, misclassified binary exposure", Series::Four,
                       {{"sens_spec", {0.95, 0.9, 0.85}}, {"beta1", {0.0, 0.5, 1.0}}}, scc));
  {
    Json p = preset("nwts", "NWTS-like synthetic cohort", Series::Nwts, Json::object(), scc);
    Json data;
    data["schema"] = to_json(nwts_schema());
    data["strata"] = to_json(StratificationRule::cross({"relapse", "instit"}));
    data["outcome"] = to_json(nwts_outcome_model());
    data["imputation"] = {{"model", to_json(nwts_imputation_model().model)}, {"m", 50}};
    data["case_column"] = "relapse";
    p["data"] = data;
    out.push_back(p);
  }
  return out;
}

}  // namespace tpsd
