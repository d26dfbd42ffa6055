#include "tpsd/tpsd.h"

#include <chrono>
#include <cstring>
#include <string>

#include "tpsd/allocation.hpp"
#include "tpsd/cohort.hpp"
#include "tpsd/error.hpp"
#include "tpsd/estimators.hpp"
#include "tpsd/json_io.hpp"
#include "tpsd/montecarlo.hpp"
#include "tpsd/report.hpp"
#include "tpsd/scenario.hpp"

struct tpsd_cohort {
  tpsd::Cohort value;
};
struct tpsd_strata {
  tpsd::StratumIndex value;
};
struct tpsd_allocation {
  tpsd::Allocation value;
};
struct tpsd_report {
  tpsd::MonteCarloReport value;
};

namespace {

using tpsd::ErrorCode;
using tpsd::Json;
using tpsd::fail;

thread_local std::string g_last_error;

tpsd_status status_of(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument: return TPSD_ERR_INVALID_ARGUMENT;
    case ErrorCode::Parse: return TPSD_ERR_PARSE;
    case ErrorCode::MissingColumn: return TPSD_ERR_MISSING_COLUMN;
    case ErrorCode::MissingValue: return TPSD_ERR_MISSING_VALUE;
    case ErrorCode::EmptyStratum: return TPSD_ERR_EMPTY_STRATUM;
    case ErrorCode::Infeasible: return TPSD_ERR_INFEASIBLE;
    case ErrorCode::RankDeficient: return TPSD_ERR_RANK_DEFICIENT;
    case ErrorCode::NonConvergence: return TPSD_ERR_NON_CONVERGENCE;
    case ErrorCode::Separation: return TPSD_ERR_SEPARATION;
    case ErrorCode::Singular: return TPSD_ERR_SINGULAR;
    case ErrorCode::Divergence: return TPSD_ERR_DIVERGENCE;
    case ErrorCode::EstimatorFailure: return TPSD_ERR_ESTIMATOR_FAILURE;
    case ErrorCode::Io: return TPSD_ERR_IO;
    case ErrorCode::Timeout: return TPSD_ERR_TIMEOUT;
  }
  return TPSD_ERR_INTERNAL;
}

template <class F>
tpsd_status guard(F&& f) {
  g_last_error.clear();
  try {
    f();
    return TPSD_OK;
  } catch (const tpsd::Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("JSON: ") + e.what();
    return TPSD_ERR_PARSE;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return TPSD_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return TPSD_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return TPSD_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) fail(ErrorCode::InvalidArgument, std::string(what) + " is null");
}

Json parse(const char* text, const char* what) {
  require(text, what);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string(what) + ": " + e.what());
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

template <class T>
T field(const Json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  return it->get<T>();
}

tpsd::StratumIndex index_from_sizes(const std::vector<std::size_t>& sizes) {
  std::vector<int> a;
  for (std::size_t k = 0; k < sizes.size(); ++k) a.insert(a.end(), sizes[k], static_cast<int>(k));
  return tpsd::StratumIndex::from_assignment(std::move(a), sizes.size());
}

tpsd::ImputationSpec imputation_from_json(const Json& j) {
  tpsd::ImputationSpec imp;
  imp.model = tpsd::model_from_json(j.at("model"));
  imp.m = field<int>(j, "m", 1);
  if (imp.m < 1) fail(ErrorCode::InvalidArgument, "imputation m must be at least 1");
  imp.mode = imp.m > 1 ? tpsd::ImputationSpec::Mode::Multiple : tpsd::ImputationSpec::Mode::Single;
  imp.seed = field<std::uint64_t>(j, "seed", 0);
  imp.keep_observed = field<bool>(j, "keep_observed", false);
  return imp;
}

std::vector<double> target_column(const Eigen::MatrixXd& m, std::size_t col) {
  Eigen::VectorXd c = m.col(static_cast<Eigen::Index>(col));
  return {c.data(), c.data() + c.size()};
}

tpsd::Allocation allocate_on_cohort(const tpsd::Cohort& cohort, const tpsd::StratumIndex& idx, const Json& req) {
  using namespace tpsd;
  const DesignKind kind = parse_design(req.at("method").get<std::string>());
  const std::size_t n = field<std::size_t>(req, "n", 0);
  const std::size_t min = field<std::size_t>(req, "min_per_stratum", kDefaultMinPerStratum);
  if (n == 0 && kind != DesignKind::SCC) fail(ErrorCode::InvalidArgument, "allocation needs a positive 'n'");
  switch (kind) {
    case DesignKind::Neyman: {
      auto var = field<std::string>(req, "variable", "");
      if (var.empty()) fail(ErrorCode::InvalidArgument, "neyman needs a 'variable' column");
      const auto& v = cohort.column(var);
      StratumMoments m{idx.sizes, within_stratum_sd(v, idx)};
      Allocation a = integer_allocation(m, n, min);
      a.policy.method = "Neyman";
      return a;
    }
    case DesignKind::IfIpw:
    case DesignKind::IfGr: {
      if (!req.contains("outcome")) fail(ErrorCode::InvalidArgument, "influence-function designs need an 'outcome' model");
      ModelSpec outcome = model_from_json(req.at("outcome"));
      std::vector<double> h = full_data_influence(cohort, outcome);
      if (kind == DesignKind::IfIpw) return if_ipw_allocation(h, idx, n, min);
      std::vector<double> h_hat;
      if (req.contains("h_hat_column")) {
        h_hat = cohort.column(req.at("h_hat_column").get<std::string>());
      } else if (req.contains("imputation")) {
        ImputationSpec imp = imputation_from_json(req.at("imputation"));
        if (!req.at("imputation").contains("seed")) imp.seed = field<std::uint64_t>(req, "seed", 1);
        SampleIndicator all;
        all.selected.assign(cohort.n_rows(), 1);
        all.inclusion_prob.assign(cohort.n_rows(), 1.0);
        h_hat = target_column(imputed_influence(cohort, all, outcome, imp), outcome.target_index());
      } else {
        fail(ErrorCode::InvalidArgument, "if-gr needs 'h_hat_column' or an 'imputation' spec");
      }
      return if_gr_allocation(h, h_hat, idx, n, min);
    }
    case DesignKind::SCC: {
      auto col = field<std::string>(req, "case_column", "");
      if (col.empty()) fail(ErrorCode::InvalidArgument, "scc needs a 'case_column'");
      return fixed_design(kind, idx, n, cohort.column(col));
    }
    case DesignKind::SRS: {
      Rng rng(derive_seed(field<std::uint64_t>(req, "seed", 1), {0x535253}));
      return fixed_design(kind, idx, n, {}, &rng);
    }
    default: return fixed_design(kind, idx, n);
  }
}

}  // namespace

extern "C" {

const char* tpsd_version(void) { return "0.1.0"; }

const char* tpsd_status_name(tpsd_status s) {
  switch (s) {
    case TPSD_OK: return "ok";
    case TPSD_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case TPSD_ERR_PARSE: return "parse";
    case TPSD_ERR_MISSING_COLUMN: return "missing-column";
    case TPSD_ERR_MISSING_VALUE: return "missing-value";
    case TPSD_ERR_EMPTY_STRATUM: return "empty-stratum";
    case TPSD_ERR_INFEASIBLE: return "infeasible";
    case TPSD_ERR_RANK_DEFICIENT: return "rank-deficient";
    case TPSD_ERR_NON_CONVERGENCE: return "non-convergence";
    case TPSD_ERR_SEPARATION: return "separation";
    case TPSD_ERR_SINGULAR: return "singular";
    case TPSD_ERR_DIVERGENCE: return "divergence";
    case TPSD_ERR_ESTIMATOR_FAILURE: return "estimator-failure";
    case TPSD_ERR_IO: return "io";
    case TPSD_ERR_TIMEOUT: return "timeout";
    case TPSD_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* tpsd_last_error(void) { return g_last_error.c_str(); }

void tpsd_string_free(char* s) { std::free(s); }

tpsd_status tpsd_cohort_load_csv(const char* path, const char* schema_json, tpsd_cohort** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    auto schema = tpsd::schema_from_json(parse(schema_json, "schema"));
    *out = new tpsd_cohort{tpsd::load_cohort(path, schema)};
  });
}

tpsd_status tpsd_cohort_parse_csv(const char* text, const char* schema_json, tpsd_cohort** out) {
  return guard([&] {
    require(text, "text");
    require(out, "out");
    auto schema = tpsd::schema_from_json(parse(schema_json, "schema"));
    *out = new tpsd_cohort{tpsd::parse_cohort_csv(text, schema)};
  });
}

tpsd_status tpsd_cohort_generate(const char* scenario_json, uint64_t seed, tpsd_cohort** out) {
  return guard([&] {
    require(out, "out");
    auto spec = tpsd::scenario_from_json(parse(scenario_json, "scenario"));
    tpsd::Rng rng = tpsd::make_rng(seed, {0, 0});
    *out = new tpsd_cohort{tpsd::generate(spec, rng).cohort};
  });
}

size_t tpsd_cohort_rows(const tpsd_cohort* c) { return c ? c->value.n_rows() : 0; }

tpsd_status tpsd_cohort_to_csv(const tpsd_cohort* c, char** out) {
  return guard([&] {
    require(c, "cohort");
    require(out, "out");
    *out = dup(tpsd::cohort_to_csv(c->value));
  });
}

void tpsd_cohort_free(tpsd_cohort* c) { delete c; }

tpsd_status tpsd_stratify(const tpsd_cohort* c, const char* rule_json, tpsd_strata** out) {
  return guard([&] {
    require(c, "cohort");
    require(out, "out");
    auto rule = tpsd::stratification_from_json(parse(rule_json, "rule"));
    *out = new tpsd_strata{tpsd::stratify(c->value, rule)};
  });
}

size_t tpsd_strata_count(const tpsd_strata* s) { return s ? s->value.k : 0; }

size_t tpsd_strata_size(const tpsd_strata* s, size_t k) {
  return s && k < s->value.sizes.size() ? s->value.sizes[k] : 0;
}

void tpsd_strata_free(tpsd_strata* s) { delete s; }

tpsd_status tpsd_allocate(const tpsd_cohort* c, const tpsd_strata* s, const char* request_json,
                          tpsd_allocation** out) {
  return guard([&] {
    require(c, "cohort");
    require(s, "strata");
    require(out, "out");
    if (s->value.n_rows() != c->value.n_rows()) fail(ErrorCode::InvalidArgument, "strata and cohort differ in size");
    Json req = parse(request_json, "request");
    *out = new tpsd_allocation{allocate_on_cohort(c->value, s->value, req)};
  });
}

tpsd_status tpsd_allocate_moments(const char* moments_json, tpsd_allocation** out) {
  return guard([&] {
    require(out, "out");
    Json j = parse(moments_json, "moments");
    tpsd::StratumMoments m;
    m.sizes = j.at("sizes").get<std::vector<std::size_t>>();
    const std::size_t n = j.at("n").get<std::size_t>();
    const std::size_t min = field<std::size_t>(j, "min_per_stratum", tpsd::kDefaultMinPerStratum);
    auto method = tpsd::parse_design(field<std::string>(j, "method", "neyman"));
    if (method == tpsd::DesignKind::PSS || method == tpsd::DesignKind::BSS) {
      *out = new tpsd_allocation{tpsd::fixed_design(method, index_from_sizes(m.sizes), n)};
      return;
    }
    if (method != tpsd::DesignKind::Neyman && method != tpsd::DesignKind::IfIpw) {
      fail(ErrorCode::InvalidArgument, "moments support neyman, if-ipw, pss and bss");
    }
    m.sd = j.at("sd").get<std::vector<double>>();
    if (m.sd.size() != m.sizes.size()) fail(ErrorCode::InvalidArgument, "'sizes' and 'sd' differ in length");
    tpsd::Allocation a = tpsd::integer_allocation(m, n, min);
    a.policy.method = tpsd::to_string(method);
    *out = new tpsd_allocation{std::move(a)};
  });
}

size_t tpsd_allocation_strata(const tpsd_allocation* a) { return a ? a->value.n.size() : 0; }

size_t tpsd_allocation_n(const tpsd_allocation* a, size_t k) {
  return a && k < a->value.n.size() ? a->value.n[k] : 0;
}

size_t tpsd_allocation_total(const tpsd_allocation* a) { return a ? a->value.total : 0; }

tpsd_status tpsd_allocation_to_json(const tpsd_allocation* a, char** out) {
  return guard([&] {
    require(a, "allocation");
    require(out, "out");
    *out = dup(tpsd::to_json(a->value).dump(2));
  });
}

void tpsd_allocation_free(tpsd_allocation* a) { delete a; }

tpsd_status tpsd_scenario_allocate(const char* request_json, char** out_json) {
  return guard([&] {
    require(out_json, "out");
    Json req = parse(request_json, "request");
    if (!req.is_object() || !req.contains("scenario")) fail(ErrorCode::InvalidArgument, "request needs a 'scenario'");
    auto spec = tpsd::scenario_from_json(req.at("scenario"));
    auto seed = field<std::uint64_t>(req, "seed", 1);
    std::vector<std::string> methods =
        field<std::vector<std::string>>(req, "methods", {"SRS", "PSS", "IF-IPW", "IF-GR"});
    if (methods.empty()) fail(ErrorCode::InvalidArgument, "'methods' is empty");
    tpsd::Rng rng = tpsd::make_rng(seed, {0, 0});
    tpsd::Scenario sc = tpsd::generate(spec, rng);
    Json res;
    res["scenario"] = tpsd::to_json(sc.spec);
    res["params"] = sc.spec.label();
    res["seed"] = seed;
    res["strata_sizes"] = sc.strata.sizes;
    Json allocs = Json::array();
    for (const auto& m : methods) {
      auto kind = tpsd::parse_design(m);
      tpsd::Rng mrng = tpsd::make_rng(seed, {0, static_cast<std::uint64_t>(kind) + 1});
      Json a = tpsd::to_json(tpsd::scenario_allocation(sc, kind, mrng));
      a["method"] = tpsd::to_string(kind);
      allocs.push_back(std::move(a));
    }
    res["allocations"] = allocs;
    *out_json = dup(res.dump(2));
  });
}

tpsd_status tpsd_estimate(const tpsd_cohort* c, const char* request_json, char** out_json) {
  return guard([&] {
    using namespace tpsd;
    require(c, "cohort");
    require(out_json, "out");
    Json req = parse(request_json, "request");
    const Cohort& cohort = c->value;
    ModelSpec outcome = model_from_json(req.at("outcome"));

    std::string phase2;
    for (const auto& name : cohort.names()) {
      if (cohort.role(name) == ColumnRole::Phase2) {
        if (!phase2.empty()) fail(ErrorCode::InvalidArgument, "estimation supports one phase-2 column");
        phase2 = name;
      }
    }
    if (phase2.empty()) fail(ErrorCode::MissingColumn, "cohort has no phase-2 column");
    SampleIndicator sample;
    auto missing = cohort.missing_mask(phase2);
    sample.selected.resize(cohort.n_rows());
    for (std::size_t i = 0; i < cohort.n_rows(); ++i) sample.selected[i] = missing[i] ? 0 : 1;
    if (req.contains("pi_column")) {
      sample.inclusion_prob = cohort.column(req.at("pi_column").get<std::string>());
    } else if (req.contains("strata")) {
      StratumIndex idx = stratify(cohort, stratification_from_json(req.at("strata")));
      std::vector<double> taken(idx.k, 0.0);
      for (std::size_t i = 0; i < cohort.n_rows(); ++i) taken[static_cast<std::size_t>(idx.assignment[i])] += sample.selected[i];
      sample.inclusion_prob.resize(cohort.n_rows());
      for (std::size_t i = 0; i < cohort.n_rows(); ++i) {
        auto k = static_cast<std::size_t>(idx.assignment[i]);
        if (taken[k] == 0.0) fail(ErrorCode::EmptyStratum, "stratum " + std::to_string(k + 1) + " has no phase-2 rows");
        sample.inclusion_prob[i] = taken[k] / static_cast<double>(idx.sizes[k]);
      }
    } else {
      fail(ErrorCode::InvalidArgument, "estimation needs 'strata' or 'pi_column' for inclusion probabilities");
    }

    auto kind = parse_estimator(field<std::string>(req, "estimator", "raking"));
    EstimatorResult r;
    if (kind == EstimatorKind::Ipw) {
      r = ipw_estimate(cohort, sample, outcome);
    } else {
      RakingOptions opt;
      opt.auxiliary_columns = field<std::vector<std::string>>(req, "auxiliary_columns", {});
      if (req.contains("imputation")) opt.imputation = imputation_from_json(req.at("imputation"));
      opt.distance = parse_distance(field<std::string>(req, "distance", "exponential"));
      if (opt.auxiliary_columns.empty() && !opt.imputation) {
        fail(ErrorCode::InvalidArgument, "raking needs 'auxiliary_columns' or an 'imputation' spec");
      }
      r = raking_estimate(cohort, sample, outcome, opt);
    }
    Json res = to_json(r);
    res["phase2_rows"] = sample.n_selected();
    *out_json = dup(res.dump(2));
  });
}

tpsd_status tpsd_simulate(const char* config_json, double time_budget_seconds, tpsd_report** out) {
  return guard([&] {
    require(out, "out");
    auto cfg = tpsd::simulation_from_json(parse(config_json, "config"));
    tpsd::RunControl control;
    if (time_budget_seconds > 0.0) {
      auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(time_budget_seconds);
      control.should_stop = [deadline] { return std::chrono::steady_clock::now() > deadline; };
    }
    *out = new tpsd_report{tpsd::run_mc(cfg, control)};
  });
}

size_t tpsd_report_rows(const tpsd_report* r) { return r ? r->value.rows.size() : 0; }

tpsd_status tpsd_report_format(const tpsd_report* r, const char* format, char** out) {
  return guard([&] {
    require(r, "report");
    require(format, "format");
    require(out, "out");
    *out = dup(tpsd::format_report(r->value, tpsd::parse_report_format(format)));
  });
}

void tpsd_report_free(tpsd_report* r) { delete r; }

tpsd_status tpsd_presets_json(char** out) {
  return guard([&] {
    require(out, "out");
    *out = dup(tpsd::presets_json().dump(2));
  });
}

}  // extern "C"
