#include "tpsd/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "tpsd/error.hpp"

namespace tpsd {

const char* to_string(Series s) noexcept {
  switch (s) {
    case Series::One: return "1";
    case Series::Two: return "2";
    case Series::Three: return "3";
    case Series::Four: return "4";
    case Series::Nwts: return "nwts";
  }
  return "?";
}

Series parse_series(const std::string& s) {
  if (s == "1") return Series::One;
  if (s == "2") return Series::Two;
  if (s == "3") return Series::Three;
  if (s == "4") return Series::Four;
  if (s == "nwts" || s == "NWTS") return Series::Nwts;
  fail(ErrorCode::InvalidArgument, "unknown series '" + s + "'");
}

ScenarioSpec ScenarioSpec::defaults(Series s) {
  ScenarioSpec spec;
  spec.series = s;
  switch (s) {
    case Series::One:
      spec.beta = {1.0, 1.0, 1.0};
      break;
    case Series::Two:
      spec.beta = {1.0, 1.0, 1.0, 1.0};
      break;
    case Series::Three:
      spec.beta = {-1.5, 1.0, 1.0};
      break;
    case Series::Four:
      spec.cohort_size = 10000;
      spec.phase2_size = 0;
      spec.beta = {0.0, 1.0, 1.0};  // beta0 is solved from the prevalence
      break;
    case Series::Nwts:
      spec.cohort_size = 3915;
      spec.phase2_size = 1338;
      break;
  }
  return spec;
}

void ScenarioSpec::validate() const {
  auto need_beta = [&](std::size_t p) {
    if (beta.size() != p) {
      fail(ErrorCode::InvalidArgument, "series " + std::string(to_string(series)) + " needs " +
                                           std::to_string(p) + " coefficients, got " + std::to_string(beta.size()));
    }
    for (double b : beta) {
      if (!std::isfinite(b)) fail(ErrorCode::InvalidArgument, "coefficients must be finite");
    }
  };
  if (series != Series::Nwts && cohort_size < 50) fail(ErrorCode::InvalidArgument, "cohort size must be at least 50");
  if (phase2_size > cohort_size && series != Series::Nwts) {
    fail(ErrorCode::Infeasible, "phase-2 size exceeds the cohort size");
  }
  if (phase2_size == 0 && series != Series::Four) fail(ErrorCode::InvalidArgument, "phase-2 size must be positive");
  if (design_imputations < 1 || analysis_imputations < 1) {
    fail(ErrorCode::InvalidArgument, "imputation counts must be at least 1");
  }
  switch (series) {
    case Series::One:
      need_beta(3);
      if (!(rho >= 0.0 && rho <= 1.0)) fail(ErrorCode::InvalidArgument, "rho must lie in [0, 1]");
      if (!(tail_residual_multiplier >= 0.0)) fail(ErrorCode::InvalidArgument, "tail multiplier must be >= 0");
      break;
    case Series::Two:
    case Series::Three:
      need_beta(series == Series::Two ? 4 : 3);
      if (!(sigma > 0.0) || !std::isfinite(sigma)) fail(ErrorCode::InvalidArgument, "sigma must be positive");
      break;
    case Series::Four:
      need_beta(3);
      if (!(sensitivity > 0.0 && sensitivity <= 1.0) || !(specificity > 0.0 && specificity <= 1.0)) {
        fail(ErrorCode::InvalidArgument, "sensitivity and specificity must lie in (0, 1]");
      }
      if (!(prevalence > 0.0 && prevalence < 0.5)) fail(ErrorCode::InvalidArgument, "prevalence must lie in (0, 0.5)");
      break;
    case Series::Nwts:
      if (phase2_size > 3915) fail(ErrorCode::Infeasible, "phase-2 size exceeds the cohort size");
      break;
  }
}

std::string ScenarioSpec::label() const {
  std::ostringstream os;
  os << std::setprecision(6);
  switch (series) {
    case Series::One:
      os << "rho=" << rho;
      if (tail_residual_multiplier > 0.0) os << ";tail=" << tail_residual_multiplier;
      break;
    case Series::Two:
    case Series::Three:
      os << "sigma=" << sigma << ";beta1=" << beta.at(1);
      break;
    case Series::Four:
      os << "sens=" << sensitivity << ";spec=" << specificity << ";beta1=" << beta.at(1);
      break;
    case Series::Nwts:
      os << "nwts";
      break;
  }
  return os.str();
}

namespace {

std::vector<double> normal_column(std::size_t n, double sd, Rng& rng) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

std::vector<double> bernoulli_column(std::size_t n, double p, Rng& rng) {
  std::bernoulli_distribution d(p);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng) ? 1.0 : 0.0;
  return v;
}

void standardize(std::vector<double>& v) {
  double n = static_cast<double>(v.size());
  double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0)) fail(ErrorCode::Singular, "cannot standardize a constant column");
  for (auto& x : v) x = (x - mean) / sd;
}

SampleIndicator census(std::size_t n) {
  SampleIndicator s;
  s.selected.assign(n, 1);
  s.inclusion_prob.assign(n, 1.0);
  return s;
}

std::vector<double> imputed_target_influence(const Cohort& cohort, const ModelSpec& outcome, ImputationSpec imp,
                                             int m, Rng& rng) {
  imp.mode = m > 1 ? ImputationSpec::Mode::Multiple : ImputationSpec::Mode::Single;
  imp.m = m;
  imp.seed = rng();
  Eigen::MatrixXd inf = imputed_influence(cohort, census(cohort.n_rows()), outcome, imp);
  Eigen::VectorXd col = inf.col(static_cast<Eigen::Index>(outcome.target_index()));
  return {col.data(), col.data() + col.size()};
}

ModelSpec linear_model(std::string response, std::vector<std::string> predictors, Family family) {
  ModelSpec m;
  m.family = family;
  m.response = std::move(response);
  for (auto& p : predictors) m.terms.push_back(Term::main(std::move(p)));
  return m;
}

void finish_scenario(Scenario& sc, Rng& rng) {
  sc.h = full_data_influence(sc.cohort, sc.outcome);
  if (sc.imputation) {
    sc.h_hat = imputed_target_influence(sc.cohort, sc.outcome, *sc.imputation, sc.spec.design_imputations, rng);
    if (sc.spec.analysis_imputations > 1) {
      sc.imputation->mode = ImputationSpec::Mode::Multiple;
      sc.imputation->m = sc.spec.analysis_imputations;
    }
    sc.imputation->seed = rng();
  }
}

Scenario series_one(const ScenarioSpec& spec, Rng& rng) {
  const std::size_t n = spec.cohort_size;
  Scenario sc;
  sc.spec = spec;
  auto x = normal_column(n, 1.0, rng);
  auto z = bernoulli_column(n, 0.5, rng);
  auto eps = normal_column(n, 1.0, rng);
  auto xi = normal_column(n, 1.0, rng);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = spec.beta[0] + spec.beta[1] * x[i] + spec.beta[2] * z[i] + eps[i];

  sc.cohort = Cohort(n);
  sc.cohort.set_column("y", std::move(y), ColumnRole::Outcome);
  sc.cohort.set_column("x", std::move(x), ColumnRole::Phase2);
  sc.cohort.set_column("z", std::move(z), ColumnRole::Phase1);
  sc.outcome = linear_model("y", {"x", "z"}, Family::Linear);
  sc.h = full_data_influence(sc.cohort, sc.outcome);

  std::vector<double> hstar = sc.h;
  standardize(hstar);
  const double c = std::sqrt(std::max(0.0, 1.0 - spec.rho * spec.rho));
  for (std::size_t i = 0; i < n; ++i) hstar[i] = spec.rho * hstar[i] + c * xi[i];
  standardize(hstar);
  sc.cohort.set_column("hstar", hstar, ColumnRole::Auxiliary);
  sc.strata = stratify(sc.cohort, StratificationRule::quantile("hstar", {0.35, 0.65}, {1, 0, 1}));

  if (spec.tail_residual_multiplier > 0.0) {
    // Residual of the least-squares line of h on h*; the tail stratum gets a
    // larger multiple of it.
    double mh = std::accumulate(sc.h.begin(), sc.h.end(), 0.0) / static_cast<double>(n);
    double ms = std::accumulate(hstar.begin(), hstar.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sxy += (hstar[i] - ms) * (sc.h[i] - mh);
      sxx += (hstar[i] - ms) * (hstar[i] - ms);
    }
    double slope = sxy / sxx;
    std::vector<double> alt(n);
    for (std::size_t i = 0; i < n; ++i) {
      double r = sc.h[i] - (mh + slope * (hstar[i] - ms));
      double mult = sc.strata.assignment[i] == 1 ? spec.tail_residual_multiplier : 1.0;
      alt[i] = sc.h[i] - mult * r;
    }
    sc.cohort.set_column("hstar", alt, ColumnRole::Auxiliary);
    hstar = std::move(alt);
  }
  sc.h_hat = std::move(hstar);
  sc.auxiliary_columns = {"hstar"};
  sc.truth = spec.beta[1];
  sc.mse_scale = 1000.0;
  return sc;
}

Scenario series_two_three(const ScenarioSpec& spec, Rng& rng) {
  const std::size_t n = spec.cohort_size;
  const bool logistic = spec.series == Series::Three;
  Scenario sc;
  sc.spec = spec;
  auto x = normal_column(n, 1.0, rng);
  auto u = normal_column(n, spec.sigma, rng);
  auto z1 = bernoulli_column(n, 0.5, rng);
  std::vector<double> xt(n), y(n), z2;
  for (std::size_t i = 0; i < n; ++i) xt[i] = x[i] + u[i];
  if (logistic) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      double p = expit(spec.beta[0] + spec.beta[1] * x[i] + spec.beta[2] * z1[i]);
      y[i] = unif(rng) < p ? 1.0 : 0.0;
    }
  } else {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    z2.resize(n);
    for (auto& v : z2) v = unif(rng);
    auto eps = normal_column(n, 1.0, rng);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = spec.beta[0] + spec.beta[1] * x[i] + spec.beta[2] * z1[i] + spec.beta[3] * z2[i] + eps[i];
    }
  }

  sc.cohort = Cohort(n);
  sc.cohort.set_column("y", std::move(y), ColumnRole::Outcome);
  sc.cohort.set_column("x", std::move(x), ColumnRole::Phase2);
  sc.cohort.set_column("xt", std::move(xt), ColumnRole::Auxiliary);
  sc.cohort.set_column("z1", std::move(z1), ColumnRole::Phase1);
  ImputationSpec imp;
  if (logistic) {
    sc.outcome = linear_model("y", {"x", "z1"}, Family::Logistic);
    imp.model = linear_model("x", {"xt", "z1"}, Family::Linear);
    StratificationRule rule = StratificationRule::cross({"y", "xt"});
    rule.breakpoints = {{}, {0.25, 0.75}};
    sc.strata = stratify(sc.cohort, rule);
  } else {
    sc.cohort.set_column("z2", std::move(z2), ColumnRole::Phase1);
    sc.outcome = linear_model("y", {"x", "z1", "z2"}, Family::Linear);
    imp.model = linear_model("x", {"xt", "z1", "z2"}, Family::Linear);
    sc.strata = stratify(sc.cohort, StratificationRule::quantile("xt", {0.2, 0.8}));
  }
  sc.imputation = imp;
  sc.truth = spec.beta[1];
  sc.mse_scale = 1000.0;
  finish_scenario(sc, rng);
  return sc;
}

Scenario series_four(const ScenarioSpec& spec, Rng& rng) {
  const std::size_t n = spec.cohort_size;
  Scenario sc;
  sc.spec = spec;
  const double b0 = series4_intercept(spec.prevalence, spec.beta[1], spec.beta[2]);
  sc.spec.beta[0] = b0;
  auto x = bernoulli_column(n, 0.4, rng);
  auto z1 = bernoulli_column(n, 0.5, rng);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> xt(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    bool correct = unif(rng) < (x[i] == 1.0 ? spec.sensitivity : spec.specificity);
    xt[i] = correct ? x[i] : 1.0 - x[i];
    y[i] = unif(rng) < expit(b0 - spec.beta[1] * x[i] + spec.beta[2] * z1[i]) ? 1.0 : 0.0;
  }
  sc.cohort = Cohort(n);
  sc.cohort.set_column("y", y, ColumnRole::Outcome);
  sc.cohort.set_column("x", std::move(x), ColumnRole::Phase2);
  sc.cohort.set_column("xt", std::move(xt), ColumnRole::Auxiliary);
  sc.cohort.set_column("z1", std::move(z1), ColumnRole::Phase1);
  sc.strata = stratify(sc.cohort, StratificationRule::cross({"y", "xt"}));
  sc.outcome = linear_model("y", {"x", "z1"}, Family::Logistic);
  ImputationSpec imp;
  imp.model = linear_model("x", {"xt", "z1"}, Family::Logistic);
  sc.imputation = imp;
  sc.case_column = "y";
  sc.truth = -spec.beta[1];
  sc.mse_scale = 100.0;
  finish_scenario(sc, rng);
  return sc;
}

Scenario nwts(const ScenarioSpec& spec, Rng& rng) {
  Scenario sc;
  sc.spec = spec;
  sc.spec.cohort_size = 3915;
  sc.cohort = nwts_synthetic_cohort(spec.cohort_seed);
  sc.strata = stratify(sc.cohort, StratificationRule::cross({"relapse", "instit"}));
  sc.outcome = nwts_outcome_model();
  sc.imputation = nwts_imputation_model();
  sc.case_column = "relapse";
  sc.mse_scale = 100.0;
  DesignMatrix dm = build_design_matrix(sc.cohort, sc.outcome);
  Eigen::VectorXd yv = response_vector(sc.cohort, sc.outcome.response);
  FitResult fit = fit_weighted(dm.x, yv, Eigen::VectorXd::Ones(yv.size()), Family::Logistic);
  if (!fit.converged) fail(ErrorCode::NonConvergence, "full-cohort fit did not converge");
  sc.truth = fit.beta(static_cast<Eigen::Index>(sc.outcome.target_index()));
  finish_scenario(sc, rng);
  return sc;
}

}  // namespace

double series4_intercept(double prevalence, double beta1, double beta2) {
  auto mean_y = [&](double b0) {
    double m = 0.0;
    for (int x = 0; x <= 1; ++x) {
      for (int z = 0; z <= 1; ++z) m += (x ? 0.4 : 0.6) * 0.5 * expit(b0 - beta1 * x + beta2 * z);
    }
    return m;
  };
  double lo = -60.0, hi = 60.0;
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    double mid = 0.5 * (lo + hi);
    (mean_y(mid) < prevalence ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<double> full_data_influence(const Cohort& cohort, const ModelSpec& outcome) {
  DesignMatrix dm = build_design_matrix(cohort, outcome);
  Eigen::VectorXd y = response_vector(cohort, outcome.response);
  FitResult fit = fit_weighted(dm.x, y, Eigen::VectorXd::Ones(y.size()), outcome.family);
  Eigen::MatrixXd inf = influence_functions(fit, dm.x, y);
  Eigen::VectorXd col = inf.col(static_cast<Eigen::Index>(outcome.target_index()));
  return {col.data(), col.data() + col.size()};
}

Schema nwts_schema() {
  return {{"relapse", ColumnRole::Outcome}, {"instit", ColumnRole::Auxiliary}, {"histol", ColumnRole::Phase2},
          {"age", ColumnRole::Phase1},      {"stage", ColumnRole::Phase1},     {"study", ColumnRole::Phase1},
          {"tumdiam", ColumnRole::Phase1}};
}

ModelSpec nwts_outcome_model() {
  ModelSpec m;
  m.family = Family::Logistic;
  m.response = "relapse";
  m.terms = {Term::main("histol"), Term::spline("age", 1.0), Term::indicator("stage", 2.0), Term::main("tumdiam"),
             Term::interaction({Term::indicator("stage", 2.0), Term::main("tumdiam")})};
  m.target = "histol";
  return m;
}

ImputationSpec nwts_imputation_model() {
  ImputationSpec imp;
  imp.model.family = Family::Logistic;
  imp.model.response = "histol";
  imp.model.terms = {Term::main("instit"), Term::indicator("age", 10.0), Term::indicator("study", 3.0),
                     Term::indicator("stage", 3.0),
                     Term::interaction({Term::indicator("study", 3.0), Term::indicator("stage", 3.0)})};
  return imp;
}

Cohort nwts_synthetic_cohort(std::uint64_t seed) {
  constexpr std::size_t n = 3915;
  constexpr std::size_t unfav_instit = 220 + 162;
  constexpr std::size_t relapse_by_instit[2] = {507, 162};
  Rng rng(derive_seed(seed, {0x4E575453}));
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<double> instit(n, 0.0);
  std::fill(instit.begin(), instit.begin() + unfav_instit, 1.0);
  std::shuffle(instit.begin(), instit.end(), rng);

  std::vector<double> histol(n), age(n), stage(n), study(n), tumdiam(n), latent(n);
  std::gamma_distribution<double> age_d(1.6, 2.2), diam_d(4.0, 2.4);
  std::discrete_distribution<int> stage_d({0.40, 0.25, 0.22, 0.13});
  for (std::size_t i = 0; i < n; ++i) {
    histol[i] = unif(rng) < (instit[i] == 1.0 ? 0.86 : 0.035) ? 1.0 : 0.0;
    age[i] = std::clamp(std::round(age_d(rng) * 12.0) / 12.0, 1.0 / 12.0, 15.0);
    stage[i] = 1.0 + stage_d(rng);
    study[i] = unif(rng) < 0.6 ? 4.0 : 3.0;
    tumdiam[i] = std::clamp(std::round(2.0 + diam_d(rng)), 1.0, 30.0);
    double adv = stage[i] > 2.0 ? 1.0 : 0.0;
    double eta = 1.2 * histol[i] - 0.6 * std::min(age[i], 1.0) + 0.08 * std::max(age[i] - 1.0, 0.0) + 1.4 * adv +
                 0.03 * tumdiam[i] - 0.07 * adv * tumdiam[i];
    double u = std::clamp(unif(rng), 1e-12, 1.0 - 1e-12);
    latent[i] = eta + std::log(u / (1.0 - u));
  }

  // The largest latent values within each institutional-histology group relapse.
  std::vector<double> relapse(n, 0.0);
  for (int g = 0; g <= 1; ++g) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i) {
      if (instit[i] == static_cast<double>(g)) rows.push_back(i);
    }
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) { return latent[a] > latent[b]; });
    for (std::size_t j = 0; j < relapse_by_instit[g]; ++j) relapse[rows[j]] = 1.0;
  }

  Cohort c(n);
  c.set_column("relapse", std::move(relapse), ColumnRole::Outcome);
  c.set_column("instit", std::move(instit), ColumnRole::Auxiliary);
  c.set_column("histol", std::move(histol), ColumnRole::Phase2);
  c.set_column("age", std::move(age), ColumnRole::Phase1);
  c.set_column("stage", std::move(stage), ColumnRole::Phase1);
  c.set_column("study", std::move(study), ColumnRole::Phase1);
  c.set_column("tumdiam", std::move(tumdiam), ColumnRole::Phase1);
  return c;
}

Scenario generate(const ScenarioSpec& spec, Rng& rng) {
  spec.validate();
  switch (spec.series) {
    case Series::One: return series_one(spec, rng);
    case Series::Two:
    case Series::Three: return series_two_three(spec, rng);
    case Series::Four: return series_four(spec, rng);
    case Series::Nwts: return nwts(spec, rng);
  }
  fail(ErrorCode::InvalidArgument, "unknown series");
}

}  // namespace tpsd
