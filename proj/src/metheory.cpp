#include "tpsd/metheory.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "tpsd/error.hpp"
#include "tpsd/glm.hpp"

namespace tpsd {

void ClassicalMEModel::validate() const {
  if (!(sigma_u >= 0.0) || !(var_x > 0.0)) fail(ErrorCode::InvalidArgument, "measurement-error model needs sigma_u >= 0, var_x > 0");
}

namespace {

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance_of(std::span<const double> v) {
  double m = mean_of(v), ss = 0.0;
  for (double a : v) ss += (a - m) * (a - m);
  return ss / static_cast<double>(v.size() - 1);
}

double covariance_of(std::span<const double> a, std::span<const double> b) {
  double ma = mean_of(a), mb = mean_of(b), s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / static_cast<double>(a.size() - 1);
}

}  // namespace

std::vector<double> residual_variance_ratio(const ClassicalMEModel& me, bool stratified_on_y, std::size_t k,
                                            std::span<const MeStratumSample> data, double mu) {
  me.validate();
  if (stratified_on_y) {
    if (k == 0) fail(ErrorCode::InvalidArgument, "need at least one stratum");
    return std::vector<double>(k, me.sigma_u * me.sigma_u / me.var_x);
  }
  if (data.empty() || (k != 0 && data.size() != k)) fail(ErrorCode::EmptyStratum, "missing stratum data");
  if (std::isnan(mu)) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& s : data) {
      sum += std::accumulate(s.y.begin(), s.y.end(), 0.0);
      count += s.y.size();
    }
    mu = sum / static_cast<double>(count);
  }
  std::vector<double> out;
  for (const auto& s : data) {
    if (s.y.size() < 2 || s.x.size() != s.y.size() || s.u.size() != s.y.size()) {
      fail(ErrorCode::EmptyStratum, "stratum data must hold at least two matched (X,U,Y) draws");
    }
    std::vector<double> num(s.y.size()), den(s.y.size());
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      num[i] = s.u[i] * (s.y[i] - mu);
      den[i] = s.x[i] * (s.y[i] - mu);
    }
    double vd = variance_of(den);
    if (!(vd > 0.0)) fail(ErrorCode::Singular, "var(X(Y-mu)) is zero in a stratum");
    out.push_back(variance_of(num) / vd);
  }
  return out;
}

double surrogate_gamma(std::span<const double> x, std::span<const double> x_tilde, std::span<const double> y,
                        double mu, double lambda) {
  if (x.size() != y.size() || x_tilde.size() != y.size() || y.size() < 3) {
    fail(ErrorCode::InvalidArgument, "surrogate_gamma: need matched samples");
  }
  if (std::isnan(mu)) mu = mean_of(y);
  if (std::isnan(lambda)) {
    double vt = variance_of(x_tilde);
    if (!(vt > 0.0)) fail(ErrorCode::Singular, "var(X~) is zero");
    lambda = variance_of(x) / vt;
  }
  std::vector<double> a(y.size()), b(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    a[i] = lambda * x_tilde[i] * (y[i] - mu);
    b[i] = x[i] * (y[i] - mu);
  }
  double va = variance_of(a);
  if (!(va > 0.0)) fail(ErrorCode::Singular, "var(lambda X~ (Y-mu)) is zero");
  return covariance_of(a, b) / va;
}

std::pair<double, double> case_control_balance(std::span<const double> x, std::span<const double> y,
                                               std::span<const double> p) {
  if (x.size() != y.size() || p.size() != y.size()) fail(ErrorCode::InvalidArgument, "case_control_balance: length mismatch");
  std::vector<double> cases, controls;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 1.0) {
      cases.push_back(x[i] * (1.0 - p[i]));
    } else {
      controls.push_back(-x[i] * p[i]);
    }
  }
  if (cases.empty()) fail(ErrorCode::EmptyStratum, "no cases present");
  if (controls.empty()) fail(ErrorCode::EmptyStratum, "no controls present");
  auto sd = [](const std::vector<double>& v) { return v.size() < 2 ? 0.0 : std::sqrt(variance_of(v)); };
  return {static_cast<double>(cases.size()) * sd(cases), static_cast<double>(controls.size()) * sd(controls)};
}

MeCohortSample simulate_classical_me(std::size_t n, const ClassicalMEModel& me, double beta1, Rng& rng) {
  me.validate();
  std::normal_distribution<double> z(0.0, 1.0);
  MeCohortSample s;
  s.x.resize(n);
  s.u.resize(n);
  s.x_tilde.resize(n);
  s.y.resize(n);
  const double sx = std::sqrt(me.var_x);
  for (std::size_t i = 0; i < n; ++i) {
    s.x[i] = sx * z(rng);
    s.u[i] = me.sigma_u * z(rng);
    s.x_tilde[i] = s.x[i] + s.u[i];
    s.y[i] = beta1 * s.x[i] + z(rng);
  }
  return s;
}

RareDiseaseSample simulate_rare_disease(std::size_t n, double p0, double beta1, Rng& rng) {
  if (!(p0 > 0.0 && p0 < 1.0)) fail(ErrorCode::InvalidArgument, "prevalence must lie in (0,1)");
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  RareDiseaseSample s;
  s.x.resize(n);
  for (auto& v : s.x) v = z(rng);
  auto avg_risk = [&](double b0) {
    double acc = 0.0;
    for (double v : s.x) acc += expit(b0 + beta1 * v);
    return acc / static_cast<double>(n);
  };
  double lo = -50.0, hi = 50.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (avg_risk(mid) < p0 ? lo : hi) = mid;
  }
  s.beta0 = 0.5 * (lo + hi);
  s.y.resize(n);
  s.p.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.p[i] = expit(s.beta0 + beta1 * s.x[i]);
    s.y[i] = unif(rng) < s.p[i] ? 1.0 : 0.0;
  }
  return s;
}

NullDesignComparison compare_designs_on_y_strata(const MeCohortSample& data, const ClassicalMEModel& me,
                                                 std::vector<double> y_breakpoints, std::size_t n,
                                                 std::size_t min_per_stratum) {
  const std::size_t big_n = data.y.size();
  Cohort cohort(big_n);
  cohort.set_column("y", data.y, ColumnRole::Outcome);
  cohort.set_column("x", data.x, ColumnRole::Phase1);
  std::vector<double> calibrated(big_n);
  for (std::size_t i = 0; i < big_n; ++i) calibrated[i] = me.lambda() * data.x_tilde[i];
  cohort.set_column("x_rc", std::move(calibrated), ColumnRole::Phase1);
  StratumIndex strata = stratify(cohort, StratificationRule::quantile("y", std::move(y_breakpoints)));

  auto slope_influence = [&](const std::string& col) {
    ModelSpec spec{Family::Linear, "y", {Term::main(col)}, ""};
    DesignMatrix dm = build_design_matrix(cohort, spec);
    Eigen::VectorXd y = response_vector(cohort, "y");
    FitResult fit = fit_weighted(dm.x, y, Eigen::VectorXd::Ones(dm.x.rows()), Family::Linear);
    Eigen::VectorXd h = influence_functions(fit, dm.x, y).col(1);
    return std::vector<double>(h.data(), h.data() + h.size());
  };
  std::vector<double> h = slope_influence("x");
  std::vector<double> h_hat = slope_influence("x_rc");

  NullDesignComparison out;
  out.if_ipw = if_ipw_allocation(h, strata, n, min_per_stratum);
  out.if_gr = if_gr_allocation(h, h_hat, strata, n, min_per_stratum);
  out.gamma = out.if_gr.policy.gamma.value_or(0.0);

  double mh = mean_of(h), mhat = mean_of(h_hat);
  std::vector<double> r(big_n);
  for (std::size_t i = 0; i < big_n; ++i) r[i] = (h[i] - mh) - out.gamma * (h_hat[i] - mhat);
  auto sd_r = within_stratum_sd(r, strata);
  auto sd_h = within_stratum_sd(h, strata);
  for (std::size_t k = 0; k < strata.k; ++k) {
    out.ratio_regression.push_back(sd_r[k] * sd_r[k] / (sd_h[k] * sd_h[k]));
  }

  std::vector<MeStratumSample> per(strata.k);
  for (std::size_t k = 0; k < strata.k; ++k) {
    for (auto row : strata.members[k]) {
      per[k].x.push_back(data.x[row]);
      per[k].u.push_back(data.u[row]);
      per[k].y.push_back(data.y[row]);
    }
  }
  out.ratio_error_form = residual_variance_ratio(me, false, strata.k, per);
  return out;
}

}  // namespace tpsd
