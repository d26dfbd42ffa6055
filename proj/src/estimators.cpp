#include "tpsd/estimators.hpp"

#include <cmath>
#include <random>

#include "tpsd/error.hpp"
#include "tpsd/rng.hpp"

namespace tpsd {

const char* to_string(EstimatorKind k) noexcept { return k == EstimatorKind::Ipw ? "IPW" : "Raking"; }

EstimatorKind parse_estimator(const std::string& s) {
  if (s == "ipw" || s == "IPW") return EstimatorKind::Ipw;
  if (s == "raking" || s == "Raking" || s == "gr" || s == "GR") return EstimatorKind::Raking;
  fail(ErrorCode::InvalidArgument, "unknown estimator '" + s + "'");
}

namespace {

void check_sample(const Cohort& cohort, const SampleIndicator& sample) {
  if (sample.selected.size() != cohort.n_rows() || sample.inclusion_prob.size() != cohort.n_rows()) {
    fail(ErrorCode::InvalidArgument, "sample indicator does not match the cohort");
  }
  for (std::size_t i = 0; i < cohort.n_rows(); ++i) {
    if (sample.selected[i] && !(sample.inclusion_prob[i] > 0.0 && sample.inclusion_prob[i] <= 1.0)) {
      fail(ErrorCode::InvalidArgument, "inclusion probability outside (0,1] at row " + std::to_string(i + 1));
    }
  }
}

Eigen::VectorXd base_weights(const SampleIndicator& sample, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) w(static_cast<Eigen::Index>(j)) = 1.0 / sample.inclusion_prob[rows[j]];
  return w;
}

EstimatorResult weighted_result(EstimatorKind kind, const FitResult& fit, const ModelSpec& spec) {
  EstimatorResult r;
  r.estimator = kind;
  r.beta = fit.beta;
  r.names = spec.design_names();
  r.target_index = spec.target_index();
  r.target_coef = fit.beta(static_cast<Eigen::Index>(r.target_index));
  r.converged = fit.converged && fit.beta.allFinite();
  return r;
}

}  // namespace

EstimatorResult ipw_estimate(const Cohort& cohort, const SampleIndicator& sample, const ModelSpec& spec) {
  check_sample(cohort, sample);
  auto rows = sample.selected_rows();
  DesignMatrix dm = build_design_matrix(cohort, spec, {}, rows);
  Eigen::VectorXd y = response_vector(cohort, spec.response, {}, rows);
  FitResult fit = fit_weighted(dm.x, y, base_weights(sample, rows), spec.family);
  return weighted_result(EstimatorKind::Ipw, fit, spec);
}

std::vector<std::vector<double>> impute_x(const Cohort& cohort, const SampleIndicator& sample,
                                          const ImputationSpec& spec) {
  check_sample(cohort, sample);
  if (spec.m < 1) fail(ErrorCode::InvalidArgument, "imputation needs m >= 1");
  auto rows = sample.selected_rows();
  const auto& model = spec.model;
  DesignMatrix fit_x = build_design_matrix(cohort, model, {}, rows);
  Eigen::VectorXd y = response_vector(cohort, model.response, {}, rows);
  Eigen::VectorXd w = base_weights(sample, rows);
  FitResult fit;
  try {
    fit = fit_weighted(fit_x.x, y, w, model.family);
  } catch (const Error& e) {
    fail(e.code(), std::string("imputation model: ") + e.what());
  }
  DesignMatrix all_x = build_design_matrix(cohort, model);
  const auto& observed = cohort.column(model.response);

  auto finish = [&](Eigen::VectorXd pred) {
    std::vector<double> out(pred.data(), pred.data() + pred.size());
    if (spec.keep_observed) {
      for (auto r : rows) out[r] = observed[r];
    }
    return out;
  };

  std::vector<std::vector<double>> result;
  if (spec.mode == ImputationSpec::Mode::Single) {
    result.push_back(finish(predict(all_x.x, fit.beta, model.family)));
    return result;
  }

  // Large-sample posterior around the weighted fit. Weights are rescaled to
  // sum to the phase-2 size so the posterior spread reflects n, not N.
  const double n2 = static_cast<double>(rows.size());
  const Eigen::Index p = fit.beta.size();
  Eigen::VectorXd wn = w * (n2 / w.sum());
  Rng rng(spec.seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::MatrixXd cov_unit;
  double rss = 0.0, df = n2 - static_cast<double>(p);
  if (model.family == Family::Linear) {
    Eigen::VectorXd e = y - fit_x.x * fit.beta;
    rss = (wn.array() * e.array().square()).sum();
    if (!(df > 0.0)) fail(ErrorCode::Infeasible, "imputation model has no residual degrees of freedom");
    cov_unit = (fit_x.x.transpose() * wn.asDiagonal() * fit_x.x).inverse();
  } else {
    Eigen::VectorXd mu = predict(fit_x.x, fit.beta, model.family);
    Eigen::VectorXd v = wn.cwiseProduct(mu.cwiseProduct((1.0 - mu.array()).matrix()));
    cov_unit = (fit_x.x.transpose() * v.asDiagonal() * fit_x.x).inverse();
  }
  Eigen::LLT<Eigen::MatrixXd> chol(0.5 * (cov_unit + cov_unit.transpose()));
  if (chol.info() != Eigen::Success) fail(ErrorCode::Singular, "imputation posterior covariance is not positive definite");
  Eigen::MatrixXd l = chol.matrixL();

  for (int draw = 0; draw < spec.m; ++draw) {
    Eigen::VectorXd u(p);
    for (Eigen::Index j = 0; j < p; ++j) u(j) = z(rng);
    Eigen::VectorXd pred(all_x.x.rows());
    if (model.family == Family::Linear) {
      std::chi_squared_distribution<double> chi(df);
      double sigma2 = rss / chi(rng);
      Eigen::VectorXd b = fit.beta + std::sqrt(sigma2) * (l * u);
      pred = all_x.x * b;
      double sigma = std::sqrt(sigma2);
      for (Eigen::Index i = 0; i < pred.size(); ++i) pred(i) += sigma * z(rng);
    } else {
      Eigen::VectorXd b = fit.beta + l * u;
      pred = predict(all_x.x, b, model.family);
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      for (Eigen::Index i = 0; i < pred.size(); ++i) pred(i) = unif(rng) < pred(i) ? 1.0 : 0.0;
    }
    result.push_back(finish(std::move(pred)));
  }
  return result;
}

Eigen::MatrixXd imputed_influence(const Cohort& cohort, const SampleIndicator& sample, const ModelSpec& outcome,
                                  const ImputationSpec& imputation) {
  auto imputed = impute_x(cohort, sample, imputation);
  const std::string& x_name = imputation.model.response;
  Eigen::MatrixXd acc;
  Eigen::VectorXd warm;
  ColumnOverrides ov;
  Eigen::VectorXd y = response_vector(cohort, outcome.response);
  for (std::size_t d = 0; d < imputed.size(); ++d) {
    ov[x_name] = std::move(imputed[d]);
    DesignMatrix dm = build_design_matrix(cohort, outcome, ov);
    FitOptions opt;
    opt.check_rank = d == 0;
    FitResult fit = fit_weighted(dm.x, y, Eigen::VectorXd::Ones(dm.x.rows()), outcome.family, opt,
                                 warm.size() ? &warm : nullptr);
    warm = fit.beta;
    Eigen::MatrixXd h = influence_functions(fit, dm.x, y);
    if (d == 0) {
      acc = std::move(h);
    } else {
      acc += h;
    }
  }
  return acc / static_cast<double>(imputed.size());
}

EstimatorResult raking_estimate(const Cohort& cohort, const SampleIndicator& sample, const ModelSpec& outcome,
                                const RakingOptions& options) {
  check_sample(cohort, sample);
  const auto rows = sample.selected_rows();
  const std::size_t big_n = cohort.n_rows();

  // Auxiliaries on the whole cohort, intercept first.
  Eigen::MatrixXd aux;
  EstimatorDiagnostics diag;
  if (!options.auxiliary_columns.empty()) {
    aux.resize(static_cast<Eigen::Index>(big_n), static_cast<Eigen::Index>(options.auxiliary_columns.size() + 1));
    aux.col(0).setOnes();
    for (std::size_t j = 0; j < options.auxiliary_columns.size(); ++j) {
      const auto& name = options.auxiliary_columns[j];
      if (cohort.role(name) == ColumnRole::Phase2) {
        fail(ErrorCode::InvalidArgument, "auxiliary '" + name + "' is a phase-2 column");
      }
      const auto& v = cohort.column(name);
      for (std::size_t i = 0; i < big_n; ++i) aux(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) = v[i];
    }
  } else {
    if (!options.imputation) fail(ErrorCode::InvalidArgument, "raking needs auxiliary columns or an imputation spec");
    Eigen::MatrixXd h = imputed_influence(cohort, sample, outcome, *options.imputation);
    if (options.target_only) {
      auto t = static_cast<Eigen::Index>(outcome.target_index());
      aux.resize(h.rows(), 2);
      aux.col(0).setOnes();
      aux.col(1) = h.col(t);
    } else {
      aux.resize(h.rows(), h.cols() + 1);
      aux.col(0).setOnes();
      aux.rightCols(h.cols()) = h;
    }
  }

  Eigen::VectorXd totals = aux.colwise().sum().transpose();
  Eigen::MatrixXd s(static_cast<Eigen::Index>(rows.size()), aux.cols());
  for (std::size_t j = 0; j < rows.size(); ++j) s.row(static_cast<Eigen::Index>(j)) = aux.row(static_cast<Eigen::Index>(rows[j]));
  Eigen::VectorXd base = base_weights(sample, rows);

  CalibrationResult cal;
  bool calibrated = false;
  try {
    cal = calibrate(base, s, totals, options.distance, options.calibration);
    calibrated = cal.converged;
    diag.calibration_converged = cal.converged;
    diag.calibration_residual = cal.constraint_residual;
    diag.calibration_iterations = cal.iterations;
    diag.negative_weights = cal.negative_weights;
    if (!cal.converged) diag.message = "calibration did not reach tolerance";
  } catch (const Error& e) {
    diag.message = std::string("calibration failed: ") + e.what();
  }
  if (calibrated && cal.negative_weights) {
    calibrated = false;
    diag.message = "calibration produced negative weights";
  }

  if (!calibrated) {
    EstimatorResult r = ipw_estimate(cohort, sample, outcome);
    r.estimator = EstimatorKind::Raking;
    diag.fell_back_to_ipw = true;
    r.diagnostics = diag;
    return r;
  }

  DesignMatrix dm = build_design_matrix(cohort, outcome, {}, rows);
  Eigen::VectorXd y = response_vector(cohort, outcome.response, {}, rows);
  FitResult fit = fit_weighted(dm.x, y, cal.weights, outcome.family);
  EstimatorResult r = weighted_result(EstimatorKind::Raking, fit, outcome);
  r.diagnostics = diag;
  return r;
}

}  // namespace tpsd
