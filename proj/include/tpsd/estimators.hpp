#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tpsd/calibration.hpp"
#include "tpsd/cohort.hpp"
#include "tpsd/glm.hpp"

namespace tpsd {

enum class EstimatorKind { Ipw, Raking };

const char* to_string(EstimatorKind k) noexcept;
EstimatorKind parse_estimator(const std::string& s);

struct ImputationSpec {
  enum class Mode { Single, Multiple };
  ModelSpec model;  // response = the phase-2 variable; predictors phase-1 only
  Mode mode = Mode::Single;
  int m = 1;
  std::uint64_t seed = 0;
  /// Selected rows keep their observed value instead of the imputation.
  bool keep_observed = false;
};

struct EstimatorDiagnostics {
  bool calibration_converged = false;
  double calibration_residual = 0.0;
  int calibration_iterations = 0;
  bool negative_weights = false;
  bool fell_back_to_ipw = false;
  bool imputation_converged = true;
  std::string message;
};

struct EstimatorResult {
  EstimatorKind estimator = EstimatorKind::Ipw;
  Eigen::VectorXd beta;
  std::vector<std::string> names;
  std::size_t target_index = 1;
  double target_coef = 0.0;
  bool converged = false;
  EstimatorDiagnostics diagnostics;
};

/// Weighted fit on the selected rows with weights 1/pi.
EstimatorResult ipw_estimate(const Cohort& cohort, const SampleIndicator& sample, const ModelSpec& spec);

/// Imputes the phase-2 variable for every row from a model fitted on the
/// selected rows (weights 1/pi). Returns one column (single) or m columns.
/// Multiple mode draws coefficients (and the residual variance for the linear
/// family) around the single weighted fit.
std::vector<std::vector<double>> impute_x(const Cohort& cohort, const SampleIndicator& sample,
                                          const ImputationSpec& spec);

/// Influence functions of the outcome model fitted on the whole cohort with
/// the phase-2 variable replaced by its imputation(s); averaged over
/// imputations. One row per cohort row.
Eigen::MatrixXd imputed_influence(const Cohort& cohort, const SampleIndicator& sample, const ModelSpec& outcome,
                                  const ImputationSpec& imputation);

struct RakingOptions {
  Distance distance = Distance::Exponential;
  /// Auxiliaries taken directly from these cohort columns; when empty they
  /// come from the imputation pipeline.
  std::vector<std::string> auxiliary_columns;
  std::optional<ImputationSpec> imputation;
  /// Use only the target column of the influence matrix as auxiliary.
  bool target_only = false;
  CalibrationOptions calibration;
};

/// Generalized raking: auxiliaries (with an intercept) are calibrated from
/// 1/pi to their cohort totals, then the outcome model is refitted on the
/// selected rows with the calibrated weights. A calibration failure falls back
/// to the IPW estimate and sets diagnostics.fell_back_to_ipw.
EstimatorResult raking_estimate(const Cohort& cohort, const SampleIndicator& sample, const ModelSpec& outcome,
                                const RakingOptions& options);

}  // namespace tpsd
