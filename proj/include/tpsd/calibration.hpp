#pragma once

#include <Eigen/Dense>
#include <string>

namespace tpsd {

/// ChiSquare: d(a,b) = (a-b)^2 / 2b  (GREG).
/// Exponential: d(a,b) = a log(a/b) - a + b  (raking; weights stay positive).
enum class Distance { ChiSquare, Exponential };

const char* to_string(Distance d) noexcept;
Distance parse_distance(const std::string& s);

struct CalibrationOptions {
  int max_iterations = 100;
  int max_halvings = 30;
  int divergence_limit = 5;
  double tolerance = 1e-8;
};

struct CalibrationResult {
  Eigen::VectorXd weights;
  Eigen::VectorXd lambda;
  bool converged = false;
  /// max_j |sum_i w_i S_ij - T_j| / max(|T_j|, sum_i d_i |S_ij|)
  double constraint_residual = 0.0;
  bool negative_weights = false;
  int iterations = 0;
};

/// Minimises sum_i d(w_i, base_i) subject to sum_i w_i S_i = totals, where the
/// rows of `s` are the sampled units' auxiliaries and base_i = 1/pi_i.
CalibrationResult calibrate(const Eigen::VectorXd& base, const Eigen::MatrixXd& s, const Eigen::VectorXd& totals,
                            Distance distance, const CalibrationOptions& opt = {});

/// Relative constraint gap as reported in CalibrationResult.
double constraint_gap(const Eigen::VectorXd& weights, const Eigen::VectorXd& base, const Eigen::MatrixXd& s,
                      const Eigen::VectorXd& totals);

/// Calibrated total sum_i w_i y_i.
double greg_total(const Eigen::VectorXd& y, const CalibrationResult& result);

}  // namespace tpsd
