#pragma once

#include <Eigen/Dense>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tpsd/cohort.hpp"

namespace tpsd {

enum class Family { Linear, Logistic };

const char* to_string(Family f) noexcept;
Family parse_family(const std::string& s);

/// One model term. Spline terms expand to two columns (slope below/above the
/// knot); interactions multiply single-column factor terms elementwise.
struct Term {
  enum class Kind { Main, Indicator, Spline, Interaction };
  Kind kind = Kind::Main;
  std::string column;
  double knot = 0.0;       // Spline
  double threshold = 0.0;  // Indicator: 1{value > threshold}
  std::vector<Term> factors;

  static Term main(std::string column);
  static Term indicator(std::string column, double threshold);
  static Term spline(std::string column, double knot);
  static Term interaction(std::vector<Term> factors);

  std::vector<std::string> column_names() const;
  void referenced_columns(std::vector<std::string>& out) const;
};

struct ModelSpec {
  Family family = Family::Linear;
  std::string response;
  std::vector<Term> terms;
  /// Design-matrix column whose coefficient is the estimation target; empty
  /// means the first column after the intercept.
  std::string target;

  std::vector<std::string> design_names() const;
  std::size_t target_index() const;
};

struct DesignMatrix {
  Eigen::MatrixXd x;
  std::vector<std::string> names;
};

/// Replacement values for cohort columns (e.g. imputed X), full cohort length.
using ColumnOverrides = std::map<std::string, std::vector<double>>;

/// Builds the design matrix on `rows` (all rows when empty). The intercept is
/// column 0. Throws RankDeficient when the columns are linearly dependent.
DesignMatrix build_design_matrix(const Cohort& cohort, const ModelSpec& spec,
                                 const ColumnOverrides& overrides = {},
                                 std::span<const std::size_t> rows = {});

Eigen::VectorXd response_vector(const Cohort& cohort, const std::string& column,
                                const ColumnOverrides& overrides = {},
                                std::span<const std::size_t> rows = {});

struct FitOptions {
  int max_iterations = 50;
  int max_halvings = 20;
  double score_tolerance = 1e-8;  // relative to the total weight
  double separation_bound = 1e3;
  bool check_rank = true;
};

struct FitResult {
  Family family = Family::Linear;
  Eigen::VectorXd beta;
  Eigen::MatrixXd info;  // (1/sum w) X' W V X
  Eigen::VectorXd fitted;
  bool converged = false;
  int iterations = 0;
  double max_abs_score = 0.0;
  double total_weight = 0.0;
  std::vector<double> objective_trace;  // weighted log-likelihood per iterate
};

/// Solves sum_i w_i d/dbeta log P(y_i | x_i; beta) = 0.
FitResult fit_weighted(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                       Family family, const FitOptions& opt = {},
                       const Eigen::VectorXd* start = nullptr);

Eigen::VectorXd predict(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta, Family family);

double weighted_loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                       const Eigen::VectorXd& beta, Family family);

inline double expit(double t) {
  return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

/// Per-observation influence contributions h_i = I^{-1} x_i (y_i - yhat_i),
/// one row per observation.
Eigen::MatrixXd influence_functions(const FitResult& fit, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

}  // namespace tpsd
