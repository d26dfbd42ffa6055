#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "tpsd/allocation.hpp"
#include "tpsd/rng.hpp"

namespace tpsd {

/// Classical additive error: X~ = X + U, U independent with variance sigma_u^2.
struct ClassicalMEModel {
  double sigma_u = 0.0;
  double var_x = 1.0;

  /// Reliability ratio var(X) / var(X~).
  double lambda() const { return var_x / (var_x + sigma_u * sigma_u); }
  void validate() const;
};

/// Draws of (X, U, Y) falling in one stratum.
struct MeStratumSample {
  std::vector<double> x;
  std::vector<double> u;
  std::vector<double> y;
};

/// Per-stratum var(r)/var(h(0)) at beta = 0. With strata defined by Y the
/// ratio is the constant sigma_u^2 / var_x; otherwise it is estimated as
/// var(U(Y-mu)) / var(X(Y-mu)) within each stratum, mu = mean of Y over all
/// supplied strata unless given.
std::vector<double> residual_variance_ratio(const ClassicalMEModel& me, bool stratified_on_y, std::size_t k,
                                            std::span<const MeStratumSample> data = {},
                                            double mu = std::numeric_limits<double>::quiet_NaN());

/// cov(lambda X~ (Y-mu), X (Y-mu)) / var(lambda X~ (Y-mu)); lambda defaults to
/// the empirical var(X)/var(X~) and mu to mean(Y).
double surrogate_gamma(std::span<const double> x, std::span<const double> x_tilde, std::span<const double> y,
                        double mu = std::numeric_limits<double>::quiet_NaN(),
                        double lambda = std::numeric_limits<double>::quiet_NaN());

/// Neyman weights (N_case sd_case, N_control sd_control) of the logistic
/// contributions X(1-p) on cases and -X p on controls.
std::pair<double, double> case_control_balance(std::span<const double> x, std::span<const double> y,
                                               std::span<const double> p);

// Simulation hooks

struct MeCohortSample {
  std::vector<double> x, u, x_tilde, y;
};

/// X ~ N(0, var_x), U ~ N(0, sigma_u^2), Y = beta1 X + e, e ~ N(0, 1).
MeCohortSample simulate_classical_me(std::size_t n, const ClassicalMEModel& me, double beta1, Rng& rng);

struct RareDiseaseSample {
  std::vector<double> x, y, p;
  double beta0 = 0.0;
};

/// X ~ N(0,1), Y ~ Bern(expit(beta0 + beta1 X)); beta0 solved on the drawn X
/// so the average risk equals p0.
RareDiseaseSample simulate_rare_disease(std::size_t n, double p0, double beta1, Rng& rng);

struct NullDesignComparison {
  /// var(U(Y-mu)) / var(X(Y-mu)) per stratum: the residual taken as -U(Y-mu).
  std::vector<double> ratio_error_form;
  /// var(r) / var(h) per stratum with r the least-squares residual of h on
  /// h_hat; its limit is sigma_u^2 / var(X~), constant across strata.
  std::vector<double> ratio_regression;
  double gamma = 0.0;
  Allocation if_ipw;
  Allocation if_gr;
};

/// Strata at quantiles of Y; h is the full-data influence function of the
/// slope of Y on X, h_hat the same with X replaced by its regression
/// calibration lambda X~. Compares the two optimal designs.
NullDesignComparison compare_designs_on_y_strata(const MeCohortSample& data, const ClassicalMEModel& me,
                                                 std::vector<double> y_breakpoints, std::size_t n,
                                                 std::size_t min_per_stratum = kDefaultMinPerStratum);

}  // namespace tpsd
