#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tpsd/cohort.hpp"
#include "tpsd/estimators.hpp"
#include "tpsd/glm.hpp"
#include "tpsd/rng.hpp"

namespace tpsd {

enum class Series { One = 1, Two = 2, Three = 3, Four = 4, Nwts = 5 };

const char* to_string(Series s) noexcept;
Series parse_series(const std::string& s);

/// Parameters of one simulation scenario. Unused fields are ignored by the
/// series that do not need them.
struct ScenarioSpec {
  Series series = Series::One;
  std::size_t cohort_size = 4000;
  /// Phase-2 size; 0 for series 4 means "match the case-control sample".
  std::size_t phase2_size = 600;
  double rho = 0.9;                      // series 1: cor(h*, h)
  double tail_residual_multiplier = 0.0;  // series 1: >0 rebuilds h* as h - c r in the tail stratum
  double sigma = 0.5;                    // series 2-3: sd of the additive error
  double sensitivity = 0.95;             // series 4
  double specificity = 0.95;             // series 4
  double prevalence = 0.05;              // series 4: E(Y)
  std::vector<double> beta;              // outcome coefficients, series-specific layout
  std::uint64_t cohort_seed = 4;         // nwts: the synthetic cohort is fixed
  int design_imputations = 50;           // m for the IF-GR best-estimate influence functions
  int analysis_imputations = 1;          // 1 = single plug-in imputation for raking
  std::size_t min_per_stratum = 2;

  static ScenarioSpec defaults(Series s);
  void validate() const;
  /// Short label of the parameters that vary across series grids.
  std::string label() const;
};

/// Everything a replicate needs: the phase-1 data, strata, analysis models
/// and the design-stage influence functions.
struct Scenario {
  ScenarioSpec spec;
  Cohort cohort;
  StratumIndex strata;
  ModelSpec outcome;
  double truth = 0.0;  // true value of the target coefficient
  std::optional<ImputationSpec> imputation;
  std::vector<std::string> auxiliary_columns;
  std::string case_column;
  std::vector<double> h;      // full-data influence function of the target coefficient
  std::vector<double> h_hat;  // its best phase-1 estimate
  double mse_scale = 1000.0;
};

Scenario generate(const ScenarioSpec& spec, Rng& rng);

/// The synthetic NWTS-like cohort (relapse, instit, histol, age, stage, study,
/// tumdiam) with phase-1 stratum sizes (3026, 220, 507, 162).
Cohort nwts_synthetic_cohort(std::uint64_t seed);
Schema nwts_schema();
ModelSpec nwts_outcome_model();
ImputationSpec nwts_imputation_model();

/// Series-4 intercept giving E(Y) = prevalence under X~Bern(0.4), Z~Bern(0.5).
double series4_intercept(double prevalence, double beta1, double beta2);

/// Target column of the influence matrix of `outcome` fitted to the whole cohort.
std::vector<double> full_data_influence(const Cohort& cohort, const ModelSpec& outcome);

}  // namespace tpsd
