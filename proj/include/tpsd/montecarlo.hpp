#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tpsd/allocation.hpp"
#include "tpsd/estimators.hpp"
#include "tpsd/scenario.hpp"

namespace tpsd {

/// One varying parameter. Names: rho, sigma, beta1, sensitivity, specificity,
/// sens_spec (sets both), prevalence, tail, N, n.
struct GridAxis {
  std::string name;
  std::vector<double> values;
};

void apply_parameter(ScenarioSpec& spec, const std::string& name, double value);

struct SimulationConfig {
  ScenarioSpec base;
  std::vector<GridAxis> grid;  // Cartesian product, first axis slowest
  std::vector<DesignKind> designs;
  std::vector<EstimatorKind> estimators;
  std::size_t reps = 500;
  std::uint64_t seed = 1;
  unsigned jobs = 1;
  double max_failure_rate = 0.05;

  std::vector<ScenarioSpec> expand() const;
  void validate() const;
};

struct ReportRow {
  std::string series;
  std::string params;
  std::string design;
  std::string estimator;
  double mse_scaled = 0.0;
  double se = 0.0;
  std::size_t reps = 0;   // successful replicates
  double mc_se = 0.0;     // jackknife standard error of mse_scaled
  std::size_t failures = 0;
  std::size_t fallbacks = 0;
  double bias = 0.0;
  double mse_scale = 1000.0;
  std::vector<double> mean_allocation;

  bool operator==(const ReportRow&) const = default;
};

struct MonteCarloReport {
  std::uint64_t seed = 0;
  std::size_t requested_reps = 0;
  std::vector<ReportRow> rows;

  bool operator==(const MonteCarloReport&) const = default;
  const ReportRow* find(const std::string& design, const std::string& estimator, const std::string& params = {}) const;
};

/// Cooperative cancellation and progress reporting. `should_stop` is polled
/// between replicates; a true return aborts the run with ErrorCode::Timeout.
struct RunControl {
  std::function<bool()> should_stop;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

/// Runs every (grid point, replicate) independently. Replicate r of every grid
/// point uses the same cohort stream, so grid points share random numbers.
/// The report does not depend on `jobs`.
MonteCarloReport run_mc(const SimulationConfig& config, const RunControl& control = {});

/// Allocation of `design` on a generated scenario with the scenario's phase-2
/// size (series 4 with n = 0 uses the case-control total).
Allocation scenario_allocation(const Scenario& sc, DesignKind design, Rng& rng);
std::size_t scenario_phase2_size(const Scenario& sc);

}  // namespace tpsd
