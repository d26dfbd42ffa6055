#include "tpsd/montecarlo.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <optional>
#include <thread>

#include "tpsd/error.hpp"

namespace tpsd {

void apply_parameter(ScenarioSpec& spec, const std::string& name, double value) {
  auto count = [&](const char* what) {
    if (!(value >= 0.0) || value != std::floor(value)) fail(ErrorCode::InvalidArgument, std::string(what) + " must be a count");
    return static_cast<std::size_t>(value);
  };
  if (name == "rho") {
    spec.rho = value;
  } else if (name == "sigma") {
    spec.sigma = value;
  } else if (name == "beta1") {
    if (spec.beta.size() < 2) fail(ErrorCode::InvalidArgument, "beta1 is not a parameter of this series");
    spec.beta[1] = value;
  } else if (name == "sensitivity") {
    spec.sensitivity = value;
  } else if (name == "specificity") {
    spec.specificity = value;
  } else if (name == "sens_spec") {
    spec.sensitivity = spec.specificity = value;
  } else if (name == "prevalence") {
    spec.prevalence = value;
  } else if (name == "tail") {
    spec.tail_residual_multiplier = value;
  } else if (name == "N") {
    spec.cohort_size = count("N");
  } else if (name == "n") {
    spec.phase2_size = count("n");
  } else {
    fail(ErrorCode::InvalidArgument, "unknown scenario parameter '" + name + "'");
  }
}

std::vector<ScenarioSpec> SimulationConfig::expand() const {
  std::vector<ScenarioSpec> out{base};
  for (const auto& axis : grid) {
    if (axis.values.empty()) fail(ErrorCode::InvalidArgument, "grid axis '" + axis.name + "' has no values");
    std::vector<ScenarioSpec> next;
    for (const auto& s : out) {
      for (double v : axis.values) {
        ScenarioSpec t = s;
        apply_parameter(t, axis.name, v);
        next.push_back(std::move(t));
      }
    }
    out = std::move(next);
  }
  return out;
}

void SimulationConfig::validate() const {
  if (reps == 0) fail(ErrorCode::InvalidArgument, "reps must be positive");
  if (designs.empty()) fail(ErrorCode::InvalidArgument, "no designs requested");
  if (estimators.empty()) fail(ErrorCode::InvalidArgument, "no estimators requested");
  if (!(max_failure_rate >= 0.0 && max_failure_rate <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "max_failure_rate must lie in [0, 1]");
  }
  for (auto d : designs) {
    if (d == DesignKind::Neyman) fail(ErrorCode::InvalidArgument, "Neyman needs user-supplied moments; use IF-IPW");
    if (d == DesignKind::SCC && base.series != Series::Four && base.series != Series::Nwts) {
      fail(ErrorCode::InvalidArgument, "SCC needs strata crossed with a binary outcome (series 4 or nwts)");
    }
  }
  for (const auto& s : expand()) s.validate();
}

const ReportRow* MonteCarloReport::find(const std::string& design, const std::string& estimator,
                                        const std::string& params) const {
  for (const auto& r : rows) {
    if (r.design == design && r.estimator == estimator && (params.empty() || r.params == params)) return &r;
  }
  return nullptr;
}

std::size_t scenario_phase2_size(const Scenario& sc) {
  if (sc.spec.phase2_size > 0) return sc.spec.phase2_size;
  std::span<const double> cases = sc.cohort.column(sc.case_column);
  return fixed_design(DesignKind::SCC, sc.strata, 0, cases).total;
}

Allocation scenario_allocation(const Scenario& sc, DesignKind design, Rng& rng) {
  const std::size_t n = scenario_phase2_size(sc);
  const std::size_t min = sc.spec.min_per_stratum;
  switch (design) {
    case DesignKind::IfIpw: return if_ipw_allocation(sc.h, sc.strata, n, min);
    case DesignKind::IfGr: return if_gr_allocation(sc.h, sc.h_hat, sc.strata, n, min);
    case DesignKind::SCC: {
      if (sc.case_column.empty()) fail(ErrorCode::InvalidArgument, "scenario has no case indicator for SCC");
      return fixed_design(design, sc.strata, sc.spec.phase2_size, sc.cohort.column(sc.case_column));
    }
    case DesignKind::Neyman: fail(ErrorCode::InvalidArgument, "Neyman needs user-supplied moments");
    default: return fixed_design(design, sc.strata, n, {}, &rng);
  }
}

namespace {

struct Outcome {
  bool ok = false;
  bool fallback = false;
  double error = 0.0;
};

struct DesignOutcome {
  std::vector<double> allocation;
  std::vector<Outcome> estimates;  // per estimator
};

// One (grid point, replicate) work item.
std::vector<DesignOutcome> run_replicate(const SimulationConfig& cfg, const ScenarioSpec& spec, std::size_t rep) {
  Rng cohort_rng = make_rng(cfg.seed, {rep, 0});
  Scenario sc = generate(spec, cohort_rng);
  std::vector<DesignOutcome> out(cfg.designs.size());
  for (std::size_t d = 0; d < cfg.designs.size(); ++d) {
    const DesignKind kind = cfg.designs[d];
    const auto stream = static_cast<std::uint64_t>(kind) + 1;
    Rng rng = make_rng(cfg.seed, {rep, stream});
    auto& res = out[d];
    res.estimates.resize(cfg.estimators.size());
    std::optional<SampleIndicator> sample;
    try {
      if (kind == DesignKind::SRS) {
        sample = draw_srs_in_strata(sc.strata, scenario_phase2_size(sc), rng);
        res.allocation.assign(sc.strata.k, 0.0);
        for (std::size_t i = 0; i < sc.cohort.n_rows(); ++i) {
          if (sample->selected[i]) res.allocation[static_cast<std::size_t>(sc.strata.assignment[i])] += 1.0;
        }
      } else {
        Allocation a = scenario_allocation(sc, kind, rng);
        res.allocation.assign(a.n.begin(), a.n.end());
        sample = draw_sample(sc.strata, a.n, rng);
      }
    } catch (const Error&) {
      continue;
    }
    for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
      auto& o = res.estimates[e];
      try {
        EstimatorResult r;
        if (cfg.estimators[e] == EstimatorKind::Ipw) {
          r = ipw_estimate(sc.cohort, *sample, sc.outcome);
        } else {
          RakingOptions opt;
          opt.auxiliary_columns = sc.auxiliary_columns;
          if (sc.imputation) {
            opt.imputation = *sc.imputation;
            opt.imputation->seed = derive_seed(cfg.seed, {rep, stream, 0x494D50});
          }
          r = raking_estimate(sc.cohort, *sample, sc.outcome, opt);
          o.fallback = r.diagnostics.fell_back_to_ipw;
        }
        if (!r.converged || !std::isfinite(r.target_coef)) continue;
        o.ok = true;
        o.error = r.target_coef - sc.truth;
      } catch (const Error&) {
      }
    }
  }
  return out;
}

struct Moments {
  double sum = 0.0, sum_sq = 0.0;
};

}  // namespace

MonteCarloReport run_mc(const SimulationConfig& cfg, const RunControl& control) {
  cfg.validate();
  const auto specs = cfg.expand();
  const std::size_t total = specs.size() * cfg.reps;
  std::vector<std::vector<DesignOutcome>> results(total);
  std::vector<Scenario> reference;  // truth and scale per grid point
  for (const auto& s : specs) {
    Rng rng = make_rng(cfg.seed, {0, 0});
    reference.push_back(generate(s, rng));
  }

  std::atomic<std::size_t> next{0}, done{0};
  std::atomic<bool> stop{false};
  std::mutex err_mu, progress_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      if (stop.load()) return;
      std::size_t i = next.fetch_add(1);
      if (i >= total) return;
      if (control.should_stop && control.should_stop()) {
        stop = true;
        return;
      }
      try {
        results[i] = run_replicate(cfg, specs[i / cfg.reps], i % cfg.reps);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        stop = true;
        return;
      }
      std::size_t d = ++done;
      if (control.progress) {
        std::lock_guard<std::mutex> lock(progress_mu);
        control.progress(d, total);
      }
    }
  };
  const unsigned jobs = std::max(1u, cfg.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  if (done.load() < total) fail(ErrorCode::Timeout, "simulation stopped before all replicates finished");

  MonteCarloReport report;
  report.seed = cfg.seed;
  report.requested_reps = cfg.reps;
  std::string failure_note;
  for (std::size_t g = 0; g < specs.size(); ++g) {
    const Scenario& ref = reference[g];
    const double scale = ref.mse_scale;
    for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
      for (std::size_t d = 0; d < cfg.designs.size(); ++d) {
        ReportRow row;
        row.series = to_string(specs[g].series);
        row.params = specs[g].label();
        row.design = to_string(cfg.designs[d]);
        row.estimator = to_string(cfg.estimators[e]);
        row.mse_scale = scale;
        Moments err, sq;
        std::vector<double> alloc_sum;
        std::size_t alloc_count = 0;
        for (std::size_t r = 0; r < cfg.reps; ++r) {
          const auto& dout = results[g * cfg.reps + r][d];
          if (!dout.allocation.empty()) {
            if (alloc_sum.empty()) alloc_sum.assign(dout.allocation.size(), 0.0);
            for (std::size_t k = 0; k < alloc_sum.size() && k < dout.allocation.size(); ++k) {
              alloc_sum[k] += dout.allocation[k];
            }
            ++alloc_count;
          }
          const auto& o = dout.estimates[e];
          if (!o.ok) {
            ++row.failures;
            continue;
          }
          if (o.fallback) ++row.fallbacks;
          ++row.reps;
          err.sum += o.error;
          err.sum_sq += o.error * o.error;
          double s2 = o.error * o.error;
          sq.sum += s2;
          sq.sum_sq += s2 * s2;
        }
        const double m = static_cast<double>(row.reps);
        if (row.reps > 0) {
          double mse = sq.sum / m;
          row.mse_scaled = mse * scale;
          row.bias = err.sum / m;
          if (row.reps > 1) {
            double var_e = std::max(0.0, (err.sum_sq - m * row.bias * row.bias) / (m - 1.0));
            row.se = std::sqrt(var_e);
            // Leave-one-out jackknife of a mean reduces to sd / sqrt(m).
            double var_sq = std::max(0.0, (sq.sum_sq - m * mse * mse) / (m - 1.0));
            row.mc_se = std::sqrt(var_sq / m) * scale;
          }
        }
        for (auto& a : alloc_sum) a /= static_cast<double>(std::max<std::size_t>(alloc_count, 1));
        row.mean_allocation = std::move(alloc_sum);
        double rate = static_cast<double>(row.failures) / static_cast<double>(cfg.reps);
        if (rate > cfg.max_failure_rate && failure_note.empty()) {
          failure_note = row.design + "/" + row.estimator + " [" + row.params + "] failed in " +
                         std::to_string(row.failures) + " of " + std::to_string(cfg.reps) + " replicates";
        }
        report.rows.push_back(std::move(row));
      }
    }
  }
  if (!failure_note.empty()) fail(ErrorCode::EstimatorFailure, "estimator failure rate above limit: " + failure_note);
  return report;
}

}  // namespace tpsd
