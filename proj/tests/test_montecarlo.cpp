#include <sstream>

#include "test_util.hpp"
#include "tpsd/json_io.hpp"
#include "tpsd/montecarlo.hpp"
#include "tpsd/report.hpp"

using namespace tpsd;
using test::code_of;

namespace {

SimulationConfig small_series1(std::size_t reps) {
  SimulationConfig cfg;
  cfg.base = ScenarioSpec::defaults(Series::One);
  cfg.base.cohort_size = 400;
  cfg.base.phase2_size = 80;
  cfg.designs = {DesignKind::SRS, DesignKind::BSS, DesignKind::PSS, DesignKind::IfIpw, DesignKind::IfGr};
  cfg.estimators = {EstimatorKind::Ipw, EstimatorKind::Raking};
  cfg.reps = reps;
  cfg.seed = 17;
  return cfg;
}

}  // namespace

TEST_CASE("report does not depend on the number of workers") {
  auto cfg = small_series1(12);
  cfg.grid = {{"rho", {0.99, 0.5}}};
  auto serial = run_mc(cfg);
  cfg.jobs = 3;
  auto parallel = run_mc(cfg);
  CHECK(serial == parallel);
  CHECK(format_report(serial, ReportFormat::Csv) == format_report(parallel, ReportFormat::Csv));
  cfg.seed = 18;
  CHECK_FALSE(run_mc(cfg) == serial);
}

TEST_CASE("Table-1 shaped grid has one row per design, estimator and rho") {
  auto cfg = small_series1(2);
  cfg.grid = {{"rho", {0.99, 0.95, 0.9, 0.8, 0.7, 0.5}}};
  auto rep = run_mc(cfg);
  CHECK(rep.rows.size() == 60);
  for (const auto& r : rep.rows) {
    CHECK(r.mse_scaled >= 0.0);
    CHECK(r.reps + r.failures == 2);
    CHECK(r.mean_allocation.size() == 2);
    CHECK(r.series == "1");
  }
  CHECK(rep.find("IF-GR", "Raking", "rho=0.8") != nullptr);
  CHECK(rep.find("SCC", "IPW") == nullptr);
}

TEST_CASE("grid expansion order and parameters") {
  SimulationConfig cfg;
  cfg.base = ScenarioSpec::defaults(Series::Two);
  cfg.grid = {{"sigma", {0.25, 0.5}}, {"beta1", {0, 1, 2}}};
  auto specs = cfg.expand();
  REQUIRE(specs.size() == 6);
  CHECK(specs[0].label() == "sigma=0.25;beta1=0");
  CHECK(specs[1].label() == "sigma=0.25;beta1=1");
  CHECK(specs[3].label() == "sigma=0.5;beta1=0");
  ScenarioSpec s = ScenarioSpec::defaults(Series::Four);
  apply_parameter(s, "sens_spec", 0.85);
  CHECK(s.sensitivity == 0.85);
  CHECK(s.specificity == 0.85);
  apply_parameter(s, "N", 5000);
  CHECK(s.cohort_size == 5000);
  CHECK(code_of([&] { apply_parameter(s, "gamma", 1); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("config validation") {
  auto cfg = small_series1(5);
  cfg.designs.push_back(DesignKind::Neyman);
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidArgument);
  cfg = small_series1(5);
  cfg.designs = {DesignKind::SCC};
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidArgument);
  cfg = small_series1(0);
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidArgument);
  cfg = small_series1(5);
  cfg.estimators.clear();
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("cancellation raises a timeout") {
  auto cfg = small_series1(50);
  RunControl ctl;
  std::size_t calls = 0;
  ctl.should_stop = [&] { return ++calls > 3; };
  CHECK(code_of([&] { run_mc(cfg, ctl); }) == ErrorCode::Timeout);
  std::size_t last = 0;
  RunControl progress;
  progress.progress = [&](std::size_t done, std::size_t total) {
    CHECK(total == 50);
    last = std::max(last, done);
  };
  run_mc(small_series1(50), progress);
  CHECK(last == 50);
}

TEST_CASE("reports round trip through JSON") {
  auto cfg = small_series1(4);
  cfg.grid = {{"rho", {0.9}}};
  auto rep = run_mc(cfg);
  auto back = report_from_json(format_report(rep, ReportFormat::Json));
  CHECK(back == rep);
  auto cfg_back = simulation_from_json(to_json(cfg));
  CHECK(to_json(cfg_back) == to_json(cfg));
}

TEST_CASE("csv and markdown layouts") {
  MonteCarloReport rep;
  rep.seed = 1;
  rep.requested_reps = 10;
  ReportRow row;
  row.series = "1";
  row.params = "rho=0.5";
  row.design = "PSS";
  row.estimator = "IPW";
  row.mse_scaled = 1.5;
  row.se = 0.04;
  row.reps = 10;
  row.mc_se = 0.25;
  row.mean_allocation = {300, 300};
  rep.rows.push_back(row);
  std::string csv = format_report(rep, ReportFormat::Csv);
  std::istringstream is(csv);
  std::string header, line, extra;
  std::getline(is, header);
  std::getline(is, line);
  CHECK(header == "design,estimator,params,mse_star,se,reps,mc_se,failures,fallbacks,bias,mse_scale,series,mean_allocation");
  CHECK(line == "PSS,IPW,rho=0.5,1.5,0.04,10,0.25,0,0,0,1000,1,300;300");
  CHECK_FALSE(std::getline(is, extra));
  std::string md = format_report(rep, ReportFormat::Markdown);
  CHECK(md.find("PSS") != std::string::npos);
  CHECK(md.find("1.50") != std::string::npos);
  CHECK(parse_report_format("md") == ReportFormat::Markdown);
}

TEST_CASE("IF-IPW beats BSS under IPW analysis with a strong surrogate") {
  SimulationConfig cfg;
  cfg.base = ScenarioSpec::defaults(Series::One);
  cfg.base.rho = 0.99;
  cfg.designs = {DesignKind::BSS, DesignKind::IfIpw};
  cfg.estimators = {EstimatorKind::Ipw};
  cfg.reps = 200;
  cfg.seed = 5;
  auto rep = run_mc(cfg);
  auto* bss = rep.find("BSS", "IPW");
  auto* opt = rep.find("IF-IPW", "IPW");
  REQUIRE(bss);
  REQUIRE(opt);
  CHECK(opt->mse_scaled + 1.96 * opt->mc_se < bss->mse_scaled - 1.96 * bss->mc_se);
}
