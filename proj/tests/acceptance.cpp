// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tpsd/allocation.hpp"
#include "tpsd/calibration.hpp"
#include "tpsd/metheory.hpp"
#include "tpsd/montecarlo.hpp"
#include "tpsd/report.hpp"
#include "tpsd/scenario.hpp"

using namespace tpsd;

namespace {

int failures = 0;

void verdict(const char* name, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Published {
  const char* estimator;
  const char* design;
  double rho;
  double mse;
};

// MSE x 1000 of the slope, 2000 replicates.
const std::vector<Published> kTable1 = {
    {"IPW", "SRS", 0.99, 1.65},    {"IPW", "BSS", 0.99, 2.31},    {"IPW", "PSS", 0.99, 1.66},
    {"IPW", "IF-IPW", 0.99, 1.36}, {"IPW", "IF-GR", 0.99, 1.63},  {"IPW", "SRS", 0.5, 1.67},
    {"IPW", "BSS", 0.5, 2.04},     {"IPW", "PSS", 0.5, 1.66},     {"IPW", "IF-IPW", 0.5, 1.71},
    {"IPW", "IF-GR", 0.5, 1.67},   {"Raking", "SRS", 0.99, 0.29}, {"Raking", "BSS", 0.99, 0.30},
    {"Raking", "PSS", 0.99, 0.29}, {"Raking", "IF-IPW", 0.99, 0.33}, {"Raking", "IF-GR", 0.99, 0.28},
    {"Raking", "SRS", 0.5, 1.35},  {"Raking", "BSS", 0.5, 1.57},  {"Raking", "PSS", 0.5, 1.34},
    {"Raking", "IF-IPW", 0.5, 1.35}, {"Raking", "IF-GR", 0.5, 1.33},
};

// A published MSE from R replicates of a roughly normal estimator has
// relative standard error sqrt(2/R).
constexpr double kPublishedReps = 2000.0;

void table1() {
  SimulationConfig cfg;
  cfg.base = ScenarioSpec::defaults(Series::One);
  cfg.grid = {{"rho", {0.99, 0.5}}};
  cfg.designs = {DesignKind::SRS, DesignKind::BSS, DesignKind::PSS, DesignKind::IfIpw, DesignKind::IfGr};
  cfg.estimators = {EstimatorKind::Ipw, EstimatorKind::Raking};
  cfg.reps = 500;
  cfg.seed = 1;
  auto rep = run_mc(cfg);
  int misses = 0, strict = 0;
  std::ostringstream detail;
  for (const auto& p : kTable1) {
    const std::string params = p.rho == 0.5 ? "rho=0.5" : "rho=0.99";
    const ReportRow* r = rep.find(p.design, p.estimator, params);
    if (!r) {
      ++misses;
      detail << " missing " << p.estimator << '/' << p.design << '/' << params;
      continue;
    }
    const double lo = r->mse_scaled - 1.96 * r->mc_se, hi = r->mse_scaled + 1.96 * r->mc_se;
    const double half = 1.96 * p.mse * std::sqrt(2.0 / kPublishedReps);
    const bool ok = hi >= p.mse - half && lo <= p.mse + half;
    if (lo <= p.mse && p.mse <= hi) ++strict;
    if (!ok) {
      ++misses;
      detail << fmt(" %s/%s/%s %.3f [%.3f,%.3f] vs %.2f;", p.estimator, p.design, params.c_str(), r->mse_scaled, lo,
                    hi, p.mse);
    }
  }
  const ReportRow* a = rep.find("SRS", "Raking", "rho=0.99");
  const ReportRow* b = rep.find("IF-IPW", "IPW", "rho=0.99");
  const ReportRow* c = rep.find("SRS", "Raking", "rho=0.5");
  std::string head = a && b && c ? fmt("raking/SRS/.99 %.3f, IPW/IF-IPW/.99 %.3f, raking/SRS/.5 %.3f; ", a->mse_scaled,
                                       b->mse_scaled, c->mse_scaled)
                                 : std::string();
  verdict("table1", misses == 0,
          head + fmt("%d of %zu cells outside (%d intervals contain the published value)", misses, kTable1.size(),
                     strict) +
              (misses ? ":" + detail.str() : ""));
}

bool within_mc(const ReportRow& a, const ReportRow& b) {
  return std::abs(a.mse_scaled - b.mse_scaled) <= 1.96 * std::hypot(a.mc_se, b.mc_se);
}

void table5() {
  SimulationConfig cfg;
  cfg.base = ScenarioSpec::defaults(Series::Four);
  cfg.base.sensitivity = 0.95;
  cfg.base.specificity = 0.95;
  cfg.grid = {{"beta1", {0.0, 1.0}}};
  cfg.designs = {DesignKind::SRS, DesignKind::SCC, DesignKind::PSS, DesignKind::IfIpw, DesignKind::IfGr};
  cfg.estimators = {EstimatorKind::Ipw, EstimatorKind::Raking};
  cfg.reps = 500;
  cfg.seed = 1;
  auto rep = run_mc(cfg);
  bool ok = true;
  std::ostringstream detail;
  for (const char* est : {"IPW", "Raking"}) {
    for (const char* params : {"sens=0.95;spec=0.95;beta1=0", "sens=0.95;spec=0.95;beta1=1"}) {
      const ReportRow* srs = rep.find("SRS", est, params);
      const ReportRow* scc = rep.find("SCC", est, params);
      const ReportRow* ipw = rep.find("IF-IPW", est, params);
      const ReportRow* gr = rep.find("IF-GR", est, params);
      if (!srs || !scc || !ipw || !gr) {
        ok = false;
        detail << " missing rows for " << est << ' ' << params << ';';
        continue;
      }
      const bool mutual = within_mc(*scc, *ipw) && within_mc(*scc, *gr) && within_mc(*ipw, *gr);
      const bool strong = std::string(params).ends_with("beta1=1");
      const double worst = std::max({scc->mse_scaled, ipw->mse_scaled, gr->mse_scaled}) / srs->mse_scaled;
      ok = ok && mutual && (!strong || worst <= 0.45);
      detail << fmt(" %s %s: SRS %.2f SCC %.2f IF-IPW %.2f IF-GR %.2f%s;", est, strong ? "b1=1" : "b1=0",
                    srs->mse_scaled, scc->mse_scaled, ipw->mse_scaled, gr->mse_scaled,
                    mutual ? "" : " (not within MC error)");
    }
  }
  verdict("table5", ok, detail.str());
}

// Separable convex objective: an integer allocation is optimal iff moving
// one unit between any two strata does not lower the variance.
std::vector<std::size_t> exchange_optimum(const StratumMoments& m, std::size_t n, std::size_t lo) {
  const std::size_t k = m.sizes.size();
  auto real = neyman_real(m, static_cast<double>(n));
  std::vector<std::size_t> a(k);
  std::size_t used = 0;
  for (std::size_t j = 0; j < k; ++j) {
    a[j] = std::clamp<std::size_t>(static_cast<std::size_t>(real[j]), lo, m.sizes[j]);
    used += a[j];
  }
  auto term = [&](std::size_t j, std::size_t v) {
    const double w = static_cast<double>(m.sizes[j]) * m.sd[j];
    return w * w / static_cast<double>(v);
  };
  while (used < n) {
    std::size_t best = k;
    double gain = -1.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (a[j] >= m.sizes[j]) continue;
      double g = term(j, a[j]) - term(j, a[j] + 1);
      if (g > gain) gain = g, best = j;
    }
    ++a[best];
    ++used;
  }
  while (used > n) {
    std::size_t best = k;
    double loss = INFINITY;
    for (std::size_t j = 0; j < k; ++j) {
      if (a[j] <= lo) continue;
      double l = term(j, a[j] - 1) - term(j, a[j]);
      if (l < loss) loss = l, best = j;
    }
    --a[best];
    --used;
  }
  for (bool moved = true; moved;) {
    moved = false;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        if (i == j || a[i] <= lo || a[j] >= m.sizes[j]) continue;
        double delta = term(i, a[i] - 1) - term(i, a[i]) + term(j, a[j] + 1) - term(j, a[j]);
        if (delta < -1e-12 * (term(i, a[i]) + term(j, a[j]))) {
          --a[i];
          ++a[j];
          moved = true;
        }
      }
    }
  }
  return a;
}

void nwts() {
  Cohort cohort = nwts_synthetic_cohort(4);
  auto idx = stratify(cohort, StratificationRule::cross({"relapse", "instit"}));
  auto pss = fixed_design(DesignKind::PSS, idx, 1337).n;
  const bool pss_ok = pss == std::vector<std::size_t>{1034, 75, 173, 55};

  auto spec = ScenarioSpec::defaults(Series::Nwts);
  Rng rng(1);
  Scenario sc = generate(spec, rng);
  StratumMoments m{sc.strata.sizes, within_stratum_sd(sc.h, sc.strata)};
  int worst_gap = 0;
  std::ostringstream alloc_detail;
  for (std::size_t n : {std::size_t{1337}, spec.phase2_size}) {
    auto oracle = exchange_optimum(m, n, kDefaultMinPerStratum);
    auto got = if_ipw_allocation(sc.h, sc.strata, n).n;
    alloc_detail << " n=" << n << " IF-IPW";
    for (std::size_t k = 0; k < got.size(); ++k) {
      worst_gap = std::max(worst_gap, std::abs(static_cast<int>(got[k]) - static_cast<int>(oracle[k])));
      alloc_detail << (k ? ',' : '(') << got[k];
    }
    alloc_detail << ") optimum";
    for (std::size_t k = 0; k < oracle.size(); ++k) alloc_detail << (k ? ',' : '(') << oracle[k];
    alloc_detail << ");";
  }

  SimulationConfig cfg;
  cfg.base = spec;
  cfg.designs = {DesignKind::SRS, DesignKind::BSS, DesignKind::PSS, DesignKind::IfIpw, DesignKind::IfGr};
  cfg.estimators = {EstimatorKind::Ipw, EstimatorKind::Raking};
  cfg.reps = 500;
  cfg.seed = 1;
  auto rep = run_mc(cfg);
  bool raking_ok = true;
  std::ostringstream mse_detail;
  for (DesignKind d : cfg.designs) {
    const ReportRow* ipw = rep.find(to_string(d), "IPW");
    const ReportRow* rak = rep.find(to_string(d), "Raking");
    if (!ipw || !rak) {
      raking_ok = false;
      continue;
    }
    raking_ok = raking_ok && rak->mse_scaled <= ipw->mse_scaled;
    mse_detail << fmt(" %s %.3f/%.3f", to_string(d), ipw->mse_scaled, rak->mse_scaled);
  }
  std::string pss_text = fmt("PSS(1337)=(%zu,%zu,%zu,%zu)", pss[0], pss[1], pss[2], pss[3]);
  verdict("nwts", pss_ok && worst_gap <= 2 && raking_ok,
          pss_text + ";" + alloc_detail.str() + " max gap " + std::to_string(worst_gap) + "; IPW/raking MSE*:" +
              mse_detail.str());
}

double brute_force_min(const StratumMoments& m, std::size_t n, std::size_t lo) {
  const std::size_t k = m.sizes.size();
  std::vector<std::size_t> cur(k, lo);
  double best = INFINITY;
  auto rec = [&](auto&& self, std::size_t j, std::size_t left) -> void {
    if (j + 1 == k) {
      if (left < lo || left > m.sizes[j]) return;
      cur[j] = left;
      best = std::min(best, stratified_variance(m, cur));
      return;
    }
    for (std::size_t v = lo; v <= std::min(m.sizes[j], left); ++v) {
      cur[j] = v;
      self(self, j + 1, left - v);
    }
  };
  rec(rec, 0, n);
  return best;
}

void integer_neyman() {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<std::size_t> kd(1, 4), nd(1, 30), sized(1, 20), lod(0, 2);
  std::uniform_real_distribution<double> sdd(0.0, 5.0);
  int instances = 0, mismatches = 0;
  while (instances < 200) {
    StratumMoments m;
    const std::size_t k = kd(rng), n = nd(rng), lo = lod(rng);
    std::size_t cap = 0;
    for (std::size_t j = 0; j < k; ++j) {
      m.sizes.push_back(sized(rng));
      m.sd.push_back(sdd(rng) + 0.01);
      cap += m.sizes.back();
    }
    if (n > cap || n < lo * k || *std::min_element(m.sizes.begin(), m.sizes.end()) < lo) continue;
    ++instances;
    auto a = integer_allocation(m, n, lo);
    const double got = stratified_variance(m, a.n), best = brute_force_min(m, n, lo);
    if (std::abs(got - best) > 1e-12 * std::max(1.0, best)) ++mismatches;
  }
  verdict("integer_neyman", mismatches == 0, fmt("%d instances, %d differ from enumeration", instances, mismatches));
}

void calibration() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> nd(20, 200), pd(1, 5);
  std::uniform_real_distribution<double> pi(0.05, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  double worst_residual = 0.0, worst_closed = 0.0;
  int negative = 0, unconverged = 0;
  for (int t = 0; t < 1000; ++t) {
    const int n = nd(rng), p = pd(rng);
    Eigen::VectorXd base(n), target(n);
    Eigen::MatrixXd s(n, p);
    for (int i = 0; i < n; ++i) {
      base(i) = 1.0 / pi(rng);
      s(i, 0) = 1.0;
      for (int j = 1; j < p; ++j) s(i, j) = z(rng) * (j + 1) + j;
    }
    for (int i = 0; i < n; ++i) target(i) = base(i) * std::exp(0.2 * z(rng));
    Eigen::VectorXd totals = s.transpose() * target;

    auto chi = calibrate(base, s, totals, Distance::ChiSquare);
    auto ex = calibrate(base, s, totals, Distance::Exponential);
    if (!chi.converged || !ex.converged) ++unconverged;
    worst_residual = std::max({worst_residual, constraint_gap(chi.weights, base, s, totals),
                               constraint_gap(ex.weights, base, s, totals)});
    if ((ex.weights.array() <= 0.0).any()) ++negative;

    Eigen::MatrixXd m = s.transpose() * base.asDiagonal() * s;
    Eigen::VectorXd lam = m.fullPivLu().solve(totals - s.transpose() * base);
    Eigen::VectorXd oracle = base.cwiseProduct((1.0 + (s * lam).array()).matrix());
    worst_closed =
        std::max(worst_closed, (chi.weights - oracle).cwiseAbs().maxCoeff() / oracle.cwiseAbs().maxCoeff());
  }
  verdict("calibration", unconverged == 0 && worst_residual < 1e-8 && negative == 0 && worst_closed < 1e-10,
          fmt("1000 problems; max residual %.2e, max closed-form gap %.2e, %d with nonpositive raking weights, %d "
              "unconverged",
              worst_residual, worst_closed, negative, unconverged));
}

void null_effect() {
  Rng rng(2);
  ClassicalMEModel me{1.0, 1.0};
  auto data = simulate_classical_me(100000, me, 0.0, rng);
  auto cmp = compare_designs_on_y_strata(data, me, {0.2, 0.8}, 600);
  bool ok = true;
  std::ostringstream detail;
  detail << "var(r)/var(h)";
  for (double r : cmp.ratio_error_form) {
    ok = ok && r >= 0.9 && r <= 1.1;
    detail << fmt(" %.3f", r);
  }
  detail << "; IF-IPW";
  for (auto v : cmp.if_ipw.n) detail << ' ' << v;
  detail << " IF-GR";
  for (std::size_t k = 0; k < cmp.if_gr.n.size(); ++k) {
    detail << ' ' << cmp.if_gr.n[k];
    ok = ok && std::abs(static_cast<double>(cmp.if_gr.n[k]) - static_cast<double>(cmp.if_ipw.n[k])) <= 2.0;
  }
  verdict("null_effect", ok, detail.str());
}

void gamma_and_case_control() {
  Rng rng(3);
  ClassicalMEModel me{1.0, 1.0};
  auto d = simulate_classical_me(100000, me, 0.0, rng);
  const double g = surrogate_gamma(d.x, d.x_tilde, d.y);
  auto rare = simulate_rare_disease(100000, 0.05, 0.0, rng);
  auto [cases, controls] = case_control_balance(rare.x, rare.y, rare.p);
  const double ratio = cases / controls;
  verdict("gamma_case_control", g >= 0.97 && g <= 1.03 && ratio >= 0.9 && ratio <= 1.1,
          fmt("gamma %.4f; case/control weight ratio %.4f", g, ratio));
}

void determinism() {
  SimulationConfig cfg;
  cfg.base = ScenarioSpec::defaults(Series::One);
  cfg.base.cohort_size = 1000;
  cfg.base.phase2_size = 150;
  cfg.grid = {{"rho", {0.99, 0.5}}};
  cfg.designs = {DesignKind::SRS, DesignKind::BSS, DesignKind::PSS, DesignKind::IfIpw, DesignKind::IfGr};
  cfg.estimators = {EstimatorKind::Ipw, EstimatorKind::Raking};
  cfg.reps = 24;
  cfg.seed = 99;
  std::vector<std::string> outputs;
  for (unsigned jobs : {1u, 1u, 2u, 4u}) {
    cfg.jobs = jobs;
    auto rep = run_mc(cfg);
    outputs.push_back(format_report(rep, ReportFormat::Csv) + format_report(rep, ReportFormat::Json));
  }
  bool same = std::all_of(outputs.begin(), outputs.end(), [&](const std::string& s) { return s == outputs[0]; });

  auto spec = ScenarioSpec::defaults(Series::One);
  std::vector<std::vector<std::size_t>> allocs;
  for (int run = 0; run < 2; ++run) {
    Rng rng(5);
    Scenario sc = generate(spec, rng);
    for (DesignKind k : {DesignKind::SRS, DesignKind::IfIpw, DesignKind::IfGr}) {
      Rng arng(6);
      allocs.push_back(scenario_allocation(sc, k, arng).n);
    }
  }
  const bool alloc_same = std::equal(allocs.begin(), allocs.begin() + 3, allocs.begin() + 3);
  verdict("determinism", same && alloc_same,
          fmt("simulate output identical across 2 runs and jobs 1/2/4: %s; allocations identical: %s",
              same ? "yes" : "no", alloc_same ? "yes" : "no"));
}

}  // namespace

int main() {
  integer_neyman();
  calibration();
  null_effect();
  gamma_and_case_control();
  determinism();
  nwts();
  table5();
  table1();
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
