#include "tpsd/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

#include "tpsd/error.hpp"

namespace tpsd {

const char* to_string(DesignKind kind) noexcept {
  switch (kind) {
    case DesignKind::SRS: return "SRS";
    case DesignKind::BSS: return "BSS";
    case DesignKind::PSS: return "PSS";
    case DesignKind::SCC: return "SCC";
    case DesignKind::IfIpw: return "IF-IPW";
    case DesignKind::IfGr: return "IF-GR";
    case DesignKind::Neyman: return "Neyman";
  }
  return "?";
}

DesignKind parse_design(const std::string& s) {
  std::string u;
  for (char c : s) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c == '_' ? '-' : c))));
  if (u == "SRS") return DesignKind::SRS;
  if (u == "BSS") return DesignKind::BSS;
  if (u == "PSS") return DesignKind::PSS;
  if (u == "SCC") return DesignKind::SCC;
  if (u == "IF-IPW" || u == "IFIPW") return DesignKind::IfIpw;
  if (u == "IF-GR" || u == "IFGR") return DesignKind::IfGr;
  if (u == "NEYMAN") return DesignKind::Neyman;
  fail(ErrorCode::InvalidArgument, "unknown design '" + s + "'");
}

std::vector<double> neyman_real(const StratumMoments& m, double n) {
  if (m.sizes.size() != m.sd.size() || m.sizes.empty()) fail(ErrorCode::InvalidArgument, "neyman: bad moments");
  double big_n = 0.0, denom = 0.0;
  for (std::size_t k = 0; k < m.sizes.size(); ++k) {
    if (!(m.sd[k] >= 0.0) || !std::isfinite(m.sd[k])) fail(ErrorCode::InvalidArgument, "neyman: sd must be finite and >= 0");
    big_n += static_cast<double>(m.sizes[k]);
    denom += static_cast<double>(m.sizes[k]) * m.sd[k];
  }
  if (n > big_n) fail(ErrorCode::Infeasible, "neyman: n exceeds the cohort size");
  if (!(denom > 0.0)) fail(ErrorCode::Infeasible, "neyman: every stratum has zero standard deviation");
  std::vector<double> out(m.sizes.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = n * static_cast<double>(m.sizes[k]) * m.sd[k] / denom;
  return out;
}

double stratified_variance(const StratumMoments& m, std::span<const std::size_t> n) {
  double v = 0.0;
  for (std::size_t k = 0; k < n.size(); ++k) {
    double bn = static_cast<double>(m.sizes[k]), nk = static_cast<double>(n[k]);
    v += (bn - nk) * bn * m.sd[k] * m.sd[k] / nk;
  }
  return v;
}

namespace {

void check_bounds(const std::vector<std::size_t>& sizes, std::size_t n, std::size_t min_per_stratum) {
  std::size_t cap = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (sizes.size() * min_per_stratum > n) {
    fail(ErrorCode::Infeasible, "n=" + std::to_string(n) + " is below K*min_per_stratum=" +
                                    std::to_string(sizes.size() * min_per_stratum));
  }
  if (n > cap) fail(ErrorCode::Infeasible, "n=" + std::to_string(n) + " exceeds the cohort size " + std::to_string(cap));
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] < min_per_stratum) {
      fail(ErrorCode::Infeasible, "stratum " + std::to_string(k + 1) + " has N_k=" + std::to_string(sizes[k]) +
                                      " < min_per_stratum=" + std::to_string(min_per_stratum));
    }
  }
}

// Greedy grants by priority N_k sd_k / sqrt(n_k (n_k + 1)); exact for this
// separable convex objective.
std::vector<std::size_t> greedy(const std::vector<std::size_t>& sizes, const std::vector<double>& sd, std::size_t n,
                                std::size_t min_per_stratum) {
  const std::size_t k_count = sizes.size();
  std::vector<std::size_t> alloc(k_count, min_per_stratum);
  struct Item {
    double priority;
    std::size_t k;
    bool operator<(const Item& o) const {
      return priority < o.priority || (priority == o.priority && k > o.k);
    }
  };
  auto prio = [&](std::size_t k) {
    double nk = static_cast<double>(alloc[k]);
    if (nk == 0.0) return std::numeric_limits<double>::infinity();
    return static_cast<double>(sizes[k]) * sd[k] / std::sqrt(nk * (nk + 1.0));
  };
  std::priority_queue<Item> pq;
  for (std::size_t k = 0; k < k_count; ++k) {
    if (alloc[k] < sizes[k]) pq.push({prio(k), k});
  }
  std::size_t remaining = n - k_count * min_per_stratum;
  while (remaining > 0) {
    Item top = pq.top();
    pq.pop();
    ++alloc[top.k];
    --remaining;
    if (alloc[top.k] < sizes[top.k]) pq.push({prio(top.k), top.k});
  }
  return alloc;
}

Allocation make_allocation(std::vector<std::size_t> n, const std::vector<std::size_t>& sizes, std::vector<double> sd,
                           AllocationPolicy policy) {
  Allocation a;
  a.total = std::accumulate(n.begin(), n.end(), std::size_t{0});
  a.n = std::move(n);
  a.sizes = sizes;
  a.sd = std::move(sd);
  a.policy = std::move(policy);
  return a;
}

std::vector<std::size_t> proportional_integer(const std::vector<std::size_t>& sizes, std::size_t n,
                                              std::size_t min_per_stratum) {
  return greedy(sizes, std::vector<double>(sizes.size(), 1.0), n, min_per_stratum);
}

Allocation moments_allocation(const StratumMoments& m, std::size_t n, std::size_t min_per_stratum,
                              std::string method) {
  if (m.sizes.size() != m.sd.size() || m.sizes.empty()) fail(ErrorCode::InvalidArgument, "allocation: bad moments");
  for (double s : m.sd) {
    if (!(s >= 0.0) || !std::isfinite(s)) fail(ErrorCode::InvalidArgument, "allocation: sd must be finite and >= 0");
  }
  check_bounds(m.sizes, n, min_per_stratum);
  AllocationPolicy policy{std::move(method), min_per_stratum, false, std::nullopt};
  bool degenerate = std::all_of(m.sd.begin(), m.sd.end(), [](double s) { return s == 0.0; });
  if (degenerate) {
    policy.fallback_proportional = true;
    return make_allocation(proportional_integer(m.sizes, n, min_per_stratum), m.sizes, m.sd, policy);
  }
  return make_allocation(greedy(m.sizes, m.sd, n, min_per_stratum), m.sizes, m.sd, policy);
}

}  // namespace

Allocation integer_allocation(const StratumMoments& m, std::size_t n, std::size_t min_per_stratum) {
  return moments_allocation(m, n, min_per_stratum, "neyman");
}

std::vector<double> within_stratum_sd(std::span<const double> values, const StratumIndex& index) {
  if (values.size() != index.n_rows()) fail(ErrorCode::InvalidArgument, "within_stratum_sd: length mismatch");
  std::vector<double> sd(index.k, 0.0);
  for (std::size_t k = 0; k < index.k; ++k) {
    const auto& rows = index.members[k];
    if (rows.size() < 2) continue;
    double mean = 0.0;
    for (auto r : rows) {
      if (!std::isfinite(values[r])) fail(ErrorCode::InvalidArgument, "non-finite working variable at row " + std::to_string(r + 1));
      mean += values[r];
    }
    mean /= static_cast<double>(rows.size());
    double ss = 0.0;
    for (auto r : rows) ss += (values[r] - mean) * (values[r] - mean);
    sd[k] = std::sqrt(ss / static_cast<double>(rows.size() - 1));
  }
  return sd;
}

Allocation if_ipw_allocation(std::span<const double> h, const StratumIndex& index, std::size_t n,
                             std::size_t min_per_stratum) {
  StratumMoments m{index.sizes, within_stratum_sd(h, index)};
  return moments_allocation(m, n, min_per_stratum, "if-ipw");
}

Allocation if_gr_allocation(std::span<const double> h, std::span<const double> h_hat, const StratumIndex& index,
                            std::size_t n, std::size_t min_per_stratum, const IfGrOptions& opt) {
  if (h.size() != h_hat.size() || h.size() != index.n_rows()) {
    fail(ErrorCode::InvalidArgument, "if_gr_allocation: h and h_hat must cover the cohort");
  }
  const double count = static_cast<double>(h.size());
  double mh = 0.0, mhat = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (!std::isfinite(h[i]) || !std::isfinite(h_hat[i])) fail(ErrorCode::InvalidArgument, "if_gr_allocation: non-finite input");
    mh += h[i];
    mhat += h_hat[i];
  }
  mh /= count;
  mhat /= count;
  double gamma = 0.0;
  if (opt.forced_gamma) {
    gamma = *opt.forced_gamma;
  } else {
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
      sxy += (h_hat[i] - mhat) * (h[i] - mh);
      sxx += (h_hat[i] - mhat) * (h_hat[i] - mhat);
    }
    // Constant h_hat leaves gamma undefined; treat as 0.
    gamma = sxx > 0.0 ? sxy / sxx : 0.0;
  }
  const double intercept = mh - gamma * mhat;
  std::vector<double> r(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) r[i] = h[i] - intercept - gamma * h_hat[i];

  // Residuals that vanish up to rounding carry no allocation information.
  double scale = 0.0;
  for (double v : h) scale = std::max(scale, std::abs(v - mh));
  StratumMoments m{index.sizes, within_stratum_sd(r, index)};
  for (double& s : m.sd) {
    if (s <= 1e-12 * scale) s = 0.0;
  }
  Allocation a = moments_allocation(m, n, min_per_stratum, "if-gr");
  a.policy.gamma = gamma;
  return a;
}

Allocation fixed_design(DesignKind kind, const StratumIndex& index, std::size_t n, std::span<const double> case_column,
                        Rng* rng) {
  const std::size_t k_count = index.k;
  const std::vector<double> no_sd(k_count, std::numeric_limits<double>::quiet_NaN());
  const std::size_t big_n = index.n_rows();
  switch (kind) {
    case DesignKind::SRS: {
      if (!rng) fail(ErrorCode::InvalidArgument, "SRS tabulation needs a random generator");
      if (n > big_n) fail(ErrorCode::Infeasible, "SRS: n exceeds the cohort size");
      SampleIndicator s = draw_simple_random_sample(big_n, n, *rng);
      std::vector<std::size_t> counts(k_count, 0);
      for (std::size_t i = 0; i < big_n; ++i) counts[static_cast<std::size_t>(index.assignment[i])] += s.selected[i];
      return make_allocation(std::move(counts), index.sizes, no_sd, {"srs", 0, false, std::nullopt});
    }
    case DesignKind::BSS: {
      check_bounds(index.sizes, n, 0);
      // Equal shares among strata with room; remainders to the lowest indices.
      std::vector<std::size_t> counts(k_count, 0);
      std::size_t left = n;
      while (left > 0) {
        std::vector<std::size_t> open;
        for (std::size_t k = 0; k < k_count; ++k) {
          if (counts[k] < index.sizes[k]) open.push_back(k);
        }
        std::size_t share = left / open.size();
        if (share == 0) {
          for (std::size_t j = 0; j < left; ++j) ++counts[open[j]];
          break;
        }
        for (auto k : open) {
          std::size_t give = std::min(share, index.sizes[k] - counts[k]);
          counts[k] += give;
          left -= give;
        }
      }
      return make_allocation(std::move(counts), index.sizes, no_sd, {"bss", 0, false, std::nullopt});
    }
    case DesignKind::PSS: {
      check_bounds(index.sizes, n, 0);
      std::vector<std::size_t> counts(k_count);
      std::vector<std::pair<double, std::size_t>> rem;
      std::size_t used = 0;
      for (std::size_t k = 0; k < k_count; ++k) {
        // Exact integer arithmetic for the quota n N_k / N.
        std::size_t num = n * index.sizes[k];
        counts[k] = num / big_n;
        used += counts[k];
        rem.emplace_back(static_cast<double>(num % big_n), k);
      }
      std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      for (std::size_t j = 0; used < n; ++j, ++used) ++counts[rem[j].second];
      return make_allocation(std::move(counts), index.sizes, no_sd, {"pss", 0, false, std::nullopt});
    }
    case DesignKind::SCC: {
      if (case_column.size() != big_n) fail(ErrorCode::InvalidArgument, "SCC needs a case indicator column");
      std::vector<std::size_t> controls, cases;
      for (std::size_t k = 0; k < k_count; ++k) {
        double v = case_column[index.members[k].front()];
        for (auto r : index.members[k]) {
          if (case_column[r] != v || (v != 0.0 && v != 1.0)) {
            fail(ErrorCode::InvalidArgument, "SCC: strata must be cross-classified by a binary case indicator");
          }
        }
        (v == 1.0 ? cases : controls).push_back(k);
      }
      if (cases.size() != controls.size()) {
        fail(ErrorCode::InvalidArgument, "SCC: case and control strata must pair up one-to-one");
      }
      std::vector<std::size_t> counts(k_count, 0);
      for (std::size_t j = 0; j < cases.size(); ++j) {
        counts[cases[j]] = index.sizes[cases[j]];
        counts[controls[j]] = std::min(index.sizes[controls[j]], index.sizes[cases[j]]);
      }
      std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
      if (n > 0 && total > n) {
        fail(ErrorCode::Infeasible, "SCC needs " + std::to_string(total) + " units, budget is " + std::to_string(n));
      }
      return make_allocation(std::move(counts), index.sizes, no_sd, {"scc", 0, false, std::nullopt});
    }
    case DesignKind::IfIpw:
    case DesignKind::IfGr:
    case DesignKind::Neyman:
      break;
  }
  fail(ErrorCode::InvalidArgument, std::string(to_string(kind)) + " is not a fixed design");
}

std::vector<double> allocation_to_probabilities(const Allocation& alloc, const StratumIndex& index) {
  if (alloc.n.size() != index.k) fail(ErrorCode::InvalidArgument, "allocation does not match the strata");
  std::vector<double> pi(index.n_rows());
  for (std::size_t i = 0; i < pi.size(); ++i) {
    auto k = static_cast<std::size_t>(index.assignment[i]);
    pi[i] = static_cast<double>(alloc.n[k]) / static_cast<double>(index.sizes[k]);
  }
  return pi;
}

SampleIndicator draw_simple_random_sample(std::size_t n_rows, std::size_t n, Rng& rng) {
  StratumIndex one = StratumIndex::from_assignment(std::vector<int>(n_rows, 0), 1);
  std::size_t counts[1] = {n};
  return draw_sample(one, counts, rng);
}

SampleIndicator draw_srs_in_strata(const StratumIndex& index, std::size_t n, Rng& rng) {
  const std::size_t big_n = index.n_rows();
  SampleIndicator s = draw_simple_random_sample(big_n, n, rng);
  std::vector<std::size_t> taken(index.k, 0);
  for (std::size_t i = 0; i < big_n; ++i) taken[static_cast<std::size_t>(index.assignment[i])] += s.selected[i];
  for (std::size_t i = 0; i < big_n; ++i) {
    auto k = static_cast<std::size_t>(index.assignment[i]);
    s.inclusion_prob[i] = taken[k] > 0 ? static_cast<double>(taken[k]) / static_cast<double>(index.sizes[k])
                                       : static_cast<double>(n) / static_cast<double>(big_n);
  }
  return s;
}

}  // namespace tpsd
