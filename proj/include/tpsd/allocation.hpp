#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpsd/cohort.hpp"

namespace tpsd {

/// Per-stratum sizes and within-stratum standard deviations of a working
/// variable (an influence function or a residual).
struct StratumMoments {
  std::vector<std::size_t> sizes;
  std::vector<double> sd;
};

enum class DesignKind { SRS, BSS, PSS, SCC, IfIpw, IfGr, Neyman };

const char* to_string(DesignKind kind) noexcept;
DesignKind parse_design(const std::string& s);

struct AllocationPolicy {
  std::string method;
  std::size_t min_per_stratum = 0;
  bool fallback_proportional = false;
  std::optional<double> gamma;  // IF-GR slope of h on h_hat
};

struct Allocation {
  std::vector<std::size_t> n;
  std::size_t total = 0;
  std::vector<std::size_t> sizes;  // N_k
  std::vector<double> sd;          // NaN when the generator uses no moments
  AllocationPolicy policy;
};

constexpr std::size_t kDefaultMinPerStratum = 2;

/// n_k = n N_k sd_k / sum_j N_j sd_j.
std::vector<double> neyman_real(const StratumMoments& m, double n);

/// sum_k (N_k - n_k) N_k sd_k^2 / n_k
double stratified_variance(const StratumMoments& m, std::span<const std::size_t> n);

/// Exact integer minimiser of stratified_variance subject to sum n_k = n and
/// min_per_stratum <= n_k <= N_k. Greedy unit-by-unit grants; ties go to the
/// lowest stratum index. All-zero sd falls back to proportional allocation.
Allocation integer_allocation(const StratumMoments& m, std::size_t n, std::size_t min_per_stratum);

/// Sample standard deviation (n-1 denominator) of `values` within each stratum.
std::vector<double> within_stratum_sd(std::span<const double> values, const StratumIndex& index);

Allocation if_ipw_allocation(std::span<const double> h, const StratumIndex& index, std::size_t n,
                             std::size_t min_per_stratum = kDefaultMinPerStratum);

struct IfGrOptions {
  /// Overrides the fitted slope; with gamma = 0 the residual is h - mean(h).
  std::optional<double> forced_gamma;
};

/// Neyman allocation on r = h - (a + gamma h_hat), the residual of the
/// least-squares regression of h on h_hat over the whole cohort.
Allocation if_gr_allocation(std::span<const double> h, std::span<const double> h_hat, const StratumIndex& index,
                            std::size_t n, std::size_t min_per_stratum = kDefaultMinPerStratum,
                            const IfGrOptions& opt = {});

/// Fixed designs. SRS tabulates an unstratified draw (needs `rng`); SCC needs a
/// binary case column whose value is constant within every stratum and takes
/// every case plus an equal number of controls from the paired control stratum.
/// For SCC, `n` is a budget (0 = unlimited).
Allocation fixed_design(DesignKind kind, const StratumIndex& index, std::size_t n,
                        std::span<const double> case_column = {}, Rng* rng = nullptr);

std::vector<double> allocation_to_probabilities(const Allocation& alloc, const StratumIndex& index);

/// Unstratified simple random sample without replacement; pi = n/N for all rows.
SampleIndicator draw_simple_random_sample(std::size_t n_rows, std::size_t n, Rng& rng);

/// Unstratified draw analysed in the phase-1 strata: pi_i = m_k/N_k with m_k
/// the realized count in row i's stratum (n/N when m_k = 0).
SampleIndicator draw_srs_in_strata(const StratumIndex& index, std::size_t n, Rng& rng);

}  // namespace tpsd
