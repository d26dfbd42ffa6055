#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tpsd/rng.hpp"

namespace tpsd {

enum class ColumnRole { Outcome, Phase1, Phase2, Auxiliary };

const char* to_string(ColumnRole role) noexcept;
ColumnRole parse_column_role(const std::string& s);

/// Column name -> role. Only columns named here are ingested.
using Schema = std::map<std::string, ColumnRole>;

/// Rectangular phase-1 dataset. Values are stored as doubles; binary and
/// categorical columns use numeric codes. Missing cells are NaN and are only
/// permitted in Phase2 columns.
class Cohort {
 public:
  Cohort() = default;
  explicit Cohort(std::size_t n_rows) : n_rows_(n_rows) {}

  /// Adds or replaces a column. Throws on length mismatch or on a missing
  /// value in a non-phase-2 column.
  void set_column(const std::string& name, std::vector<double> values, ColumnRole role);

  std::size_t n_rows() const noexcept { return n_rows_; }
  bool has(const std::string& name) const { return columns_.count(name) != 0; }
  const std::vector<double>& column(const std::string& name) const;
  ColumnRole role(const std::string& name) const;
  std::vector<std::string> names() const;
  std::vector<bool> missing_mask(const std::string& name) const;
  std::size_t missing_count(const std::string& name) const;

 private:
  struct Column {
    ColumnRole role;
    std::vector<double> values;
  };
  std::size_t n_rows_ = 0;
  std::vector<std::string> order_;
  std::map<std::string, Column> columns_;
};

/// Reads a comma-delimited file with a header row. Empty cells and "NA" are
/// missing.
Cohort load_cohort(const std::string& path, const Schema& schema);
Cohort parse_cohort_csv(const std::string& text, const Schema& schema);
void write_cohort_csv(const Cohort& cohort, const std::string& path);
std::string cohort_to_csv(const Cohort& cohort);

enum class StratificationKind { QuantileCut, CrossClassification, ExplicitColumn };

const char* to_string(StratificationKind kind) noexcept;

/// Each input is either cut at empirical quantiles (non-empty breakpoint list)
/// or split on its distinct levels. Cells of the cross-product are numbered
/// row-major in declaration order; `merge`, when non-empty, maps cell -> stratum.
struct StratificationRule {
  StratificationKind kind = StratificationKind::QuantileCut;
  std::vector<std::string> inputs;
  std::vector<std::vector<double>> breakpoints;
  std::vector<int> merge;

  static StratificationRule quantile(std::string column, std::vector<double> fractions,
                                     std::vector<int> merge = {});
  static StratificationRule cross(std::vector<std::string> columns);
  static StratificationRule explicit_column(std::string column);
};

struct StratumIndex {
  std::size_t k = 0;
  std::vector<int> assignment;  // 0-based stratum per row
  std::vector<std::size_t> sizes;
  std::vector<std::vector<std::size_t>> members;

  static StratumIndex from_assignment(std::vector<int> assignment, std::size_t k);
  std::size_t n_rows() const noexcept { return assignment.size(); }
};

/// Type-7 empirical quantile (linear interpolation between order statistics).
double quantile_type7(std::span<const double> sorted, double p);

StratumIndex stratify(const Cohort& cohort, const StratificationRule& rule);

struct SampleIndicator {
  std::vector<std::uint8_t> selected;
  std::vector<double> inclusion_prob;

  std::size_t n_selected() const;
  std::vector<std::size_t> selected_rows() const;
};

/// Stratified simple random sampling without replacement of exactly
/// counts[k] rows from stratum k.
SampleIndicator draw_sample(const StratumIndex& index, std::span<const std::size_t> counts, Rng& rng);
SampleIndicator draw_sample(const StratumIndex& index, std::span<const std::size_t> counts,
                            std::uint64_t seed);

}  // namespace tpsd
