#include "tpsd/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "tpsd/error.hpp"

namespace tpsd {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

// Splits one CSV record; double quotes group fields, "" escapes a quote.
std::vector<std::string> split_record(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

double parse_cell(const std::string& cell, std::size_t line_no, const std::string& col) {
  if (cell.empty() || cell == "NA") return kMissing;
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    fail(ErrorCode::Parse, "line " + std::to_string(line_no) + ": column '" + col +
                               "': not a number: '" + cell + "'");
  }
  return v;
}

}  // namespace

const char* to_string(ColumnRole role) noexcept {
  switch (role) {
    case ColumnRole::Outcome: return "outcome";
    case ColumnRole::Phase1: return "phase1";
    case ColumnRole::Phase2: return "phase2";
    case ColumnRole::Auxiliary: return "auxiliary";
  }
  return "phase1";
}

ColumnRole parse_column_role(const std::string& s) {
  if (s == "outcome") return ColumnRole::Outcome;
  if (s == "phase1") return ColumnRole::Phase1;
  if (s == "phase2") return ColumnRole::Phase2;
  if (s == "auxiliary") return ColumnRole::Auxiliary;
  fail(ErrorCode::InvalidArgument, "unknown column role '" + s + "'");
}

void Cohort::set_column(const std::string& name, std::vector<double> values, ColumnRole role) {
  if (columns_.empty() && n_rows_ == 0) n_rows_ = values.size();
  if (values.size() != n_rows_) {
    fail(ErrorCode::InvalidArgument, "column '" + name + "' has " + std::to_string(values.size()) +
                                         " rows, cohort has " + std::to_string(n_rows_));
  }
  if (role != ColumnRole::Phase2) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (std::isnan(values[i])) {
        fail(ErrorCode::MissingValue, "phase-1 column '" + name + "' is missing at row " +
                                          std::to_string(i + 1));
      }
    }
  }
  auto it = columns_.find(name);
  if (it == columns_.end()) {
    order_.push_back(name);
    columns_.emplace(name, Column{role, std::move(values)});
  } else {
    it->second = Column{role, std::move(values)};
  }
}

const std::vector<double>& Cohort::column(const std::string& name) const {
  auto it = columns_.find(name);
  if (it == columns_.end()) fail(ErrorCode::MissingColumn, "no column '" + name + "'");
  return it->second.values;
}

ColumnRole Cohort::role(const std::string& name) const {
  auto it = columns_.find(name);
  if (it == columns_.end()) fail(ErrorCode::MissingColumn, "no column '" + name + "'");
  return it->second.role;
}

std::vector<std::string> Cohort::names() const { return order_; }

std::vector<bool> Cohort::missing_mask(const std::string& name) const {
  const auto& v = column(name);
  std::vector<bool> mask(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) mask[i] = std::isnan(v[i]);
  return mask;
}

std::size_t Cohort::missing_count(const std::string& name) const {
  const auto& v = column(name);
  return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }));
}

Cohort parse_cohort_csv(const std::string& text, const Schema& schema) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_record(line);
      break;
    }
  }
  if (header.empty()) fail(ErrorCode::Parse, "empty file: no header row");

  std::vector<int> slot(header.size(), -1);
  std::vector<std::string> wanted;
  for (const auto& [name, role] : schema) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(ErrorCode::MissingColumn, "schema column '" + name + "' absent from header");
    slot[static_cast<std::size_t>(it - header.begin())] = static_cast<int>(wanted.size());
    wanted.push_back(name);
  }

  std::vector<std::vector<double>> data(wanted.size());
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_record(line);
    if (cells.size() != header.size()) {
      fail(ErrorCode::Parse, "line " + std::to_string(line_no) + ": expected " +
                                 std::to_string(header.size()) + " fields, got " +
                                 std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (slot[c] < 0) continue;
      data[static_cast<std::size_t>(slot[c])].push_back(parse_cell(cells[c], line_no, header[c]));
    }
  }

  std::size_t n = data.empty() ? 0 : data.front().size();
  Cohort cohort(n);
  // Keep the file's column order.
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (slot[c] < 0) continue;
    auto s = static_cast<std::size_t>(slot[c]);
    cohort.set_column(wanted[s], std::move(data[s]), schema.at(wanted[s]));
  }
  return cohort;
}

Cohort load_cohort(const std::string& path, const Schema& schema) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_cohort_csv(ss.str(), schema);
}

std::string cohort_to_csv(const Cohort& cohort) {
  std::ostringstream out;
  auto names = cohort.names();
  for (std::size_t c = 0; c < names.size(); ++c) out << (c ? "," : "") << names[c];
  out << '\n';
  std::vector<const std::vector<double>*> cols;
  for (const auto& n : names) cols.push_back(&cohort.column(n));
  char buf[64];
  for (std::size_t i = 0; i < cohort.n_rows(); ++i) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (c) out << ',';
      double v = (*cols[c])[i];
      if (std::isnan(v)) {
        out << "NA";
      } else {
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
        out.write(buf, p - buf);
      }
    }
    out << '\n';
  }
  return out.str();
}

void write_cohort_csv(const Cohort& cohort, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot write '" + path + "'");
  f << cohort_to_csv(cohort);
  if (!f) fail(ErrorCode::Io, "write failed for '" + path + "'");
}

const char* to_string(StratificationKind kind) noexcept {
  switch (kind) {
    case StratificationKind::QuantileCut: return "quantile-cut";
    case StratificationKind::CrossClassification: return "cross-classification";
    case StratificationKind::ExplicitColumn: return "explicit-column";
  }
  return "quantile-cut";
}

StratificationRule StratificationRule::quantile(std::string column, std::vector<double> fractions,
                                                std::vector<int> merge) {
  StratificationRule r;
  r.kind = StratificationKind::QuantileCut;
  r.inputs = {std::move(column)};
  r.breakpoints = {std::move(fractions)};
  r.merge = std::move(merge);
  return r;
}

StratificationRule StratificationRule::cross(std::vector<std::string> columns) {
  StratificationRule r;
  r.kind = StratificationKind::CrossClassification;
  r.breakpoints.assign(columns.size(), {});
  r.inputs = std::move(columns);
  return r;
}

StratificationRule StratificationRule::explicit_column(std::string column) {
  StratificationRule r;
  r.kind = StratificationKind::ExplicitColumn;
  r.inputs = {std::move(column)};
  r.breakpoints = {{}};
  return r;
}

StratumIndex StratumIndex::from_assignment(std::vector<int> assignment, std::size_t k) {
  StratumIndex idx;
  idx.k = k;
  idx.sizes.assign(k, 0);
  idx.members.assign(k, {});
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    int s = assignment[i];
    if (s < 0 || static_cast<std::size_t>(s) >= k) {
      fail(ErrorCode::InvalidArgument, "stratum id out of range at row " + std::to_string(i + 1));
    }
    ++idx.sizes[static_cast<std::size_t>(s)];
    idx.members[static_cast<std::size_t>(s)].push_back(i);
  }
  for (std::size_t s = 0; s < k; ++s) {
    if (idx.sizes[s] == 0) fail(ErrorCode::EmptyStratum, "stratum " + std::to_string(s + 1) + " is empty");
  }
  idx.assignment = std::move(assignment);
  return idx;
}

double quantile_type7(std::span<const double> sorted, double p) {
  if (sorted.empty()) fail(ErrorCode::InvalidArgument, "quantile of empty data");
  double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

namespace {

struct FactorCodes {
  std::vector<int> code;
  std::size_t levels = 0;
};

// Values at a breakpoint belong to the lower interval: (-inf,q1], (q1,q2], ...
FactorCodes quantile_codes(const std::vector<double>& v, const std::vector<double>& fractions,
                           const std::string& name) {
  for (std::size_t j = 0; j < fractions.size(); ++j) {
    if (!(fractions[j] > 0.0 && fractions[j] < 1.0) || (j > 0 && fractions[j] <= fractions[j - 1])) {
      fail(ErrorCode::InvalidArgument, "quantile fractions must be strictly increasing in (0,1)");
    }
  }
  std::vector<double> sorted(v);
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> cuts;
  for (double p : fractions) cuts.push_back(quantile_type7(sorted, p));
  for (std::size_t j = 1; j < cuts.size(); ++j) {
    if (cuts[j] <= cuts[j - 1]) {
      fail(ErrorCode::EmptyStratum, "tied quantiles of '" + name + "' collapse an interval to zero width");
    }
  }
  FactorCodes f;
  f.levels = cuts.size() + 1;
  f.code.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    f.code[i] = static_cast<int>(std::lower_bound(cuts.begin(), cuts.end(), v[i]) - cuts.begin());
  }
  return f;
}

FactorCodes level_codes(const std::vector<double>& v) {
  std::vector<double> levels(v);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  FactorCodes f;
  f.levels = levels.size();
  f.code.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    f.code[i] = static_cast<int>(std::lower_bound(levels.begin(), levels.end(), v[i]) - levels.begin());
  }
  return f;
}

}  // namespace

StratumIndex stratify(const Cohort& cohort, const StratificationRule& rule) {
  if (rule.inputs.empty()) fail(ErrorCode::InvalidArgument, "stratification rule has no inputs");
  if (rule.kind != StratificationKind::CrossClassification && rule.inputs.size() != 1) {
    fail(ErrorCode::InvalidArgument, std::string(to_string(rule.kind)) + " takes exactly one input");
  }
  if (rule.kind == StratificationKind::QuantileCut &&
      (rule.breakpoints.empty() || rule.breakpoints[0].empty())) {
    fail(ErrorCode::InvalidArgument, "quantile-cut rule needs breakpoints");
  }

  std::vector<FactorCodes> factors;
  for (std::size_t j = 0; j < rule.inputs.size(); ++j) {
    const auto& name = rule.inputs[j];
    if (cohort.role(name) == ColumnRole::Phase2) {
      fail(ErrorCode::InvalidArgument, "stratification input '" + name + "' is a phase-2 column");
    }
    const auto& v = cohort.column(name);
    bool cut = j < rule.breakpoints.size() && !rule.breakpoints[j].empty();
    if (cut && rule.kind == StratificationKind::ExplicitColumn) {
      fail(ErrorCode::InvalidArgument, "explicit-column rule takes no breakpoints");
    }
    factors.push_back(cut ? quantile_codes(v, rule.breakpoints[j], name) : level_codes(v));
  }

  std::size_t cells = 1;
  for (const auto& f : factors) cells *= f.levels;
  std::vector<int> cell(cohort.n_rows(), 0);
  for (std::size_t i = 0; i < cohort.n_rows(); ++i) {
    int c = 0;
    for (const auto& f : factors) c = c * static_cast<int>(f.levels) + f.code[i];
    cell[i] = c;
  }

  std::size_t k = cells;
  if (!rule.merge.empty()) {
    if (rule.merge.size() != cells) {
      fail(ErrorCode::InvalidArgument, "merge map has " + std::to_string(rule.merge.size()) +
                                           " entries, rule produces " + std::to_string(cells) + " cells");
    }
    int top = *std::max_element(rule.merge.begin(), rule.merge.end());
    if (*std::min_element(rule.merge.begin(), rule.merge.end()) < 0) {
      fail(ErrorCode::InvalidArgument, "merge map entries must be non-negative");
    }
    k = static_cast<std::size_t>(top) + 1;
    for (auto& c : cell) c = rule.merge[static_cast<std::size_t>(c)];
  }
  return StratumIndex::from_assignment(std::move(cell), k);
}

std::size_t SampleIndicator::n_selected() const {
  return static_cast<std::size_t>(std::count(selected.begin(), selected.end(), std::uint8_t{1}));
}

std::vector<std::size_t> SampleIndicator::selected_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (selected[i]) rows.push_back(i);
  }
  return rows;
}

SampleIndicator draw_sample(const StratumIndex& index, std::span<const std::size_t> counts, Rng& rng) {
  if (counts.size() != index.k) {
    fail(ErrorCode::InvalidArgument, "allocation has " + std::to_string(counts.size()) +
                                         " strata, index has " + std::to_string(index.k));
  }
  SampleIndicator s;
  s.selected.assign(index.n_rows(), 0);
  s.inclusion_prob.assign(index.n_rows(), 0.0);
  std::vector<std::size_t> pool;
  for (std::size_t k = 0; k < index.k; ++k) {
    std::size_t n = counts[k], big_n = index.sizes[k];
    if (n < 1) fail(ErrorCode::Infeasible, "stratum " + std::to_string(k + 1) + ": n_k < 1");
    if (n > big_n) {
      fail(ErrorCode::Infeasible, "stratum " + std::to_string(k + 1) + ": n_k=" + std::to_string(n) +
                                      " exceeds N_k=" + std::to_string(big_n));
    }
    pool = index.members[k];
    // Partial Fisher-Yates: the first n slots are a uniform n-subset.
    for (std::size_t j = 0; j < n; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, big_n - 1);
      std::swap(pool[j], pool[pick(rng)]);
    }
    double pi = static_cast<double>(n) / static_cast<double>(big_n);
    for (std::size_t row : index.members[k]) s.inclusion_prob[row] = pi;
    for (std::size_t j = 0; j < n; ++j) s.selected[pool[j]] = 1;
  }
  return s;
}

SampleIndicator draw_sample(const StratumIndex& index, std::span<const std::size_t> counts,
                            std::uint64_t seed) {
  Rng rng(seed);
  return draw_sample(index, counts, rng);
}

}  // namespace tpsd
