#include "tpsd/report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "tpsd/error.hpp"
#include "tpsd/json_io.hpp"

namespace tpsd {

const char* to_string(ReportFormat f) noexcept {
  switch (f) {
    case ReportFormat::Csv: return "csv";
    case ReportFormat::Json: return "json";
    case ReportFormat::Markdown: return "markdown";
  }
  return "?";
}

ReportFormat parse_report_format(const std::string& s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  if (s == "markdown" || s == "md") return ReportFormat::Markdown;
  fail(ErrorCode::InvalidArgument, "unknown report format '" + s + "'");
}

namespace {

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string allocation_cell(const std::vector<double>& a, bool exact) {
  std::string out;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (k) out += ';';
    out += exact ? shortest(a[k]) : fixed(a[k], 1);
  }
  return out;
}

std::string format_csv(const MonteCarloReport& report) {
  std::ostringstream os;
  os << "design,estimator,params,mse_star,se,reps,mc_se,failures,fallbacks,bias,mse_scale,series,mean_allocation\n";
  for (const auto& r : report.rows) {
    os << csv_field(r.design) << ',' << csv_field(r.estimator) << ',' << csv_field(r.params) << ','
       << shortest(r.mse_scaled) << ',' << shortest(r.se) << ',' << r.reps << ',' << shortest(r.mc_se) << ','
       << r.failures << ',' << r.fallbacks << ',' << shortest(r.bias) << ',' << shortest(r.mse_scale) << ','
       << csv_field(r.series) << ',' << allocation_cell(r.mean_allocation, true) << '\n';
  }
  return os.str();
}

template <class T>
void push_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

std::string format_markdown(const MonteCarloReport& report) {
  std::vector<std::string> designs, estimators, params;
  std::map<std::tuple<std::string, std::string, std::string>, const ReportRow*> cell;
  double scale = report.rows.empty() ? 1000.0 : report.rows.front().mse_scale;
  for (const auto& r : report.rows) {
    push_unique(designs, r.design);
    push_unique(estimators, r.estimator);
    push_unique(params, r.params);
    cell[{r.estimator, r.params, r.design}] = &r;
  }
  std::ostringstream os;
  os << "| params |";
  for (const auto& d : designs) os << ' ' << d << " MSE* | " << d << " se |";
  os << "\n|---|";
  for (std::size_t i = 0; i < designs.size(); ++i) os << "---:|---:|";
  os << '\n';
  for (const auto& e : estimators) {
    os << "| **" << e << "** |";
    for (std::size_t i = 0; i < designs.size(); ++i) os << " | |";
    os << '\n';
    for (const auto& p : params) {
      os << "| " << p << " |";
      for (const auto& d : designs) {
        auto it = cell.find({e, p, d});
        if (it == cell.end()) {
          os << " - | - |";
          continue;
        }
        const ReportRow& r = *it->second;
        os << ' ' << fixed(r.mse_scaled, 2) << " (" << fixed(r.mc_se, 2) << ") | " << fixed(r.se, 3) << " |";
      }
      os << '\n';
    }
  }
  os << "\nMSE*: MSE x " << shortest(scale) << ", Monte Carlo standard error in parentheses; se: empirical "
     << "standard error of the estimate. " << report.requested_reps << " replicates, seed " << report.seed << ".\n";

  bool any_alloc = false;
  for (const auto& r : report.rows) any_alloc = any_alloc || !r.mean_allocation.empty();
  if (any_alloc && !estimators.empty()) {
    os << "\n| params | design | mean n_k |\n|---|---|---|\n";
    for (const auto& p : params) {
      for (const auto& d : designs) {
        auto it = cell.find({estimators.front(), p, d});
        if (it == cell.end()) continue;
        os << "| " << p << " | " << d << " | " << allocation_cell(it->second->mean_allocation, false) << " |\n";
      }
    }
  }
  return os.str();
}

}  // namespace

std::string format_report(const MonteCarloReport& report, ReportFormat format) {
  if (report.rows.empty()) fail(ErrorCode::InvalidArgument, "report has no rows");
  switch (format) {
    case ReportFormat::Csv: return format_csv(report);
    case ReportFormat::Json: return to_json(report).dump(2) + "\n";
    case ReportFormat::Markdown: return format_markdown(report);
  }
  fail(ErrorCode::InvalidArgument, "unknown report format");
}

void emit_report(const MonteCarloReport& report, ReportFormat format, const std::string& path) {
  std::string text = format_report(report, format);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out << text;
  if (!out) fail(ErrorCode::Io, "write to '" + path + "' failed");
}

MonteCarloReport report_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("report JSON: ") + e.what());
  }
  return report_from_json_value(j);
}

}  // namespace tpsd
