#pragma once

#include <string>

#include "tpsd/montecarlo.hpp"

namespace tpsd {

enum class ReportFormat { Csv, Json, Markdown };

const char* to_string(ReportFormat f) noexcept;
ReportFormat parse_report_format(const std::string& s);

/// Columns: design, estimator, params, mse_star, se, reps, mc_se, then
/// failures, fallbacks, bias, mse_scale, series, mean_allocation.
std::string format_report(const MonteCarloReport& report, ReportFormat format);
void emit_report(const MonteCarloReport& report, ReportFormat format, const std::string& path);

MonteCarloReport report_from_json(const std::string& text);

}  // namespace tpsd
