#include "tpsd/error.hpp"

namespace tpsd {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::Parse: return "parse_error";
    case ErrorCode::MissingColumn: return "missing_column";
    case ErrorCode::MissingValue: return "missing_value";
    case ErrorCode::EmptyStratum: return "empty_stratum";
    case ErrorCode::Infeasible: return "infeasible";
    case ErrorCode::RankDeficient: return "rank_deficient";
    case ErrorCode::NonConvergence: return "non_convergence";
    case ErrorCode::Separation: return "separation";
    case ErrorCode::Singular: return "singular";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::EstimatorFailure: return "estimator_failure";
    case ErrorCode::Io: return "io_error";
    case ErrorCode::Timeout: return "timeout";
  }
  return "unknown";
}

}  // namespace tpsd
