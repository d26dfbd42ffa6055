#pragma once

#include <stdexcept>
#include <string>

namespace tpsd {

enum class ErrorCode {
  InvalidArgument,
  Parse,
  MissingColumn,
  MissingValue,
  EmptyStratum,
  Infeasible,
  RankDeficient,
  NonConvergence,
  Separation,
  Singular,
  Divergence,
  EstimatorFailure,
  Io,
  Timeout,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace tpsd
