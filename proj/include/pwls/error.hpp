#pragma once

#include <stdexcept>
#include <string>

namespace pwls {

// Machine-parsable failure categories. The CLI prints the code string on the
// diagnostic stream, so keep these stable.
enum class ErrorCode {
  InvalidArgument,
  SingularDesign,
  DegenerateLeverage,
  DegenerateWeighting,
  ScaleDenominator,
  VarianceFitFailed,
  LambdaSearchFailed,
  TooManyFailures,
  Io,
  Parse,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::SingularDesign: return "singular_design";
    case ErrorCode::DegenerateLeverage: return "degenerate_leverage";
    case ErrorCode::DegenerateWeighting: return "degenerate_weighting";
    case ErrorCode::ScaleDenominator: return "scale_denominator";
    case ErrorCode::VarianceFitFailed: return "variance_fit_failed";
    case ErrorCode::LambdaSearchFailed: return "lambda_search_failed";
    case ErrorCode::TooManyFailures: return "too_many_failures";
    case ErrorCode::Io: return "io";
    case ErrorCode::Parse: return "parse";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool condition, const std::string& what) {
  if (!condition) fail(ErrorCode::InvalidArgument, what);
}

}  // namespace pwls
