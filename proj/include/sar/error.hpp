#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sar {

/// Error categories. Each maps to a distinct CLI exit status.
enum class ErrorCode {
  InvalidArgument = 2,   // malformed input to a library operation
  DimensionMismatch = 3,
  ConfigParse = 10,
  SchemaViolation = 11,
  MissingFile = 12,
  CheckpointFormat = 13,
  Io = 14,
  NumericFailure = 15,
  Usage = 64,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  int exit_status() const noexcept { return static_cast<int>(code_); }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::DimensionMismatch: return "dimension_mismatch";
    case ErrorCode::ConfigParse: return "config_parse";
    case ErrorCode::SchemaViolation: return "schema_violation";
    case ErrorCode::MissingFile: return "missing_file";
    case ErrorCode::CheckpointFormat: return "checkpoint_format";
    case ErrorCode::Io: return "io";
    case ErrorCode::NumericFailure: return "numeric_failure";
    case ErrorCode::Usage: return "usage";
  }
  return "unknown";
}

}  // namespace sar
