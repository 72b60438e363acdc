#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ctxprof {

enum class TraceErrorCode {
  MalformedRecord,
  UnknownEventKind,
  SchemaVersionMismatch,
  NonMonotonicTimestamp,
  UnbalancedOperatorExit,
  DuplicateCorrelationId,
};

std::string_view to_string(TraceErrorCode code);

// Raised while reading or validating a trace. line is 1-based; 0 when the
// event did not come from a file.
class TraceError : public std::runtime_error {
 public:
  TraceError(TraceErrorCode code, std::uint64_t line, const std::string& detail);

  TraceErrorCode code() const noexcept { return code_; }
  std::uint64_t line() const noexcept { return line_; }

 private:
  TraceErrorCode code_;
  std::uint64_t line_;
};

}  // namespace ctxprof
