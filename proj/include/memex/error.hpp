#pragma once

#include <stdexcept>
#include <string>

namespace memex {

enum class ErrorCode {
  invalid_argument,
  invalid_resolution,
  invalid_interval,
  incompatible_partition,
  length_mismatch,
  size_guard,
  io,
  parse,
  protocol_version,
  protocol,
  shape_mismatch,
  non_finite,
  unreachable,
  timeout,
  config,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::invalid_resolution: return "invalid-resolution";
    case ErrorCode::invalid_interval: return "invalid-interval";
    case ErrorCode::incompatible_partition: return "incompatible-partition";
    case ErrorCode::length_mismatch: return "length-mismatch";
    case ErrorCode::size_guard: return "size-guard";
    case ErrorCode::io: return "io";
    case ErrorCode::parse: return "parse";
    case ErrorCode::protocol_version: return "protocol-version";
    case ErrorCode::protocol: return "protocol";
    case ErrorCode::shape_mismatch: return "shape-mismatch";
    case ErrorCode::non_finite: return "non-finite";
    case ErrorCode::unreachable: return "unreachable";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace memex
