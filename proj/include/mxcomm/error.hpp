#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mxcomm {

enum class ErrorCode {
  InvalidFormat,
  InvalidArgument,
  UnknownScheme,
  NonFiniteInput,
  MalformedCode,
  MalformedHeader,
  TruncatedStream,
  BadMagic,
  UnsupportedVersion,
  CompressionFactorTooHigh,
  ShapeMismatch,
  MinimumDegreeTwo,
  EmptyGrid,
  EvaluatorFailure,
  TransportFailure,
  ResultMismatch,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidFormat: return "InvalidFormat";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnknownScheme: return "UnknownScheme";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::MalformedCode: return "MalformedCode";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::TruncatedStream: return "TruncatedStream";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::CompressionFactorTooHigh: return "CompressionFactorTooHigh";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MinimumDegreeTwo: return "MinimumDegreeTwo";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::EvaluatorFailure: return "EvaluatorFailure";
    case ErrorCode::TransportFailure: return "TransportFailure";
    case ErrorCode::ResultMismatch: return "ResultMismatch";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

// Every failure in the library surfaces as this exception; code() is the
// stable, machine-checkable part, what() carries human context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

// Re-throws `e` with extra leading context, keeping the code.
[[noreturn]] inline void rethrow_with_context(const Error& e, const std::string& context) {
  throw Error(e.code(), context + ": " + e.detail());
}

}  // namespace mxcomm
