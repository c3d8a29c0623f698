#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gcz {

enum class ErrorCode {
  // dsl4gc
  MalformedJson,
  AmbiguousKind,
  InvariantViolation,
  MixedKinds,
  EmptySentence,
  HoldNotLast,
  BadMagic,
  TruncatedRecord,
  // devstate
  KindMismatch,
  UnboundedDuration,
  SinkClosed,
  // pipeline
  SchemaError,
  UnknownNodeType,
  DanglingWire,
  CycleDetected,
  UnknownTrigger,
  UnknownSource,
  // transport
  ChecksumMismatch,
  BadSync,
  Truncated,
  TrailingBytes,
  BindFailure,
  BrokerUnreachable,
  BadTopic,
  // bench
  Timeout,
  RouteUnavailable,
  // cli
  ConfigError,
  IoError,
  Usage,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library. `where()` is a JSON-pointer-style
/// location into the offending document when one applies ("/1/dpad").
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string detail, std::string where = {});

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  const std::string& where() const noexcept { return where_; }

  /// Copy of this error whose location is `prefix` + the current location.
  Error nested(std::string_view prefix) const;

 private:
  ErrorCode code_;
  std::string detail_;
  std::string where_;
};

}  // namespace gcz
