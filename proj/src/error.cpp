#include "gcz/error.hpp"

namespace gcz {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedJson: return "MalformedJson";
    case ErrorCode::AmbiguousKind: return "AmbiguousKind";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::MixedKinds: return "MixedKinds";
    case ErrorCode::EmptySentence: return "EmptySentence";
    case ErrorCode::HoldNotLast: return "HoldNotLast";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedRecord: return "TruncatedRecord";
    case ErrorCode::KindMismatch: return "KindMismatch";
    case ErrorCode::UnboundedDuration: return "UnboundedDuration";
    case ErrorCode::SinkClosed: return "SinkClosed";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::UnknownNodeType: return "UnknownNodeType";
    case ErrorCode::DanglingWire: return "DanglingWire";
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::UnknownTrigger: return "UnknownTrigger";
    case ErrorCode::UnknownSource: return "UnknownSource";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::BadSync: return "BadSync";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::TrailingBytes: return "TrailingBytes";
    case ErrorCode::BindFailure: return "BindFailure";
    case ErrorCode::BrokerUnreachable: return "BrokerUnreachable";
    case ErrorCode::BadTopic: return "BadTopic";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::RouteUnavailable: return "RouteUnavailable";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::Usage: return "Usage";
  }
  return "Unknown";
}

namespace {

std::string compose(ErrorCode code, const std::string& detail, const std::string& where) {
  std::string what{to_string(code)};
  if (!detail.empty()) what += ": " + detail;
  if (!where.empty()) what += " (at " + where + ")";
  return what;
}

}  // namespace

Error::Error(ErrorCode code, std::string detail, std::string where)
    : std::runtime_error(compose(code, detail, where)),
      code_(code),
      detail_(std::move(detail)),
      where_(std::move(where)) {}

Error Error::nested(std::string_view prefix) const {
  return Error(code_, detail_, std::string(prefix) + where_);
}

}  // namespace gcz
