#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace blesdn {

enum class ErrorCode {
  // scenario validation
  CycleInTopology,
  MultipleMasters,
  TooManySlaves,
  BadConnectionInterval,
  UnknownNodeReference,
  UnsortedSchedule,
  ScheduleOutOfRange,
  NodeUnreachable,
  SinkHasMaster,
  SinkTypeMismatch,
  BadBufferCapacity,
  BadPayloadSize,
  BadPeriod,
  BadProbability,
  BadControllerParams,
  BadDuration,
  MalformedDocument,
  // topology queries
  UnknownNode,
  UnknownLink,
  // engine
  UnknownConnectionSelector,
  ValueOutOfRange,
  InvariantViolation,
  // codecs
  BadLength,
  ReservedDeviceType,
  MalformedPeerBlock,
  UnknownOpcode,
  InvalidSelectorForOpcode,
  // application plane
  NotDelivered,
  InvalidWindow,
  // control plane
  ConflictingSink,
  NotATree,
  // artifacts
  IoFailure,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::CycleInTopology: return "CycleInTopology";
    case ErrorCode::MultipleMasters: return "MultipleMasters";
    case ErrorCode::TooManySlaves: return "TooManySlaves";
    case ErrorCode::BadConnectionInterval: return "BadConnectionInterval";
    case ErrorCode::UnknownNodeReference: return "UnknownNodeReference";
    case ErrorCode::UnsortedSchedule: return "UnsortedSchedule";
    case ErrorCode::ScheduleOutOfRange: return "ScheduleOutOfRange";
    case ErrorCode::NodeUnreachable: return "NodeUnreachable";
    case ErrorCode::SinkHasMaster: return "SinkHasMaster";
    case ErrorCode::SinkTypeMismatch: return "SinkTypeMismatch";
    case ErrorCode::BadBufferCapacity: return "BadBufferCapacity";
    case ErrorCode::BadPayloadSize: return "BadPayloadSize";
    case ErrorCode::BadPeriod: return "BadPeriod";
    case ErrorCode::BadProbability: return "BadProbability";
    case ErrorCode::BadControllerParams: return "BadControllerParams";
    case ErrorCode::BadDuration: return "BadDuration";
    case ErrorCode::MalformedDocument: return "MalformedDocument";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::UnknownLink: return "UnknownLink";
    case ErrorCode::UnknownConnectionSelector: return "UnknownConnectionSelector";
    case ErrorCode::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::BadLength: return "BadLength";
    case ErrorCode::ReservedDeviceType: return "ReservedDeviceType";
    case ErrorCode::MalformedPeerBlock: return "MalformedPeerBlock";
    case ErrorCode::UnknownOpcode: return "UnknownOpcode";
    case ErrorCode::InvalidSelectorForOpcode: return "InvalidSelectorForOpcode";
    case ErrorCode::NotDelivered: return "NotDelivered";
    case ErrorCode::InvalidWindow: return "InvalidWindow";
    case ErrorCode::ConflictingSink: return "ConflictingSink";
    case ErrorCode::NotATree: return "NotATree";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

/// Base exception for every recoverable failure in the library. The code
/// lets callers branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace blesdn
