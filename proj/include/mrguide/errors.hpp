#pragma once

#include <stdexcept>
#include <string>

namespace mrguide {

/// Machine-readable failure reasons shared by every module, the CLI and the
/// control service. The names are part of the wire format.
enum class ErrorCode {
  InvalidArgument,
  InvalidConfig,
  InvalidTransform,
  InsufficientPairs,
  DegenerateFiducials,
  FrameMismatch,
  ParallelToPlane,
  DegeneratePlan,
  OutOfTravel,
  InclineExceeded,
  EmptyWorkspace,
  OpenMesh,
  ZeroVolume,
  MeshParse,
  TargetOutOfTravel,
  Timeout,
  Stalled,
  InfeasibleSpec,
  PlaneMismatch,
  NoRegistration,
  PlanActive,
  UnknownPlan,
  Io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidTransform: return "InvalidTransform";
    case ErrorCode::InsufficientPairs: return "InsufficientPairs";
    case ErrorCode::DegenerateFiducials: return "DegenerateFiducials";
    case ErrorCode::FrameMismatch: return "FrameMismatch";
    case ErrorCode::ParallelToPlane: return "ParallelToPlane";
    case ErrorCode::DegeneratePlan: return "DegeneratePlan";
    case ErrorCode::OutOfTravel: return "OutOfTravel";
    case ErrorCode::InclineExceeded: return "InclineExceeded";
    case ErrorCode::EmptyWorkspace: return "EmptyWorkspace";
    case ErrorCode::OpenMesh: return "OpenMesh";
    case ErrorCode::ZeroVolume: return "ZeroVolume";
    case ErrorCode::MeshParse: return "MeshParse";
    case ErrorCode::TargetOutOfTravel: return "TargetOutOfTravel";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::Stalled: return "Stalled";
    case ErrorCode::InfeasibleSpec: return "InfeasibleSpec";
    case ErrorCode::PlaneMismatch: return "PlaneMismatch";
    case ErrorCode::NoRegistration: return "NoRegistration";
    case ErrorCode::PlanActive: return "PlanActive";
    case ErrorCode::UnknownPlan: return "UnknownPlan";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mrguide
