// SPDX-License-Identifier: Apache-2.0
#include "error.hpp"

namespace zsmil {

const char* error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Ok: return "Ok";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ZeroNorm: return "ZeroNorm";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::EmptyBag: return "EmptyBag";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::DuplicateClass: return "DuplicateClass";
    case ErrorCode::EmptyTemplates: return "EmptyTemplates";
    case ErrorCode::EnsembleDegenerate: return "EnsembleDegenerate";
    case ErrorCode::SidecarMismatch: return "SidecarMismatch";
    case ErrorCode::StaleRecord: return "StaleRecord";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::InsufficientBags: return "InsufficientBags";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

}  // namespace zsmil
