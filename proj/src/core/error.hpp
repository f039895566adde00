// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace zsmil {

// Numeric values are part of the C ABI (see include/zsmil/zsmil.h); append only.
enum class ErrorCode : int {
  Ok = 0,
  InvalidArgument = 1,
  ZeroNorm = 2,
  ShapeMismatch = 3,
  DimMismatch = 4,
  EmptyBag = 5,
  BadMagic = 6,
  UnsupportedVersion = 7,
  TruncatedPayload = 8,
  NonFiniteValue = 9,
  IoError = 10,
  ParseError = 11,
  LabelOutOfRange = 12,
  MissingFile = 13,
  InvalidSpec = 14,
  DuplicateClass = 15,
  EmptyTemplates = 16,
  EnsembleDegenerate = 17,
  SidecarMismatch = 18,
  StaleRecord = 19,
  StaleCache = 20,
  InsufficientBags = 21,
  NonFiniteLoss = 22,
  EmptyClass = 23,
  EmptyList = 24,
  NotFound = 25,
  Internal = 26,
};

const char* error_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace zsmil
