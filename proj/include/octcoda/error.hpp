#pragma once

#include <stdexcept>
#include <string>

namespace octcoda {

enum class ErrorCode {
  DimensionMismatch,
  InvalidArgument,
  DuplicateId,
  EmptyPool,
  InsufficientConcepts,
  EmptyReferenceSet,
  LabelOutOfRange,
  FrozenParams,
  UnfrozenTeacher,
  EmptySplit,
  NonFiniteLoss,
  NonScalarLoss,
  NoPositives,
  MissingFile,
  ParseError,
  SchemaViolation,
  SplitOverlap,
  FingerprintMismatch,
  InvalidConfig,
};

const char* to_string(ErrorCode code) noexcept;

/// Single exception type for the library; `code()` distinguishes failure kinds.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace octcoda
