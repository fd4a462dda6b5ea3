#include "octcoda/error.hpp"

namespace octcoda {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "dimension_mismatch";
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::DuplicateId: return "duplicate_id";
    case ErrorCode::EmptyPool: return "empty_pool";
    case ErrorCode::InsufficientConcepts: return "insufficient_concepts";
    case ErrorCode::EmptyReferenceSet: return "empty_reference_set";
    case ErrorCode::LabelOutOfRange: return "label_out_of_range";
    case ErrorCode::FrozenParams: return "frozen_params";
    case ErrorCode::UnfrozenTeacher: return "unfrozen_teacher";
    case ErrorCode::EmptySplit: return "empty_split";
    case ErrorCode::NonFiniteLoss: return "non_finite_loss";
    case ErrorCode::NonScalarLoss: return "non_scalar_loss";
    case ErrorCode::NoPositives: return "no_positives";
    case ErrorCode::MissingFile: return "missing_file";
    case ErrorCode::ParseError: return "parse_error";
    case ErrorCode::SchemaViolation: return "schema_violation";
    case ErrorCode::SplitOverlap: return "split_overlap";
    case ErrorCode::FingerprintMismatch: return "fingerprint_mismatch";
    case ErrorCode::InvalidConfig: return "invalid_config";
  }
  return "unknown";
}

}  // namespace octcoda
