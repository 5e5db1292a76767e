#include "tracelens/error.h"

namespace tracelens {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return "invalid_argument";
    case ErrorCode::kEmptyTensor:
      return "empty_tensor";
    case ErrorCode::kShape:
      return "shape_error";
    case ErrorCode::kCyclicGraph:
      return "cyclic_graph";
    case ErrorCode::kNotFound:
      return "not_found";
    case ErrorCode::kNotRecorded:
      return "not_recorded";
    case ErrorCode::kSampleNotRetained:
      return "sample_not_retained";
    case ErrorCode::kDuplicateCategory:
      return "duplicate_category";
    case ErrorCode::kDuplicateStep:
      return "duplicate_step";
    case ErrorCode::kAlreadyFinalized:
      return "already_finalized";
    case ErrorCode::kVersion:
      return "version_error";
    case ErrorCode::kCorrupt:
      return "corrupt";
    case ErrorCode::kInsufficientData:
      return "insufficient_data";
    case ErrorCode::kIo:
      return "io_error";
  }
  return "unknown";
}

}  // namespace tracelens
