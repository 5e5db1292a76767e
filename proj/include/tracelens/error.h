#ifndef TRACELENS_ERROR_H_
#define TRACELENS_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace tracelens {

enum class ErrorCode {
  kInvalidArgument,  // a trace_model invariant was violated
  kEmptyTensor,
  kShape,
  kCyclicGraph,
  kNotFound,
  kNotRecorded,
  kSampleNotRetained,
  kDuplicateCategory,
  kDuplicateStep,
  kAlreadyFinalized,
  kVersion,
  kCorrupt,
  kInsufficientData,
  kIo,
};

// Stable snake_case name, used as the "code" field of API error bodies.
std::string_view error_code_name(ErrorCode code);

// All library failures are reported with this exception. `detail` carries an
// optional machine-readable payload serialized as JSON text (for example the
// retained sample indices of a SampleNotRetained error).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string detail = {})
      : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace tracelens

#endif  // TRACELENS_ERROR_H_
