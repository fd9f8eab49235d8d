#pragma once

#include <stdexcept>
#include <string>

namespace cmatch {

enum class ErrorKind {
  kFormat,
  kCorruptFile,
  kIo,
  kInvalidShape,
  kInvalidBox,
  kDegenerateFeature,
  kShapeMismatch,
  kInfeasibleFlow,
  kConvergence,
  kOracleTooLarge,
  kIsolatedNode,
  kConfig,
  kEmptySupportForeground,
  kInvalidThreshold,
  kEmptyInput,
};

const char* to_string(ErrorKind kind);

// Every failure in the library surfaces as an Error carrying its kind, so
// callers (the CLI in particular) can map kinds to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }
  // The message without the kind prefix, for re-wrapping with more context.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(double defect, int iterations);

  double defect() const noexcept { return defect_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double defect_;
  int iterations_;
};

}  // namespace cmatch
