#include "cmatch/error.hpp"

#include <sstream>

namespace cmatch {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kFormat: return "FormatError";
    case ErrorKind::kCorruptFile: return "CorruptFile";
    case ErrorKind::kIo: return "IoError";
    case ErrorKind::kInvalidShape: return "InvalidShape";
    case ErrorKind::kInvalidBox: return "InvalidBox";
    case ErrorKind::kDegenerateFeature: return "DegenerateFeature";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kInfeasibleFlow: return "InfeasibleFlow";
    case ErrorKind::kConvergence: return "ConvergenceError";
    case ErrorKind::kOracleTooLarge: return "OracleTooLarge";
    case ErrorKind::kIsolatedNode: return "IsolatedNode";
    case ErrorKind::kConfig: return "ConfigError";
    case ErrorKind::kEmptySupportForeground: return "EmptySupportForeground";
    case ErrorKind::kInvalidThreshold: return "InvalidThreshold";
    case ErrorKind::kEmptyInput: return "EmptyInput";
  }
  return "UnknownError";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), detail_(what) {}

namespace {
std::string convergence_message(double defect, int iterations) {
  std::ostringstream os;
  os.precision(6);
  os << "sinkhorn did not converge after " << iterations
     << " iterations (marginal defect " << defect << ")";
  return os.str();
}
}  // namespace

ConvergenceError::ConvergenceError(double defect, int iterations)
    : Error(ErrorKind::kConvergence, convergence_message(defect, iterations)),
      defect_(defect),
      iterations_(iterations) {}

}  // namespace cmatch
