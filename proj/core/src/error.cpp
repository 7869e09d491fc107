#include "asyncrl/error.hpp"

#include <sstream>

namespace asyncrl {

std::string_view to_string(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kDomain: return "domain";
    case ErrorCategory::kRange: return "range";
    case ErrorCategory::kFeasibility: return "feasibility";
    case ErrorCategory::kInfeasible: return "infeasible";
    case ErrorCategory::kRefusal: return "refusal";
    case ErrorCategory::kData: return "data";
    case ErrorCategory::kProtocol: return "protocol";
    case ErrorCategory::kLookup: return "lookup";
    case ErrorCategory::kIo: return "io";
    case ErrorCategory::kShard: return "shard";
    case ErrorCategory::kInit: return "init";
    case ErrorCategory::kExperiment: return "experiment";
  }
  return "unknown";
}

namespace {

std::string feasibility_message(const std::string& constraint, double required, double available) {
  std::ostringstream os;
  os.precision(17);
  os << "memory constraint '" << constraint << "' violated: needs " << required << " per GPU, "
     << available << " available";
  return os.str();
}

}  // namespace

FeasibilityError::FeasibilityError(std::string constraint, double required, double available)
    : Error(ErrorCategory::kFeasibility, feasibility_message(constraint, required, available)),
      constraint_(std::move(constraint)),
      required_(required),
      available_(available) {}

void fail(ErrorCategory category, const std::string& message) {
  throw Error(category, std::string(to_string(category)) + " error: " + message);
}

}  // namespace asyncrl
