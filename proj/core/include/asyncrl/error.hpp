#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace asyncrl {

/// Coarse failure classes. The CLI maps each one to a distinct exit code.
enum class ErrorCategory {
  kConfig,
  kDomain,
  kRange,
  kFeasibility,
  kInfeasible,
  kRefusal,
  kData,
  kProtocol,
  kLookup,
  kIo,
  kShard,
  kInit,
  kExperiment,
};

std::string_view to_string(ErrorCategory category) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

/// A memory constraint that a candidate plan violates.
class FeasibilityError : public Error {
 public:
  FeasibilityError(std::string constraint, double required, double available);

  const std::string& constraint() const noexcept { return constraint_; }
  double required() const noexcept { return required_; }
  double available() const noexcept { return available_; }

 private:
  std::string constraint_;
  double required_;
  double available_;
};

[[noreturn]] void fail(ErrorCategory category, const std::string& message);

}  // namespace asyncrl
