#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace enkfml {

enum class ErrorKind {
  kInvalidDimension,
  kNumericalDivergence,
  kDegenerateEnsemble,
  kInvalidInflation,
  kAnalysisFailure,
  kRepresentationInfeasible,
  kInvalidInput,
  kConfig,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidDimension: return "invalid_dimension";
    case ErrorKind::kNumericalDivergence: return "numerical_divergence";
    case ErrorKind::kDegenerateEnsemble: return "degenerate_ensemble";
    case ErrorKind::kInvalidInflation: return "invalid_inflation";
    case ErrorKind::kAnalysisFailure: return "analysis_failure";
    case ErrorKind::kRepresentationInfeasible: return "representation_infeasible";
    case ErrorKind::kInvalidInput: return "invalid_input";
    case ErrorKind::kConfig: return "config";
  }
  return "unknown";
}

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidDimension : public Error {
 public:
  explicit InvalidDimension(const std::string& what)
      : Error(ErrorKind::kInvalidDimension, what) {}
};

/// Raised when an integration produces non-finite values.
class NumericalDivergence : public Error {
 public:
  NumericalDivergence(const std::string& what, std::int64_t step)
      : Error(ErrorKind::kNumericalDivergence,
              what + " (step " + std::to_string(step) + ")"),
        step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

class DegenerateEnsemble : public Error {
 public:
  explicit DegenerateEnsemble(const std::string& what)
      : Error(ErrorKind::kDegenerateEnsemble, what) {}
};

class InvalidInflation : public Error {
 public:
  explicit InvalidInflation(const std::string& what)
      : Error(ErrorKind::kInvalidInflation, what) {}
};

/// Raised by forecast/analysis steps. Carries the cycle index (or -1 when
/// unknown) and the indices of diverged members, if any.
class AnalysisFailure : public Error {
 public:
  explicit AnalysisFailure(const std::string& what, std::int64_t cycle = -1,
                           std::vector<std::int64_t> members = {})
      : Error(ErrorKind::kAnalysisFailure, what),
        cycle_(cycle),
        members_(std::move(members)) {}
  std::int64_t cycle() const noexcept { return cycle_; }
  const std::vector<std::int64_t>& diverged_members() const noexcept {
    return members_;
  }

 private:
  std::int64_t cycle_;
  std::vector<std::int64_t> members_;
};

class RepresentationInfeasible : public Error {
 public:
  explicit RepresentationInfeasible(const std::string& what)
      : Error(ErrorKind::kRepresentationInfeasible, what) {}
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what)
      : Error(ErrorKind::kInvalidInput, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorKind::kConfig, what) {}
};

}  // namespace enkfml
