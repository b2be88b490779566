#pragma once

#include <stdexcept>
#include <string>

namespace tfm {

// Every error raised by the library derives from Error. The category decides
// the process exit code of the command-line tool.
enum class ErrorCategory { usage = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

// Shapes or extents that do not fit the operation.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorCategory::numeric, what) {}
};

// Non-finite values, vanishing denominators.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCategory::numeric, what) {}
};

// Caller broke a precondition that is not about shapes.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorCategory::usage, what) {}
};

class DegenerateConfigurationError : public Error {
 public:
  explicit DegenerateConfigurationError(const std::string& what)
      : Error(ErrorCategory::numeric, what) {}
};

class InsufficientDataError : public Error {
 public:
  explicit InsufficientDataError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

// Malformed files: images, checkpoints, manifests.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::usage, what) {}
};

}  // namespace tfm
