#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace negdist {

/// Failure categories. The CLI maps these onto process exit codes.
enum class ErrorKind {
  Config,         // invalid configuration value or combination
  Architecture,   // incompatible model shapes (teacher vs student, layer counts)
  Domain,         // argument outside the mathematical domain of a function
  Data,           // malformed or empty input data
  EmptyInput,     // text that is empty after normalization
  Truncation,     // sequence longer than the model accepts
  Io,             // file could not be read or written
  Shape,          // matrix dimension mismatch
  Alignment,      // traces or corpora that must line up do not
  UndefinedMean,  // mean over zero elements
  UndefinedMetric,
  Numeric,        // non-finite values
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Stable machine-readable identifier, e.g. "config_error".
std::string_view error_code(ErrorKind kind) noexcept;

}  // namespace negdist
