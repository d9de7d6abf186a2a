#pragma once

#include <stdexcept>
#include <string>

namespace gctaf {

// Exit codes used by the CLI, one per error family.
enum class ExitCode : int {
  ok = 0,
  failure = 1,
  parse = 2,
  validation = 3,
  leakage = 4,
  numeric = 5,
  config = 6,
  contract = 7,
  format = 8,
  io = 9,
};

class GctafError : public std::runtime_error {
 public:
  GctafError(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const { return code_; }

 private:
  ExitCode code_;
};

// Malformed input text: CLI arguments, config JSON, CSV cells, manifests.
struct ParseError : GctafError {
  explicit ParseError(const std::string& w) : GctafError(ExitCode::parse, w) {}
};

// Well-formed input that violates a data contract (shape drift, label sets, ...).
struct ValidationError : GctafError {
  explicit ValidationError(const std::string& w) : GctafError(ExitCode::validation, w) {}
};

// Tensor shape mismatches; a validation failure with its own name because the
// message always carries both offending shapes.
struct DimensionError : ValidationError {
  explicit DimensionError(const std::string& w) : ValidationError(w) {}
};

// Temporal leakage between train and test data.
struct LeakageError : GctafError {
  explicit LeakageError(const std::string& w) : GctafError(ExitCode::leakage, w) {}
};

// Non-finite values detected during numeric work (NaN guard, diverged loss).
struct NumericError : GctafError {
  explicit NumericError(const std::string& w) : GctafError(ExitCode::numeric, w) {}
};

// Invalid or inconsistent configuration values.
struct ConfigError : GctafError {
  explicit ConfigError(const std::string& w) : GctafError(ExitCode::config, w) {}
};

// API misuse: preconditions the caller was required to establish.
struct ContractError : GctafError {
  explicit ContractError(const std::string& w) : GctafError(ExitCode::contract, w) {}
};

// Corrupt or truncated binary artifacts (checkpoints).
struct FormatError : GctafError {
  explicit FormatError(const std::string& w) : GctafError(ExitCode::format, w) {}
};

struct IoError : GctafError {
  explicit IoError(const std::string& w) : GctafError(ExitCode::io, w) {}
};

// A cell could not be imputed by any rule in the fallback chain.
struct ImputationError : ValidationError {
  explicit ImputationError(const std::string& w) : ValidationError(w) {}
};

}  // namespace gctaf
