#pragma once

#include <stdexcept>
#include <string>

namespace fedlith {

/// Base of every error raised by the library. Carries the process exit code
/// the CLI reports for it.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, int exit_code)
      : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

/// Invalid configuration, shape mismatch, or out-of-range argument.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, 2) {}
};

/// NaN/Inf produced during computation.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, 3) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what, 4) {}
};

/// Federated protocol violation (missing client output, too few responders).
class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& what) : Error(what, 1) {}
};

/// A metric whose denominator is empty (e.g. TPR with no hotspots).
class UndefinedMetricError : public Error {
 public:
  explicit UndefinedMetricError(const std::string& what) : Error(what, 3) {}
};

}  // namespace fedlith
