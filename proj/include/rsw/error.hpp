#pragma once

#include <stdexcept>
#include <string>

namespace rsw {

// Invalid configuration or invalid combination of options. Raised before any
// work starts so a bad experiment never produces partial artifacts.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: stepping a terminated episode, shaping with an unfitted model.
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// Malformed persisted data (dataset lines, checkpoints, model files).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Provider response that does not satisfy the response contract. Carries the
// raw text so the caller can decide between retry and skip.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::string raw)
      : std::runtime_error(msg), raw_text(std::move(raw)) {}
  std::string raw_text;
};

// Non-finite values encountered inside numeric kernels.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Remote endpoint unreachable or persistently failing.
class ProviderError : public std::runtime_error {
 public:
  explicit ProviderError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rsw
