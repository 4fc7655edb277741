#pragma once

#include <stdexcept>
#include <string>

namespace d2i {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A text fragment could not be matched against the vocabulary.
class UnknownTokenError : public Error {
 public:
  explicit UnknownTokenError(const std::string& fragment)
      : Error("unknown token: \"" + fragment + "\""), fragment_(fragment) {}
  const std::string& fragment() const { return fragment_; }

 private:
  std::string fragment_;
};

/// Log-probability difference exceeds the overflow bound for exp().
class NonFiniteRatioError : public Error {
 public:
  explicit NonFiniteRatioError(double log_diff)
      : Error("log-probability difference " + std::to_string(log_diff) +
              " exceeds the ratio overflow bound") {}
};

class GroupTooSmallError : public Error {
 public:
  explicit GroupTooSmallError(std::size_t n)
      : Error("reward group needs at least 2 entries, got " + std::to_string(n)) {}
};

class NonFiniteGradientError : public Error {
 public:
  explicit NonFiniteGradientError(const std::string& prompt_id)
      : Error("non-finite gradient for prompt " + prompt_id) {}
};

class MissingRegistryEntryError : public Error {
 public:
  explicit MissingRegistryEntryError(const std::string& key)
      : Error("prompt registry has no entry for " + key) {}
};

class EmptyTestSetError : public Error {
 public:
  EmptyTestSetError() : Error("evaluation requires a non-empty test set") {}
};

/// Invalid configuration value or malformed config/data file contents.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

/// Filesystem-level failure; carries the offending path in the message.
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what) {}
};

}  // namespace d2i
