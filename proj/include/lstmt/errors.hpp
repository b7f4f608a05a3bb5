#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lstmt {

/// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or rank mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (empty corpus, non-scalar loss, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared in a forward or backward value.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Token id outside the vocabulary.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (unknown key, bad value, incompatible models).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data. `line()` is 1-based, 0 when not tied to a line.
class DataError : public Error {
 public:
  DataError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class CheckpointError : public Error {
 public:
  enum class Kind { io, bad_magic, version, truncated, shape, malformed };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace lstmt
