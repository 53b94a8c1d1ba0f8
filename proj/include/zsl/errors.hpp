#pragma once

#include <stdexcept>
#include <string>

namespace zsl {

// Argument outside an operation's domain: bad shapes, out-of-range class
// indices, empty classes.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A loss or parameter became NaN/Inf during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LoadErrorKind {
  kMissingFile,
  kBadFormat,
  kDimensionMismatch,
  kUnknownClass,
  kSplitOverlap,
  kSplitMismatch,
};

class LoadError : public std::runtime_error {
 public:
  LoadError(LoadErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  LoadErrorKind kind() const { return kind_; }

 private:
  LoadErrorKind kind_;
};

}  // namespace zsl
