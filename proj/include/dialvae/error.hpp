#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>

namespace dialvae {

/// Base class of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data or arguments: malformed files, unknown labels, bad flags.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint archive whose manifest and blob disagree.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Raised by the training loop, e.g. on a non-finite loss.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Warnings go through a replaceable sink so metric code stays pure and tests
// can silence or capture them.
using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& msg) {
    std::cerr << "WARNING: " << msg << '\n';
  };
  return sink;
}

inline void warn(const std::string& msg) {
  if (warning_sink()) warning_sink()(msg);
}

/// Silences warnings for the lifetime of the guard.
class ScopedWarningSink {
 public:
  explicit ScopedWarningSink(WarningSink sink = {})
      : saved_(std::exchange(warning_sink(), std::move(sink))) {}
  ~ScopedWarningSink() { warning_sink() = std::move(saved_); }
  ScopedWarningSink(const ScopedWarningSink&) = delete;
  ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;

 private:
  WarningSink saved_;
};

}  // namespace dialvae
