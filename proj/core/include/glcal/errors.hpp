#pragma once

#include <stdexcept>
#include <string>

namespace glcal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents (bad magic, truncated header, unparsable CSV).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A value violates a documented precondition or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// The operating system refused a read or write.
class IoError : public Error {
 public:
  using Error::Error;
};

/// An object was used in the wrong state, e.g. transforming with an unfitted calibrator.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Optimization produced a non-finite loss.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int epoch, double learning_rate);

  int epoch() const noexcept { return epoch_; }
  double learning_rate() const noexcept { return learning_rate_; }

 private:
  int epoch_;
  double learning_rate_;
};

}  // namespace glcal
