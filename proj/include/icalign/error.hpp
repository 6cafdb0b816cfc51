#pragma once

#include <stdexcept>
#include <string>

namespace icalign {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: missing or malformed files, mismatched ids, bad flags.
class InputError : public Error {
 public:
  using Error::Error;
};

// Refusal to clobber existing output without --force.
class SafetyRefusal : public Error {
 public:
  using Error::Error;
};

// Embedding, generation, or judge backend failure. Retryable errors are
// transient transport problems; the caller decides how often to retry.
class BackendError : public Error {
 public:
  explicit BackendError(const std::string& what, bool retryable = false,
                        int attempts = 1)
      : Error(what), retryable_(retryable), attempts_(attempts) {}

  bool retryable() const { return retryable_; }
  int attempts() const { return attempts_; }

 private:
  bool retryable_;
  int attempts_;
};

// A rendered prompt does not fit the model context next to the tokens
// reserved for generation.
class ContextOverflowError : public Error {
 public:
  using Error::Error;
};

}  // namespace icalign
