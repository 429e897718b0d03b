#pragma once

#include <stdexcept>
#include <string>

namespace posespace {

// Failure categories map one-to-one onto CLI exit codes.
enum class ErrorKind { Usage = 1, Data = 2, Numerical = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message) : Error(ErrorKind::Usage, message) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& message) : Error(ErrorKind::Data, message) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& message) : Error(ErrorKind::Numerical, message) {}
};

#define POSESPACE_CHECK(cond, ErrorType, msg) \
  do {                                        \
    if (!(cond)) {                            \
      throw ErrorType(msg);                   \
    }                                         \
  } while (false)

}  // namespace posespace
