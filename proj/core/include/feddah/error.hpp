#ifndef FEDDAH_ERROR_HPP
#define FEDDAH_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace feddah {

/// Base of every error raised by the library. `kind()` is a stable,
/// machine-readable tag used in CLI error records.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  [[nodiscard]] virtual const char* kind() const noexcept { return "error"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "config"; }
};

class UsageError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "usage"; }
};

class RegistrationError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "registration"; }
};

class ProtocolError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "protocol"; }
};

class InvariantError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "invariant"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "io"; }
};

/// Raised when an optimization loss stops being finite.
class DivergedError : public Error {
 public:
  DivergedError(const std::string& what, std::size_t step) : Error(what), step_(step) {}
  [[nodiscard]] const char* kind() const noexcept override { return "diverged"; }
  [[nodiscard]] std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace feddah

#endif  // FEDDAH_ERROR_HPP
