#pragma once

#include <stdexcept>
#include <string>

namespace scoremi {

// Failure categories. The CLI maps them onto exit codes.
enum class ErrorKind { input, config, numeric, training, io };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

struct InputError : Error {
  explicit InputError(const std::string& what) : Error(ErrorKind::input, what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

struct TrainingError : Error {
  TrainingError(const std::string& what, long step)
      : Error(ErrorKind::training, what), step_(step) {}
  long step() const noexcept { return step_; }

private:
  long step_;
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

// 0 success, 1 configuration/input, 2 numeric/training, 3 IO.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::input:
    case ErrorKind::config: return 1;
    case ErrorKind::numeric:
    case ErrorKind::training: return 2;
    case ErrorKind::io: return 3;
  }
  return 2;
}

}  // namespace scoremi
