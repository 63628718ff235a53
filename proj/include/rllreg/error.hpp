#pragma once

#include <stdexcept>
#include <string>

namespace rllreg {

enum class ErrorKind {
  InvalidArgument,
  Parse,
  Io,
  Config,
  Degenerate,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Input-file parse failure; `line` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, int line, const std::string& message)
      : Error(ErrorKind::Parse, path + ":" + std::to_string(line) + ": " + message),
        line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace rllreg
