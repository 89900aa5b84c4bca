#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace factordiff {

/// Broad failure classes. The CLI prints the category as the first token of
/// its one-line error message so scripts can dispatch on it.
enum class ErrorKind {
  shape,
  domain,
  numeric,
  config,
  io,
  format,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) {
    fail(kind, message);
  }
}

}  // namespace factordiff
