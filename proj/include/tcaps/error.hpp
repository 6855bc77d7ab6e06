#pragma once

#include <stdexcept>
#include <string>

namespace tcaps {

// Mirrors tcaps_status in the C API one-to-one.
enum class ErrorCode {
  invalid_argument = 1,
  config = 2,
  io = 3,
  format = 4,
  checksum = 5,
  version = 6,
  numeric = 7,
  shape = 8,
  internal = 99,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace tcaps
