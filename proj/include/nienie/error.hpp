#pragma once

#include <stdexcept>
#include <string>

namespace nienie {

// Coarse error categories; the CLI maps each one to a distinct exit code.
enum class ErrorCode {
  invalid_argument,
  io,
  format,
  validation,
  version_mismatch,
  checksum,
  numeric,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace nienie
