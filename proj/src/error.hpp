#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace collabrag {

enum class ErrorCode {
  invalid_argument,
  parse,
  io,
  duplicate_id,
  missing_gold,
  backend_transport,
  backend_auth,
  cache_corrupt,
  unresolved_reference,
  missing_predecessor,
  not_found,
  internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace collabrag
