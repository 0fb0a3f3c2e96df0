#pragma once

#include <stdexcept>
#include <string>

namespace lear {

// All recoverable failures carry a short machine-parsable code plus a
// human-readable message. The CLI prints "error:<code>: <message>" and
// exits nonzero.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

}  // namespace lear
