#pragma once

#include <stdexcept>
#include <string>

namespace featimit {

enum class ErrorKind {
  contract,    // precondition violated by the caller
  config,      // bad configuration or CLI usage
  shape,       // tensor / layer shape disagreement
  load,        // missing or unreadable weights
  io,          // filesystem failure
  layout,      // dataset directory layout not recognised
  integrity,   // dataset present but inconsistent (e.g. missing mask)
  checkpoint,  // checkpoint header / topology mismatch
  numerical,   // NaN or divergence
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(ErrorKind::contract, what);
}

// Process exit code used by the command line tool for a given error kind.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::contract:
    case ErrorKind::config:
      return 1;
    case ErrorKind::numerical:
      return 3;
    default:
      return 2;
  }
}

}  // namespace featimit
