#pragma once

#include <stdexcept>
#include <string>

namespace ndarchive {

enum class ErrorKind {
  invalid_input,
  not_found,
  incomparable_hash,
  numeric_failure,
  degenerate_embedding,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid input";
    case ErrorKind::not_found: return "not found";
    case ErrorKind::incomparable_hash: return "incomparable hash";
    case ErrorKind::numeric_failure: return "numeric failure";
    case ErrorKind::degenerate_embedding: return "degenerate embedding";
    case ErrorKind::io: return "i/o error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised from backward passes; carries the name of the operation that
// produced the first non-finite value.
class NumericFailure : public Error {
 public:
  NumericFailure(std::string op, const std::string& detail)
      : Error(ErrorKind::numeric_failure, op + ": " + detail), op_(std::move(op)) {}

  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::invalid_input, what);
}

}  // namespace ndarchive
