#pragma once

#include <stdexcept>
#include <string>

namespace gigaslide {

enum class ErrorCode {
  validation,
  forbidden,
  not_found,
  conflict,
  bad_request,
  io,
  undefined_metric,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::validation: return "validation";
    case ErrorCode::forbidden: return "forbidden";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::bad_request: return "bad_request";
    case ErrorCode::io: return "io";
    case ErrorCode::undefined_metric: return "undefined_metric";
  }
  return "unknown";
}

/// HTTP status used when an error crosses the api boundary.
inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::validation: return 422;
    case ErrorCode::forbidden: return 403;
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict: return 409;
    case ErrorCode::bad_request: return 400;
    case ErrorCode::io: return 500;
    case ErrorCode::undefined_metric: return 422;
  }
  return 500;
}

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

}  // namespace gigaslide
