#pragma once

#include <stdexcept>
#include <string>

namespace aigvdet {

// Mirrors aigv_status in the C header; values must stay in sync.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kParse = 2,
  kValidation = 3,
  kIo = 4,
  kDecode = 5,
  kEncode = 6,
  kShape = 7,
  kBackendUnavailable = 8,
  kInsufficientData = 9,
  kCacheCorrupt = 10,
  kNumerical = 11,
  kRuntime = 12,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kDecode: return "decode";
    case ErrorCode::kEncode: return "encode";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kBackendUnavailable: return "backend_unavailable";
    case ErrorCode::kInsufficientData: return "insufficient_data";
    case ErrorCode::kCacheCorrupt: return "cache_corrupt";
    case ErrorCode::kNumerical: return "numerical";
    case ErrorCode::kRuntime: return "runtime";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace aigvdet
