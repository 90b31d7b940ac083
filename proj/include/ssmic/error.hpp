#pragma once

#include <stdexcept>
#include <string>

namespace ssmic {

// Categories map one-to-one onto the C API status codes in ssmic.h.
enum class ErrorCode {
  kInvalidArgument = 1,
  kShapeMismatch,
  kIo,
  kMagicMismatch,
  kVersionMismatch,
  kDigestMismatch,
  kTruncated,
  kCorrupt,
  kParameterSet,
  kDivergence,
  kNumeric,
  kInternal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace ssmic
