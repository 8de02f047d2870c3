// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <stdexcept>
#include <string>

namespace acrs {

enum class ErrorKind {
  kConfig,    // invalid configuration or arguments
  kShape,     // tensor / frame shape mismatch
  kNumeric,   // NaN, Inf, divergence
  kContract,  // API misuse (e.g. backward twice, negative mask)
  kNoSignal,  // silent input where a signal is required
  kIo,        // file system or format errors
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace acrs
