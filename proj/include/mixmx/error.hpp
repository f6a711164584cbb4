// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mixmx {

// Error categories. I/O failures map to CLI exit code 1, validation
// failures to 2, internal invariant violations to 3.
enum class Errc {
  io_failure,
  bad_magic,
  bad_header,
  truncated_payload,
  non_finite_value,
  dimension_overflow,
  missing_manifest,
  duplicate_manifest_key,
  missing_file,
  non_contiguous_timesteps,
  invalid_argument,
  internal,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::io_failure: return "io_failure";
    case Errc::bad_magic: return "bad_magic";
    case Errc::bad_header: return "bad_header";
    case Errc::truncated_payload: return "truncated_payload";
    case Errc::non_finite_value: return "non_finite_value";
    case Errc::dimension_overflow: return "dimension_overflow";
    case Errc::missing_manifest: return "missing_manifest";
    case Errc::duplicate_manifest_key: return "duplicate_manifest_key";
    case Errc::missing_file: return "missing_file";
    case Errc::non_contiguous_timesteps: return "non_contiguous_timesteps";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::internal: return "internal";
  }
  return "unknown";
}

class MxError : public std::runtime_error {
 public:
  MxError(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw MxError(code, msg); }

inline void require(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace mixmx
