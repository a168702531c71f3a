#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace appjudge {

enum class Errc {
  missing_file,
  schema_violation,
  dangling_material,
  precondition,
  length_mismatch,
  empty_input,
  out_of_range,
  unknown_token,
  transport,
  authentication,
  over_limit,
  retries_exhausted,
  unparseable,
  count_violation,
  unreachable,
  invalid_spec,
  session_closed,
  script_parse,
  io,
  unmatched_task,
};

std::string_view to_string(Errc code);

/// Base error for the whole library. `code()` is stable and meant for
/// programmatic dispatch; `what()` is for humans.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Structured-output failure after the repair attempt. Keeps the last raw
/// model reply for diagnostics.
class UnparseableError : public Error {
 public:
  UnparseableError(const std::string& message, std::string raw)
      : Error(Errc::unparseable, message), raw_(std::move(raw)) {}

  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

}  // namespace appjudge
