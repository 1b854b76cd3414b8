// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace offload {

/// Error classes. Each maps to a distinct CLI exit code (see exit_code()).
enum class ErrorCode {
  domain,         // numeric argument outside the function's domain
  usage,          // bad command-line input
  not_found,      // unknown exchange/queue/job/...
  conflict,       // redeclaration with different properties, duplicate name
  protocol,       // broker protocol misuse (ack of unknown tag, ...)
  parse,          // malformed bytes
  schema,         // well-formed document with wrong shape
  session,        // unknown client/session
  authorization,  // principal does not own the resource
  invalid_state,  // operation not allowed in the current state
  timeout,        // peer did not answer in time
  io,             // sockets and files
};

std::string_view to_string(ErrorCode code) noexcept;
/// Inverse of to_string; nullopt for unknown names.
std::optional<ErrorCode> error_code_from_string(std::string_view name) noexcept;

/// Process exit code for an error class. 0 and 1 are reserved for success and
/// unclassified failures.
int exit_code(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace offload
