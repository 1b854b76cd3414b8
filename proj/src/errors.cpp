// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/errors.hpp"

namespace offload {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::domain: return "domain";
    case ErrorCode::usage: return "usage";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::protocol: return "protocol";
    case ErrorCode::parse: return "parse";
    case ErrorCode::schema: return "schema";
    case ErrorCode::session: return "session";
    case ErrorCode::authorization: return "authorization";
    case ErrorCode::invalid_state: return "invalid_state";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

std::optional<ErrorCode> error_code_from_string(std::string_view name) noexcept {
  for (int i = 0; i <= static_cast<int>(ErrorCode::io); ++i) {
    const auto code = static_cast<ErrorCode>(i);
    if (to_string(code) == name) return code;
  }
  return std::nullopt;
}

int exit_code(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::usage: return 2;
    case ErrorCode::not_found: return 3;
    case ErrorCode::authorization: return 4;
    case ErrorCode::invalid_state: return 5;
    case ErrorCode::timeout: return 6;
    case ErrorCode::schema: return 7;
    case ErrorCode::parse: return 8;
    case ErrorCode::conflict: return 9;
    case ErrorCode::session: return 10;
    case ErrorCode::protocol: return 11;
    case ErrorCode::io: return 12;
    case ErrorCode::domain: return 13;
  }
  return 1;
}

}  // namespace offload
