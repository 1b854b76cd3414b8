// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// Built-in resumable job programs. A program advances in discrete steps and
// its state after k steps is a pure function of (kind, params, k), so a job
// resumed from any checkpoint produces the same result as an uninterrupted
// run.
//
// Spec strings: `kind[:param=value,...]`, e.g. "mc_pi:steps=40,samples=5000".
// Common params: steps (total steps), step_cost (seconds of work per step).

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "offload/envelope.hpp"

namespace offload {

struct JobProgram {
  std::string kind;  // busy_counter | prime_sieve | mc_pi
  std::map<std::string, std::string> params;
  std::int64_t total_steps = 0;
  double step_cost_s = 1.0;

  /// Throws Error(parse) for malformed strings, Error(schema) for unknown
  /// kinds or parameters.
  static JobProgram parse(std::string_view spec);
  /// Canonical spec string (parameters sorted, defaults filled in).
  std::string spec() const;

  json initial_state() const;
  /// State after executing step `index` (0-based) on `state`.
  json step(const json& state, std::int64_t index) const;
  /// Result document for a finished state.
  json result(const json& state) const;
};

/// Serialized progress of a running job.
struct ExecutionState {
  std::string job_id;
  std::int64_t step_counter = 0;
  double accumulated_exec_s = 0.0;
  json state;

  bool operator==(const ExecutionState&) const = default;

  std::string serialize() const;
  /// Throws Error(parse) on malformed blobs.
  static ExecutionState deserialize(std::string_view blob);
};

/// Runs `program` from scratch to completion and returns the result bytes.
std::string run_to_completion(const JobProgram& program);

/// Result bytes as uploaded by workers.
std::string encode_result(const JobProgram& program, const json& state);

}  // namespace offload
