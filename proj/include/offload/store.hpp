// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// The orchestrators' replicated state. It changes only through apply(), which
// every replica calls with the same mutations in the same order; apply() is
// deterministic and validates each mutation against the current state, so a
// mutation that became stale while it was being replicated is rejected the
// same way everywhere.
//
// Mutations are JSON objects {"op": ..., ...}:
//   register_client {username, client_id}
//   register_worker {worker_id}
//   worker_connect  {worker_id}
//   worker_failed   {worker_id, epoch}
//   create_job      {job_id, owner, name}
//   upload_completed{job_id, program, input_ref}
//   assign          {job_id, worker_id}
//   checkpoint      {manifest}
//   job_result      {job_id, worker_id, result_ref}
//   job_failed      {job_id, worker_id, reason}   (restart from step 0)
//   requeue         {job_id, worker_id}           (keep checkpoints)
//   cancel          {job_id, client_id}
//   promote         {name, previous}
//   mark_notified   {job_id}
//   join            {name}
// Any mutation may carry "request_id"; a repeated request_id returns the
// first outcome without touching the state.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "offload/envelope.hpp"
#include "offload/errors.hpp"

namespace offload {

namespace job_status {
inline constexpr std::string_view uploading = "uploading";
inline constexpr std::string_view queued = "queued";
inline constexpr std::string_view running = "running";
inline constexpr std::string_view completed = "completed";
inline constexpr std::string_view canceled = "canceled";
inline constexpr std::string_view failed = "failed";
}  // namespace job_status

/// The job status graph: uploading->queued->running->{completed,canceled,
/// failed}, running->queued on reassignment, queued->canceled,
/// uploading->failed for unusable uploads.
bool transition_allowed(std::string_view from, std::string_view to);

struct CheckpointManifest {
  std::string job_id;
  std::string worker_id;
  std::uint64_t seq = 0;
  double created_at = 0.0;
  std::int64_t step_counter = 0;
  std::string state_ref;
  std::string digest;

  bool operator==(const CheckpointManifest&) const = default;
  json to_json() const;
  static CheckpointManifest from_json(const json& j);
};

struct JobRecord {
  std::string job_id;
  std::string owner;
  std::string name;
  std::string program;  // canonical spec, set when the upload completes
  std::int64_t total_steps = 0;
  std::string status;
  std::string assigned_worker;
  std::string result_ref;
  std::string input_ref;
  std::uint64_t queued_at = 0;  // apply index, orders the job queue
  std::uint64_t assignments = 0;
  bool notified = false;

  json to_json() const;
};

struct WorkerRecord {
  std::string status;  // registered | idle | busy | dead
  std::string job;
  std::uint64_t idle_since = 0;
  std::uint64_t epoch = 0;  // bumps on every connect
};

struct ApplyResult {
  bool ok = true;
  ErrorCode code = ErrorCode::invalid_state;
  std::string message;
  json data = json::object();

  json to_json() const;
  static ApplyResult from_json(const json& j);
};

class Store {
 public:
  /// Checkpoint manifests kept per job.
  static constexpr std::size_t kRetainedCheckpoints = 2;

  ApplyResult apply(const json& mutation);

  std::uint64_t applied() const { return applied_; }
  const std::string& primary() const { return primary_; }
  const std::map<std::string, JobRecord>& jobs() const { return jobs_; }
  const std::map<std::string, WorkerRecord>& workers() const { return workers_; }
  const std::map<std::string, std::string>& clients() const { return clients_; }  // id -> username
  std::optional<std::string> client_by_username(const std::string& username) const;
  const JobRecord* job(const std::string& id) const;
  const WorkerRecord* worker(const std::string& id) const;
  /// Oldest first.
  const std::vector<CheckpointManifest>& manifests(const std::string& job_id) const;
  const std::map<std::string, std::string>& orphan_results() const { return orphans_; }

  /// Oldest queued job paired with the longest-idle worker.
  std::optional<std::pair<std::string, std::string>> next_assignment() const;
  /// Jobs in `status` ordered by queue position (queued) or id.
  std::vector<std::string> jobs_with_status(std::string_view status) const;

  /// Canonical snapshot; equal stores serialize to identical bytes.
  json to_json() const;
  static Store from_json(const json& j);
  std::string digest() const;

 private:
  ApplyResult apply_op(const std::string& op, const json& m);
  void requeue(JobRecord& job);
  JobRecord& job_or_throw(const std::string& id);

  std::uint64_t applied_ = 0;
  std::string primary_;
  std::map<std::string, std::string> clients_;
  std::map<std::string, std::string> usernames_;
  std::map<std::string, WorkerRecord> workers_;
  std::map<std::string, JobRecord> jobs_;
  std::map<std::string, std::vector<CheckpointManifest>> manifests_;
  std::map<std::string, std::string> orphans_;  // canceled job -> late result
  std::map<std::string, json> requests_;        // request_id -> outcome
  std::vector<std::string> members_;            // replicas that joined
};

}  // namespace offload
