// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// Worker node: runs one job at a time step by step, checkpoints on a timer
// that counts execution time only, heartbeats, resumes from checkpoints and
// uploads results.
//
// Checkpoint k is due once k * checkpoint_interval seconds of execution have
// accumulated and fires at the first step boundary at or after that point;
// one that would coincide with the final step is skipped. During a
// checkpoint execution pauses for checkpoint_cost seconds, then the state is
// uploaded (one retry) and the manifest sent.

#pragma once

#include <functional>
#include <optional>
#include <string>

#include "offload/blob.hpp"
#include "offload/program.hpp"
#include "offload/protocol.hpp"
#include "offload/store.hpp"

namespace offload {

struct WorkerOptions {
  std::string name;       // node name used as sender
  std::string worker_id;  // saved id; empty on first start
  double heartbeat_interval_s = 10.0;
  double checkpoint_interval_s = 0.0;  // execution seconds; 0 disables
  double checkpoint_cost_s = 6.0;
  double restore_cost_s = 0.0;
  double retry_interval_s = 1.0;
  double session_timeout_s = protocol::kSessionTimeout;
};

/// Hooks for instrumentation (fault exposure, energy, work accounting).
class ExecutionObserver {
 public:
  virtual ~ExecutionObserver() = default;
  /// Execution of steps of `job` starts or stops (checkpoints, restores and
  /// uploads are not execution).
  virtual void exec_started(const std::string& /*job*/) {}
  virtual void exec_stopped(const std::string& /*job*/) {}
  virtual void step_done(const std::string& /*job*/, std::int64_t /*step*/) {}
  virtual void checkpoint_started(const std::string& /*job*/, std::uint64_t /*seq*/) {}
  virtual void checkpoint_sent(const std::string& /*job*/, const CheckpointManifest&) {}
  /// The worker holds a job (from assignment until the result is sent or
  /// the job is dropped).
  virtual void busy(bool /*on*/) {}
  virtual void result_sent(const std::string& /*job*/, const std::string& /*digest*/) {}
};

class Worker {
 public:
  Worker(Executor& exec, BrokerChannel& channel, BlobClient& blobs, Rng& rng, WorkerOptions options,
         ExecutionObserver* observer = nullptr);
  Worker(const Worker&) = delete;
  Worker& operator=(const Worker&) = delete;

  void start();

  const std::string& worker_id() const { return options_.worker_id; }
  bool connected() const { return connected_; }
  const std::string& current_job() const { return job_id_; }
  std::int64_t step_counter() const { return step_; }
  const std::string& orchestrator() const { return orchestrator_; }
  /// Called once the orchestrator has assigned or confirmed the id.
  std::function<void(const std::string&)> on_identity;

 private:
  void connect();
  void on_message(const broker::Delivery& d);
  void on_assignment(const json& body);
  void begin(const json& assignment);
  void resume_execution();
  void run_step();
  void take_checkpoint();
  void upload_result();
  void report_failure(const std::string& job_id, const std::string& reason);
  void drop_job();
  void heartbeat();
  void publish(std::string_view type, json body);
  bool checkpoint_due() const;

  Executor& exec_;
  BrokerChannel& channel_;
  BlobClient& blobs_;
  Rng& rng_;
  WorkerOptions options_;
  ExecutionObserver* observer_;

  bool connected_ = false;
  std::string orchestrator_;
  std::string blob_endpoint_;

  // Current job.
  std::string job_id_;
  std::optional<JobProgram> program_;
  json state_;
  std::int64_t step_ = 0;
  std::uint64_t next_seq_ = 1;
  std::int64_t next_checkpoint_ = 1;  // index k of the next due checkpoint
  bool cancel_requested_ = false;
  bool executing_ = false;
  std::optional<json> queued_assignment_;
};

}  // namespace offload
