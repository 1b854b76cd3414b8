// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// Orchestrator node: sessions, job lifecycle, worker assignment, checkpoint
// storage and failure detection on top of a ReplicaManager.
//
// Queues (all declared by every replica, consumed only by the primary):
//   orch.register  <- clientRegister, workerRegister
//   orch.{name}    <- "{name}.#" on the orchestrator exchange
// A promoted backup also drains the queue of the primary it replaces, so
// messages principals sent before they learned about the promotion are not
// lost.
//
// Control deliveries are acknowledged only after the change they cause has
// been applied, so a primary crash leaves them for its successor; every
// handler is idempotent under redelivery.

#pragma once

#include <map>
#include <set>
#include <string>

#include "offload/blob.hpp"
#include "offload/replica.hpp"

namespace offload {

struct OrchestratorOptions {
  std::string name;
  std::string blob_endpoint;
  double heartbeat_interval_s = 1.0;  // replica heartbeats
  double promotion_timeout_s = 3.0;
  double lock_timeout_s = 1.0;
  /// A worker silent for longer than this is declared dead. Zero disables the
  /// heartbeat detector (failures then come from notify_worker_failed()).
  double detection_timeout_s = 30.0;
  /// Expected worker heartbeat period; the detector runs at this rate.
  double worker_heartbeat_interval_s = 10.0;
  double blob_push_timeout_s = 2.0;
  std::vector<std::string> initial_members;
  bool bootstrap = false;
  bool prefer_primary = false;
};

class Orchestrator {
 public:
  Orchestrator(Executor& exec, BrokerChannel& channel, BlobClient& blobs, BlobStore& local,
               Rng& rng, OrchestratorOptions options);
  Orchestrator(const Orchestrator&) = delete;
  Orchestrator& operator=(const Orchestrator&) = delete;

  void start();

  /// Perfect failure detector input: the worker is known to have crashed.
  void notify_worker_failed(const std::string& worker_id);

  const ReplicaManager& replica() const { return replica_; }
  const Store& store() const { return replica_.store(); }
  bool is_primary() const { return replica_.is_primary(); }
  const std::string& name() const { return options_.name; }

  struct Stats {
    std::uint64_t result_notifications = 0;
    std::uint64_t assignments = 0;
    std::uint64_t failures_detected = 0;
  };
  const Stats& stats() const { return stats_; }

 private:
  using Delivery = broker::Delivery;

  void on_applied(const Change& change, const ApplyResult& result);
  void become_primary(const std::string& previous);
  void consume_control(const std::string& queue);
  void on_control(const Delivery& d);
  void finish(const Delivery& d);

  void handle_register(const Delivery& d, bool worker);
  void handle_worker_connect(const Delivery& d);
  void handle_start_new_task(const Delivery& d);
  void handle_upload_completed(const Delivery& d);
  void handle_checkpoint(const Delivery& d);
  void handle_heartbeat(const Delivery& d);
  void handle_job_result(const Delivery& d);
  void handle_cancel(const Delivery& d);
  void handle_status(const Delivery& d);

  void reply_client(const std::string& client_id, std::string_view type, json body);
  void reply_error(const std::string& client_id, const std::string& request_id, ErrorCode code,
                   const std::string& message);
  void send_worker(const std::string& worker_id, std::string_view type, json body);
  void notify_result(const std::string& job_id);
  void try_assign();
  void detect_failures();
  void report_failure(const std::string& worker_id);
  /// Copies a local blob to every live peer; `done` runs when all copies
  /// finished or the push timed out.
  void push_blob(const std::string& key, std::function<void()> done);

  Executor& exec_;
  BrokerChannel& channel_;
  BlobClient& blobs_;
  BlobStore& local_;
  Rng& rng_;
  OrchestratorOptions options_;
  ReplicaManager replica_;

  bool serving_ = false;
  std::set<std::string> consumed_;
  bool assign_in_flight_ = false;
  std::map<std::string, double> last_seen_;       // worker -> local time
  std::set<std::string> failure_in_flight_;
  std::map<std::uint64_t, double> control_since_;  // delivery tag -> start
  Stats stats_;
};

}  // namespace offload
