// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// Client node. Requests go to "{orchestrator}.{client_id}" and are matched to
// replies by request_id (the request's msg_id). A request that gets no reply
// is resent with the same msg_id, so the orchestrator applies it once.

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "offload/blob.hpp"
#include "offload/protocol.hpp"

namespace offload {

struct ClientOptions {
  std::string name;      // sender
  std::string username;
  double request_timeout_s = 5.0;
  int attempts = 3;
  double session_timeout_s = protocol::kSessionTimeout;
};

class ClientSession {
 public:
  using Done = std::function<void(std::optional<Error>)>;
  using JobDone = std::function<void(std::optional<json> job, std::optional<Error>)>;
  using ListDone = std::function<void(std::optional<json> jobs, std::optional<Error>)>;
  using DataDone = std::function<void(std::optional<std::string> data, std::optional<Error>)>;

  ClientSession(Executor& exec, BrokerChannel& channel, BlobClient& blobs, Rng& rng,
                ClientOptions options);
  ClientSession(const ClientSession&) = delete;
  ClientSession& operator=(const ClientSession&) = delete;

  void connect(Done done);
  bool connected() const { return connected_; }
  const std::string& client_id() const { return client_id_; }
  const std::string& orchestrator() const { return orchestrator_; }
  const std::string& blob_endpoint() const { return blob_endpoint_; }

  /// Creates a job, uploads `program_spec` and completes the upload. `done`
  /// receives the job record after the upload is accepted.
  void submit(const std::string& program_spec, const std::string& name, JobDone done);
  void status(const std::string& job_id, JobDone done);
  void list(const std::string& filter, ListDone done);
  void cancel(const std::string& job_id, JobDone done);
  /// Fetches result/{job_id} from `endpoint` (the current one if empty).
  void download(const std::string& job_id, const std::string& endpoint, DataDone done);

  /// Fired once per job when its result is ready.
  std::function<void(const json& notification)> on_result;

  std::uint64_t result_ready_received() const { return result_ready_raw_; }
  const std::set<std::string>& results_ready() const { return ready_jobs_; }

 private:
  struct Pending {
    Envelope envelope;
    std::function<void(const json&)> on_reply;
    std::function<void(Error)> on_error;
    std::function<void(Task)> before_send;  // runs before every (re)send
    int sent = 0;
    TimerId timer = 0;
  };

  void request(std::string_view type, json body, std::function<void(const json&)> on_reply,
               std::function<void(Error)> on_error, std::function<void(Task)> before_send = {});
  void send(const std::string& msg_id);
  void on_message(const broker::Delivery& d);

  Executor& exec_;
  BrokerChannel& channel_;
  BlobClient& blobs_;
  Rng& rng_;
  ClientOptions options_;

  bool connected_ = false;
  std::string client_id_;
  std::string orchestrator_;
  std::string blob_endpoint_;
  std::map<std::string, Pending> pending_;
  std::set<std::string> seen_msg_ids_;
  std::set<std::string> ready_jobs_;
  std::uint64_t result_ready_raw_ = 0;
};

}  // namespace offload
