// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// Message envelope shared by every node, and the routing-key grammar.
//
// Wire form: a canonical JSON object with sorted keys
//   {"body":{...},"msg_id":"<guid>","msg_type":"<type>","reply_to":"<queue>","sender":"<node>"}
// `reply_to` is omitted when absent. Encoding is deterministic, so equal
// envelopes always produce identical bytes.

#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace offload {

using json = nlohmann::json;

struct Envelope {
  std::string msg_id;
  std::string msg_type;
  std::string sender;
  std::optional<std::string> reply_to;
  json body = json::object();

  bool operator==(const Envelope&) const = default;
};

namespace msg {
inline constexpr std::string_view client_register = "clientRegister";
inline constexpr std::string_view worker_register = "workerRegister";
inline constexpr std::string_view session_grant = "sessionGrant";
inline constexpr std::string_view client_connect = "clientConnect";
inline constexpr std::string_view worker_connect = "workerConnect";
inline constexpr std::string_view start_new_task = "startNewTask";
inline constexpr std::string_view new_task_ack = "newTaskAck";
inline constexpr std::string_view task_upload_completed = "taskUploadCompleted";
inline constexpr std::string_view job_assignment = "jobAssignment";
inline constexpr std::string_view checkpoint_manifest = "checkpointManifest";
inline constexpr std::string_view heartbeat = "heartbeat";
inline constexpr std::string_view job_result = "jobResult";
inline constexpr std::string_view result_ready = "resultReady";
inline constexpr std::string_view cancel_job = "cancelJob";
inline constexpr std::string_view job_status_request = "jobStatusRequest";
inline constexpr std::string_view job_status_reply = "jobStatusReply";
inline constexpr std::string_view lock_request = "lockRequest";
inline constexpr std::string_view lock_ack = "lockAck";
inline constexpr std::string_view change_publish = "changePublish";
inline constexpr std::string_view promote_backup = "promoteBackup";
}  // namespace msg

const std::set<std::string, std::less<>>& registered_message_types();

/// Canonical bytes. Throws Error(schema) if msg_type is not registered.
std::string encode(const Envelope& envelope);

/// Throws Error(parse) naming the offending field.
Envelope decode(std::string_view bytes);

/// Envelope <-> JSON object (the encoded form before serialization).
json to_json(const Envelope& envelope);
Envelope envelope_from_json(const json& object);

// Exchange names.
namespace exchange {
inline constexpr std::string_view orchestrator = "orchestrator";
inline constexpr std::string_view client = "client";
inline constexpr std::string_view worker = "worker";
inline constexpr std::string_view replication = "replication";  // fanout
inline constexpr std::string_view replica = "replica";          // direct, lock acks
}  // namespace exchange

/// Routing keys used between principals and orchestrators:
///   clientRegister | workerRegister | {orch}.clientConnect |
///   {orch}.workerConnect | {orch}.{principalId} | {principalId}
struct RoutingKey {
  enum class Kind {
    client_register,
    worker_register,
    client_connect,
    worker_connect,
    orchestrator_principal,
    principal,
  };
  Kind kind;
  std::string orchestrator;  // empty unless the key is orchestrator-scoped
  std::string principal;     // id, empty for register/connect keys

  /// Throws Error(parse) for keys outside the grammar.
  static RoutingKey parse(std::string_view key);
  std::string str() const;
};

namespace keys {
std::string client_register();
std::string worker_register();
std::string client_connect(std::string_view orchestrator);
std::string worker_connect(std::string_view orchestrator);
std::string to_orchestrator(std::string_view orchestrator, std::string_view principal);
std::string to_principal(std::string_view principal);
}  // namespace keys

std::vector<std::string> split_tokens(std::string_view key);

}  // namespace offload
