// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/envelope.hpp"

#include <algorithm>
#include <cctype>

#include "offload/codec.hpp"
#include "offload/errors.hpp"

namespace offload {

const std::set<std::string, std::less<>>& registered_message_types() {
  static const std::set<std::string, std::less<>> types = {
      std::string(msg::client_register),  std::string(msg::worker_register),
      std::string(msg::session_grant),    std::string(msg::client_connect),
      std::string(msg::worker_connect),   std::string(msg::start_new_task),
      std::string(msg::new_task_ack),     std::string(msg::task_upload_completed),
      std::string(msg::job_assignment),   std::string(msg::checkpoint_manifest),
      std::string(msg::heartbeat),        std::string(msg::job_result),
      std::string(msg::result_ready),     std::string(msg::cancel_job),
      std::string(msg::job_status_request), std::string(msg::job_status_reply),
      std::string(msg::lock_request),     std::string(msg::lock_ack),
      std::string(msg::change_publish),   std::string(msg::promote_backup),
  };
  return types;
}

json to_json(const Envelope& envelope) {
  json j = json::object();
  j["msg_id"] = envelope.msg_id;
  j["msg_type"] = envelope.msg_type;
  j["sender"] = envelope.sender;
  if (envelope.reply_to) j["reply_to"] = *envelope.reply_to;
  j["body"] = envelope.body;
  return j;
}

namespace {

std::string string_field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) fail(ErrorCode::parse, std::string("envelope: missing field '") + name + "'");
  if (!it->is_string()) {
    fail(ErrorCode::parse, std::string("envelope: field '") + name + "' is not a string");
  }
  return it->get<std::string>();
}

}  // namespace

Envelope envelope_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::parse, "envelope: not a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "msg_id" && key != "msg_type" && key != "sender" && key != "reply_to" &&
        key != "body") {
      fail(ErrorCode::parse, "envelope: unexpected field '" + key + "'");
    }
  }
  Envelope e;
  e.msg_id = string_field(j, "msg_id");
  if (!is_guid(e.msg_id)) fail(ErrorCode::parse, "envelope: field 'msg_id' is not a GUID");
  e.msg_type = string_field(j, "msg_type");
  if (!registered_message_types().contains(e.msg_type)) {
    fail(ErrorCode::parse, "envelope: field 'msg_type' has unregistered value '" + e.msg_type + "'");
  }
  e.sender = string_field(j, "sender");
  if (j.contains("reply_to")) e.reply_to = string_field(j, "reply_to");
  auto body = j.find("body");
  if (body == j.end()) fail(ErrorCode::parse, "envelope: missing field 'body'");
  if (!body->is_object()) fail(ErrorCode::parse, "envelope: field 'body' is not an object");
  e.body = *body;
  return e;
}

std::string encode(const Envelope& envelope) {
  if (!registered_message_types().contains(envelope.msg_type)) {
    fail(ErrorCode::schema, "envelope: unregistered msg_type '" + envelope.msg_type + "'");
  }
  return to_json(envelope).dump();
}

Envelope decode(std::string_view bytes) {
  json j = json::parse(bytes.begin(), bytes.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) fail(ErrorCode::parse, "envelope: malformed JSON");
  return envelope_from_json(j);
}

std::vector<std::string> split_tokens(std::string_view key) {
  std::vector<std::string> tokens;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = key.find('.', start);
    tokens.emplace_back(key.substr(start, dot == std::string_view::npos ? dot : dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return tokens;
}

RoutingKey RoutingKey::parse(std::string_view key) {
  const auto tokens = split_tokens(key);
  for (const auto& t : tokens) {
    const bool ok = !t.empty() && std::all_of(t.begin(), t.end(), [](unsigned char c) {
      return std::isalnum(c) || c == '-' || c == '_';
    });
    if (!ok) {
      fail(ErrorCode::parse, "routing key '" + std::string(key) + "': invalid token");
    }
  }
  RoutingKey rk{};
  if (tokens.size() == 1) {
    if (tokens[0] == msg::client_register) {
      rk.kind = Kind::client_register;
    } else if (tokens[0] == msg::worker_register) {
      rk.kind = Kind::worker_register;
    } else {
      rk.kind = Kind::principal;
      rk.principal = tokens[0];
    }
    return rk;
  }
  if (tokens.size() != 2) {
    fail(ErrorCode::parse, "routing key '" + std::string(key) + "': expected one or two tokens");
  }
  rk.orchestrator = tokens[0];
  if (tokens[1] == msg::client_connect) {
    rk.kind = Kind::client_connect;
  } else if (tokens[1] == msg::worker_connect) {
    rk.kind = Kind::worker_connect;
  } else {
    rk.kind = Kind::orchestrator_principal;
    rk.principal = tokens[1];
  }
  return rk;
}

std::string RoutingKey::str() const {
  switch (kind) {
    case Kind::client_register: return keys::client_register();
    case Kind::worker_register: return keys::worker_register();
    case Kind::client_connect: return keys::client_connect(orchestrator);
    case Kind::worker_connect: return keys::worker_connect(orchestrator);
    case Kind::orchestrator_principal: return keys::to_orchestrator(orchestrator, principal);
    case Kind::principal: return keys::to_principal(principal);
  }
  return {};
}

namespace keys {
std::string client_register() { return std::string(msg::client_register); }
std::string worker_register() { return std::string(msg::worker_register); }
std::string client_connect(std::string_view orchestrator) {
  return std::string(orchestrator) + "." + std::string(msg::client_connect);
}
std::string worker_connect(std::string_view orchestrator) {
  return std::string(orchestrator) + "." + std::string(msg::worker_connect);
}
std::string to_orchestrator(std::string_view orchestrator, std::string_view principal) {
  return std::string(orchestrator) + "." + std::string(principal);
}
std::string to_principal(std::string_view principal) { return std::string(principal); }
}  // namespace keys

}  // namespace offload
