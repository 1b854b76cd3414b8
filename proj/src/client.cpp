// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/client.hpp"

namespace offload {

namespace {

Error reply_error(const json& body) {
  const json& e = body.at("error");
  const auto code = error_code_from_string(e.value("code", ""));
  return Error(code.value_or(ErrorCode::protocol), e.value("message", "request failed"));
}

}  // namespace

ClientSession::ClientSession(Executor& exec, BrokerChannel& channel, BlobClient& blobs, Rng& rng,
                             ClientOptions options)
    : exec_(exec), channel_(channel), blobs_(blobs), rng_(rng), options_(std::move(options)) {}

void ClientSession::connect(Done done) {
  protocol::ConnectOptions opts;
  opts.kind = protocol::Principal::client;
  opts.identity = options_.username;
  opts.sender = options_.name;
  opts.timeout_s = options_.session_timeout_s;
  protocol::connect(exec_, channel_, rng_, opts,
                    [this, done](std::optional<protocol::SessionGrant> grant,
                                 std::optional<Error> err) {
                      if (!grant) return done(err);
                      client_id_ = grant->principal_id;
                      orchestrator_ = grant->orchestrator;
                      blob_endpoint_ = grant->blob_endpoint;
                      connected_ = true;
                      channel_.consume(
                          protocol::principal_queue(protocol::Principal::client, client_id_),
                          [this](const broker::Delivery& d) { on_message(d); });
                      done(std::nullopt);
                    });
}

void ClientSession::request(std::string_view type, json body,
                            std::function<void(const json&)> on_reply,
                            std::function<void(Error)> on_error,
                            std::function<void(Task)> before_send) {
  if (!connected_) return on_error(Error(ErrorCode::session, "not connected"));
  Envelope e = protocol::make_envelope(rng_, type, options_.name, std::move(body));
  const std::string id = e.msg_id;
  pending_.emplace(id, Pending{std::move(e), std::move(on_reply), std::move(on_error),
                               std::move(before_send)});
  send(id);
}

void ClientSession::send(const std::string& msg_id) {
  auto it = pending_.find(msg_id);
  if (it == pending_.end()) return;
  Pending& p = it->second;
  if (p.sent >= options_.attempts) {
    auto on_error = std::move(p.on_error);
    pending_.erase(it);
    on_error(Error(ErrorCode::timeout, "no reply from orchestrator after " +
                                           std::to_string(options_.attempts) + " attempts"));
    return;
  }
  ++p.sent;
  if (p.timer != 0) exec_.cancel(p.timer);
  p.timer = exec_.call_after(options_.request_timeout_s, [this, msg_id] { send(msg_id); });
  auto transmit = [this, msg_id] {
    auto it = pending_.find(msg_id);
    if (it == pending_.end()) return;
    channel_.publish(std::string(exchange::orchestrator),
                     keys::to_orchestrator(orchestrator_, client_id_), it->second.envelope);
  };
  if (p.before_send) {
    p.before_send(transmit);
  } else {
    transmit();
  }
}

void ClientSession::on_message(const broker::Delivery& d) {
  const Envelope& e = *d.envelope;
  channel_.ack(d);
  if (e.msg_type == msg::result_ready) {
    ++result_ready_raw_;
    const std::string job = e.body.value("job_id", "");
    if (!seen_msg_ids_.insert(e.msg_id).second || !ready_jobs_.insert(job).second) return;
    if (on_result) on_result(e.body);
    return;
  }
  if (e.msg_type == msg::promote_backup) {
    orchestrator_ = e.body.value("orchestrator", orchestrator_);
    blob_endpoint_ = e.body.value("blob_endpoint", blob_endpoint_);
    std::vector<std::string> ids;
    for (const auto& [id, p] : pending_) ids.push_back(id);
    for (const auto& id : ids) {
      auto it = pending_.find(id);
      if (it != pending_.end() && it->second.sent > 0) --it->second.sent;  // not the caller's fault
      send(id);
    }
    return;
  }
  if (!e.body.is_object() || !e.body.contains("request_id")) return;
  auto it = pending_.find(e.body.at("request_id").get<std::string>());
  if (it == pending_.end()) return;  // duplicate reply
  Pending p = std::move(it->second);
  pending_.erase(it);
  if (p.timer != 0) exec_.cancel(p.timer);
  if (e.body.contains("error")) return p.on_error(reply_error(e.body));
  try {
    p.on_reply(e.body);
  } catch (const json::exception& ex) {
    p.on_error(Error(ErrorCode::schema, std::string("malformed reply: ") + ex.what()));
  }
}

void ClientSession::submit(const std::string& program_spec, const std::string& name,
                           JobDone done) {
  auto fail_done = [done](Error e) { done(std::nullopt, std::move(e)); };
  request(
      msg::start_new_task, {{"client_id", client_id_}, {"name", name}},
      [this, program_spec, done, fail_done](const json& ack) {
        const std::string job_id = ack.at("job_id").get<std::string>();
        const std::string ref = ack.at("upload_ref").get<std::string>();
        // The upload goes to whichever replica is primary when the request
        // is (re)sent.
        auto upload = [this, ref, program_spec](Task transmit) {
          blobs_.put(blob_endpoint_, ref, program_spec, [transmit](bool ok) {
            if (ok) transmit();
          });
        };
        request(msg::task_upload_completed, {{"client_id", client_id_}, {"job_id", job_id}},
                [done](const json& reply) { done(reply.at("job"), std::nullopt); }, fail_done,
                upload);
      },
      fail_done);
}

void ClientSession::status(const std::string& job_id, JobDone done) {
  request(
      msg::job_status_request, {{"client_id", client_id_}, {"job_id", job_id}},
      [done](const json& reply) { done(reply.at("job"), std::nullopt); },
      [done](Error e) { done(std::nullopt, std::move(e)); });
}

void ClientSession::list(const std::string& filter, ListDone done) {
  request(
      msg::job_status_request, {{"client_id", client_id_}, {"filter", filter}},
      [done](const json& reply) { done(reply.at("jobs"), std::nullopt); },
      [done](Error e) { done(std::nullopt, std::move(e)); });
}

void ClientSession::cancel(const std::string& job_id, JobDone done) {
  request(
      msg::cancel_job, {{"client_id", client_id_}, {"job_id", job_id}},
      [done](const json& reply) { done(reply.at("job"), std::nullopt); },
      [done](Error e) { done(std::nullopt, std::move(e)); });
}

void ClientSession::download(const std::string& job_id, const std::string& endpoint,
                             DataDone done) {
  const std::string ref = "result/" + job_id;
  blobs_.get(endpoint.empty() ? blob_endpoint_ : endpoint, ref,
             [done, ref](std::optional<std::string> data) {
               if (!data) return done(std::nullopt, Error(ErrorCode::not_found, "no blob '" + ref + "'"));
               done(std::move(data), std::nullopt);
             });
}

}  // namespace offload
