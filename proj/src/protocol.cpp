// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/protocol.hpp"

#include "offload/codec.hpp"

namespace offload::protocol {

std::string principal_queue(Principal kind, const std::string& id) {
  return (kind == Principal::client ? "client." : "worker.") + id;
}

std::string principal_exchange(Principal kind) {
  return std::string(kind == Principal::client ? exchange::client : exchange::worker);
}

Envelope make_envelope(Rng& rng, std::string_view type, const std::string& sender, json body,
                       std::optional<std::string> reply_to) {
  return Envelope{make_guid(rng), std::string(type), sender, std::move(reply_to), std::move(body)};
}

namespace {

struct Flow {
  ConnectOptions options;
  ConnectDone done;
  std::string temp;
  TimerId timer = 0;
  bool finished = false;
};

}  // namespace

void connect(Executor& exec, BrokerChannel& channel, Rng& rng, ConnectOptions options,
             ConnectDone done) {
  auto flow = std::make_shared<Flow>();
  flow->options = std::move(options);
  flow->done = std::move(done);
  const std::string ex = principal_exchange(flow->options.kind);
  try {
    flow->temp = channel.temporary_queue();
    channel.bind(flow->temp, ex, flow->temp);
  } catch (const Error& e) {
    exec.post([flow, e] { flow->done(std::nullopt, e); });
    return;
  }

  auto finish = [flow, &channel](std::optional<SessionGrant> grant, std::optional<Error> err) {
    if (flow->finished) return;
    flow->finished = true;
    try {
      channel.cancel(flow->temp);
      channel.delete_queue(flow->temp);
    } catch (const Error&) {
    }
    flow->done(std::move(grant), std::move(err));
  };

  flow->timer = exec.call_after(flow->options.timeout_s, [finish] {
    finish(std::nullopt, Error(ErrorCode::timeout, "session timeout: no orchestrator answered"));
  });

  channel.consume(flow->temp, [flow, finish, &exec, &channel, &rng, ex](const broker::Delivery& d) {
    channel.ack(d);
    if (flow->finished || d.envelope->msg_type != msg::session_grant) return;
    const json& b = d.envelope->body;
    SessionGrant grant;
    try {
      grant.principal_id = b.at("principal_id").get<std::string>();
      grant.orchestrator = b.at("orchestrator").get<std::string>();
      grant.blob_endpoint = b.value("blob_endpoint", "");
    } catch (const json::exception&) {
      return;
    }
    exec.cancel(flow->timer);
    const Principal kind = flow->options.kind;
    const std::string queue = principal_queue(kind, grant.principal_id);
    try {
      channel.declare_queue(queue);
      channel.bind(queue, ex, keys::to_principal(grant.principal_id));
      if (flow->options.purge) channel.purge(queue);
      const std::string key = kind == Principal::client ? keys::client_connect(grant.orchestrator)
                                                         : keys::worker_connect(grant.orchestrator);
      const std::string id_field = kind == Principal::client ? "client_id" : "worker_id";
      channel.publish(std::string(exchange::orchestrator), key,
                      make_envelope(rng,
                                    kind == Principal::client ? msg::client_connect : msg::worker_connect,
                                    flow->options.sender, {{id_field, grant.principal_id}}));
    } catch (const Error& e) {
      finish(std::nullopt, e);
      return;
    }
    finish(std::move(grant), std::nullopt);
  });

  const bool client = flow->options.kind == Principal::client;
  json body = client ? json{{"username", flow->options.identity}}
                     : json{{"worker_id", flow->options.identity}};
  try {
    channel.publish(std::string(exchange::orchestrator),
                    client ? keys::client_register() : keys::worker_register(),
                    make_envelope(rng, client ? msg::client_register : msg::worker_register,
                                  flow->options.sender, std::move(body), flow->temp));
  } catch (const Error& e) {
    exec.cancel(flow->timer);
    finish(std::nullopt, e);
  }
}

}  // namespace offload::protocol
