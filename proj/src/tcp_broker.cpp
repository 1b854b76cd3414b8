// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/tcp_broker.hpp"

#include <chrono>

namespace offload {

namespace {

json delivery_to_json(const broker::Delivery& d) {
  return {{"queue", d.queue},
          {"tag", d.tag},
          {"exchange_seq", d.exchange_seq},
          {"exchange", d.exchange},
          {"routing_key", d.routing_key},
          {"redelivered", d.redelivered},
          {"envelope", encode(*d.envelope)}};
}

broker::Delivery delivery_from_json(const json& j) {
  broker::Delivery d;
  d.queue = j.at("queue").get<std::string>();
  d.tag = j.at("tag").get<std::uint64_t>();
  d.exchange_seq = j.at("exchange_seq").get<std::uint64_t>();
  d.exchange = j.at("exchange").get<std::string>();
  d.routing_key = j.at("routing_key").get<std::string>();
  d.redelivered = j.at("redelivered").get<bool>();
  d.envelope = std::make_shared<const Envelope>(decode(j.at("envelope").get<std::string>()));
  return d;
}

std::string arg(const json& args, const char* key) {
  auto it = args.find(key);
  if (it == args.end() || !it->is_string()) {
    fail(ErrorCode::schema, std::string("missing string argument '") + key + "'");
  }
  return it->get<std::string>();
}

std::uint64_t tag_arg(const json& args) {
  auto it = args.find("tag");
  if (it == args.end() || !it->is_number_unsigned()) {
    fail(ErrorCode::schema, "missing integer argument 'tag'");
  }
  return it->get<std::uint64_t>();
}

}  // namespace

struct BrokerServer::Session {
  net::Socket socket;
  std::mutex write_mu;
  broker::ConnectionId conn = 0;

  void send(const json& frame) {
    std::lock_guard lock(write_mu);
    try {
      net::write_frame(socket, frame.dump());
    } catch (const Error&) {
      // The reader notices the broken connection and cleans up.
    }
  }
};

BrokerServer::BrokerServer(broker::Broker& broker, std::uint16_t port)
    : broker_(broker), listener_(net::listen_tcp(port)), port_(net::local_port(listener_)) {
  acceptor_ = std::thread([this] { accept_loop(); });
}

BrokerServer::~BrokerServer() { stop(); }

void BrokerServer::stop() {
  if (stopped_.exchange(true)) return;
  listener_.shutdown();
  if (acceptor_.joinable()) acceptor_.join();
  std::list<std::thread> threads;
  {
    std::lock_guard lock(mu_);
    for (auto& s : sessions_) s->socket.shutdown();
    threads.swap(threads_);
  }
  for (auto& t : threads) t.join();
}

void BrokerServer::accept_loop() {
  while (!stopped_) {
    net::Socket s;
    try {
      s = net::accept_tcp(listener_);
    } catch (const Error&) {
      if (stopped_) return;
      continue;
    }
    auto session = std::make_shared<Session>();
    session->socket = std::move(s);
    std::lock_guard lock(mu_);
    if (stopped_) return;
    sessions_.push_back(session);
    threads_.emplace_back([this, session] { serve(session); });
  }
}

void BrokerServer::serve(std::shared_ptr<Session> session) {
  std::weak_ptr<Session> weak = session;
  session->conn = broker_.connect([weak](const broker::Delivery& d) {
    if (auto s = weak.lock()) s->send({{"delivery", delivery_to_json(d)}});
  });
  while (true) {
    std::optional<std::string> frame;
    try {
      frame = net::read_frame(session->socket);
    } catch (const Error&) {
      break;
    }
    if (!frame) break;
    json reply;
    std::uint64_t id = 0;
    try {
      const json req = json::parse(*frame);
      id = req.value("id", std::uint64_t{0});
      const std::string op = req.at("op").get<std::string>();
      const json args = req.value("args", json::object());
      json result = nullptr;
      if (op == "ping") {
        result = "pong";
      } else if (op == "declare_exchange") {
        broker_.declare_exchange(arg(args, "name"),
                                 broker::exchange_kind_from_string(arg(args, "kind")));
      } else if (op == "declare_queue") {
        broker_.declare_queue(arg(args, "name"));
      } else if (op == "temporary_queue") {
        result = broker_.temporary_queue(session->conn);
      } else if (op == "delete_queue") {
        broker_.delete_queue(arg(args, "name"));
      } else if (op == "bind") {
        broker_.bind(arg(args, "queue"), arg(args, "exchange"), arg(args, "pattern"));
      } else if (op == "publish") {
        result = broker_.publish(arg(args, "exchange"), arg(args, "routing_key"),
                                 decode(arg(args, "envelope")));
      } else if (op == "consume") {
        broker_.consume(session->conn, arg(args, "queue"), args.value("exclusive", false));
      } else if (op == "cancel") {
        broker_.cancel(session->conn, arg(args, "queue"));
      } else if (op == "ack") {
        broker_.ack(session->conn, arg(args, "queue"), tag_arg(args));
      } else if (op == "nack") {
        broker_.nack(session->conn, arg(args, "queue"), tag_arg(args));
      } else if (op == "purge") {
        result = broker_.purge(arg(args, "queue"));
      } else {
        fail(ErrorCode::protocol, "unknown op '" + op + "'");
      }
      reply = {{"reply", id}, {"ok", true}, {"result", result}};
    } catch (const Error& e) {
      reply = {{"reply", id},
               {"ok", false},
               {"error", {{"code", to_string(e.code())}, {"message", e.what()}}}};
    } catch (const json::exception& e) {
      reply = {{"reply", id},
               {"ok", false},
               {"error", {{"code", "parse"}, {"message", e.what()}}}};
    }
    session->send(reply);
  }
  broker_.disconnect(session->conn);
  std::lock_guard lock(mu_);
  sessions_.remove(session);
}

TcpBrokerChannel::TcpBrokerChannel(Executor& exec, const std::string& endpoint, double timeout_s)
    : exec_(exec),
      timeout_s_(timeout_s),
      handlers_(std::make_shared<std::map<std::string, Handler>>()),
      alive_(std::make_shared<bool>(true)) {
  const auto [host, port] = net::parse_endpoint(endpoint);
  socket_ = net::connect_tcp(host, port, timeout_s);
  reader_ = std::thread([this] { read_loop(); });
  call("ping", json::object());
}

TcpBrokerChannel::~TcpBrokerChannel() {
  *alive_ = false;
  closed_ = true;
  socket_.shutdown();
  if (reader_.joinable()) reader_.join();
}

void TcpBrokerChannel::read_loop() {
  while (true) {
    std::optional<std::string> frame;
    try {
      frame = net::read_frame(socket_);
    } catch (const Error&) {
      frame.reset();
    }
    if (!frame) break;
    json msg;
    try {
      msg = json::parse(*frame);
    } catch (const json::exception&) {
      break;
    }
    if (msg.contains("delivery")) {
      broker::Delivery d;
      try {
        d = delivery_from_json(msg.at("delivery"));
      } catch (const std::exception&) {
        continue;
      }
      exec_.post([handlers = handlers_, alive = alive_, d] {
        if (!*alive) return;
        auto it = handlers->find(d.queue);
        if (it != handlers->end()) {
          auto handler = it->second;
          handler(d);
        }
      });
      continue;
    }
    const auto id = msg.value("reply", std::uint64_t{0});
    std::lock_guard lock(mu_);
    replies_[id] = std::move(msg);
    cv_.notify_all();
  }
  closed_ = true;
  cv_.notify_all();
  exec_.post([this, alive = alive_] {
    if (*alive && on_disconnect) on_disconnect();
  });
}

json TcpBrokerChannel::call(const std::string& op, json args) {
  if (closed_) fail(ErrorCode::io, "broker connection closed");
  std::uint64_t id;
  {
    std::lock_guard lock(mu_);
    id = next_id_++;
  }
  {
    std::lock_guard lock(write_mu_);
    net::write_frame(socket_, json{{"op", op}, {"id", id}, {"args", std::move(args)}}.dump());
  }
  std::unique_lock lock(mu_);
  const bool got = cv_.wait_for(lock, std::chrono::duration<double>(timeout_s_),
                                [&] { return replies_.contains(id) || closed_; });
  if (!replies_.contains(id)) {
    if (!got) fail(ErrorCode::timeout, "broker did not answer '" + op + "'");
    fail(ErrorCode::io, "broker connection closed");
  }
  json reply = std::move(replies_[id]);
  replies_.erase(id);
  lock.unlock();
  if (!reply.value("ok", false)) {
    const json& e = reply.at("error");
    const auto code = error_code_from_string(e.value("code", ""));
    fail(code.value_or(ErrorCode::protocol), e.value("message", "broker error"));
  }
  return reply.value("result", json(nullptr));
}

void TcpBrokerChannel::declare_exchange(const std::string& name, broker::ExchangeKind kind) {
  call("declare_exchange", {{"name", name}, {"kind", broker::to_string(kind)}});
}

void TcpBrokerChannel::declare_queue(const std::string& name) {
  call("declare_queue", {{"name", name}});
}

std::string TcpBrokerChannel::temporary_queue() {
  return call("temporary_queue", json::object()).get<std::string>();
}

void TcpBrokerChannel::delete_queue(const std::string& name) {
  handlers_->erase(name);
  call("delete_queue", {{"name", name}});
}

void TcpBrokerChannel::bind(const std::string& queue, const std::string& exchange,
                            const std::string& pattern) {
  call("bind", {{"queue", queue}, {"exchange", exchange}, {"pattern", pattern}});
}

void TcpBrokerChannel::publish(const std::string& exchange, const std::string& routing_key,
                               Envelope envelope) {
  call("publish", {{"exchange", exchange}, {"routing_key", routing_key}, {"envelope", encode(envelope)}});
}

void TcpBrokerChannel::consume(const std::string& queue, Handler handler, bool exclusive) {
  (*handlers_)[queue] = std::move(handler);
  try {
    call("consume", {{"queue", queue}, {"exclusive", exclusive}});
  } catch (...) {
    handlers_->erase(queue);
    throw;
  }
}

void TcpBrokerChannel::cancel(const std::string& queue) {
  handlers_->erase(queue);
  call("cancel", {{"queue", queue}});
}

void TcpBrokerChannel::ack(const broker::Delivery& delivery) {
  call("ack", {{"queue", delivery.queue}, {"tag", delivery.tag}});
}

void TcpBrokerChannel::nack(const broker::Delivery& delivery) {
  call("nack", {{"queue", delivery.queue}, {"tag", delivery.tag}});
}

void TcpBrokerChannel::purge(const std::string& queue) { call("purge", {{"queue", queue}}); }

}  // namespace offload
