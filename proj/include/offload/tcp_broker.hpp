// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// The broker over TCP. Every frame is a length-prefixed JSON object:
//   request   {"op": <name>, "id": <n>, "args": {...}}
//   reply     {"reply": <n>, "ok": true, "result": ...}
//             {"reply": <n>, "ok": false, "error": {"code": ..., "message": ...}}
//   delivery  {"delivery": {"queue", "tag", "exchange_seq", "exchange",
//              "routing_key", "redelivered", "envelope"}}
// Envelopes travel as their canonical encoding (a JSON string field).
//
// Ops: declare_exchange{name, kind}, declare_queue{name}, temporary_queue,
// delete_queue{name}, bind{queue, exchange, pattern},
// publish{exchange, routing_key, envelope}, consume{queue, exclusive},
// cancel{queue}, ack{queue, tag}, nack{queue, tag}, purge{queue}, ping.

#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include "offload/broker.hpp"
#include "offload/errors.hpp"
#include "offload/net.hpp"
#include "offload/runtime.hpp"

namespace offload {

inline constexpr std::uint16_t kDefaultBrokerPort = 5699;

class BrokerServer {
 public:
  /// Throws Error(io) if the port is taken.
  BrokerServer(broker::Broker& broker, std::uint16_t port);
  ~BrokerServer();
  BrokerServer(const BrokerServer&) = delete;
  BrokerServer& operator=(const BrokerServer&) = delete;

  std::uint16_t port() const { return port_; }
  void stop();

 private:
  struct Session;
  void accept_loop();
  void serve(std::shared_ptr<Session> session);

  broker::Broker& broker_;
  net::Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopped_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::list<std::shared_ptr<Session>> sessions_;
  std::list<std::thread> threads_;
};

/// BrokerChannel speaking the TCP protocol. Calls block until the broker
/// replies; deliveries are posted to `exec`.
class TcpBrokerChannel final : public BrokerChannel {
 public:
  TcpBrokerChannel(Executor& exec, const std::string& endpoint, double timeout_s = 5.0);
  ~TcpBrokerChannel() override;

  void declare_exchange(const std::string& name, broker::ExchangeKind kind) override;
  void declare_queue(const std::string& name) override;
  std::string temporary_queue() override;
  void delete_queue(const std::string& name) override;
  void bind(const std::string& queue, const std::string& exchange,
            const std::string& pattern) override;
  void publish(const std::string& exchange, const std::string& routing_key,
               Envelope envelope) override;
  void consume(const std::string& queue, Handler handler, bool exclusive = false) override;
  void cancel(const std::string& queue) override;
  void ack(const broker::Delivery& delivery) override;
  void nack(const broker::Delivery& delivery) override;
  void purge(const std::string& queue) override;

  bool connected() const { return !closed_; }
  /// Fires on the executor when the connection drops.
  std::function<void()> on_disconnect;

 private:
  json call(const std::string& op, json args);
  void read_loop();

  Executor& exec_;
  double timeout_s_;
  net::Socket socket_;
  std::thread reader_;
  std::atomic<bool> closed_{false};
  std::mutex write_mu_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::uint64_t next_id_ = 1;
  std::map<std::uint64_t, json> replies_;
  std::shared_ptr<std::map<std::string, Handler>> handlers_;
  std::shared_ptr<bool> alive_;
};

}  // namespace offload
