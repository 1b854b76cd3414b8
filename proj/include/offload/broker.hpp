// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// Single-node message broker: exchanges, queues, bindings, acknowledgement
// based retention and totally ordered fanout.
//
// Every mutating call runs under one mutex, so publishes are serialized and
// each exchange hands out strictly increasing sequence numbers. Deliveries
// are pushed to connection sinks after the mutex is released.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "offload/envelope.hpp"

namespace offload::broker {

enum class ExchangeKind { topic, direct, fanout };

std::string_view to_string(ExchangeKind kind);
ExchangeKind exchange_kind_from_string(std::string_view text);

/// Topic pattern match over dot-separated tokens. `*` matches exactly one
/// token, `#` matches zero or more tokens.
bool match(std::string_view pattern, std::string_view routing_key);

struct Delivery {
  std::string queue;
  std::uint64_t tag = 0;
  std::uint64_t exchange_seq = 0;
  std::string exchange;
  std::string routing_key;
  bool redelivered = false;
  std::shared_ptr<const Envelope> envelope;
};

using ConnectionId = std::uint64_t;
using DeliverySink = std::function<void(const Delivery&)>;

struct Binding {
  std::string queue;
  std::string exchange;
  std::string pattern;
  auto operator<=>(const Binding&) const = default;
};

class Broker {
 public:
  Broker();
  ~Broker();
  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  /// Rebuilds durable state from a journal written by a previous instance.
  /// Messages that were delivered but not acknowledged come back as
  /// redelivered.
  static std::unique_ptr<Broker> recover(std::istream& journal);

  /// Appends every durable mutation to `out` (one JSON object per line).
  void attach_journal(std::ostream* out);

  ConnectionId connect(DeliverySink sink);
  /// Drops consumers, requeues unacknowledged deliveries at the head of their
  /// queues and deletes the connection's temporary queues.
  void disconnect(ConnectionId conn);

  /// Idempotent for the same kind; Error(conflict) for a different kind.
  void declare_exchange(const std::string& name, ExchangeKind kind);
  void declare_queue(const std::string& name);
  /// Auto-named queue deleted when `owner` disconnects.
  std::string temporary_queue(ConnectionId owner);
  void delete_queue(const std::string& name);
  void bind(const std::string& queue, const std::string& exchange, const std::string& pattern);

  /// Returns the exchange sequence number assigned to the message.
  std::uint64_t publish(const std::string& exchange, const std::string& routing_key,
                        std::shared_ptr<const Envelope> envelope);
  std::uint64_t publish(const std::string& exchange, const std::string& routing_key,
                        Envelope envelope);

  /// Registers `conn` as a consumer of `queue` (prefetch 1). With `exclusive`
  /// the call fails with Error(conflict) if the queue already has a consumer.
  void consume(ConnectionId conn, const std::string& queue, bool exclusive = false);
  void cancel(ConnectionId conn, const std::string& queue);
  void ack(ConnectionId conn, const std::string& queue, std::uint64_t tag);
  void nack(ConnectionId conn, const std::string& queue, std::uint64_t tag);
  std::size_t purge(const std::string& queue);

  // Inspection.
  bool has_exchange(const std::string& name) const;
  bool has_queue(const std::string& name) const;
  std::vector<std::string> queue_names() const;
  std::size_t pending_count(const std::string& queue) const;
  std::size_t unacked_count(const std::string& queue) const;
  std::vector<Binding> bindings() const;
  std::vector<Delivery> pending(const std::string& queue) const;
  std::uint64_t next_seq(const std::string& exchange) const;

 private:
  struct Exchange {
    ExchangeKind kind;
    std::uint64_t next_seq = 1;
  };
  struct Message {
    std::uint64_t id;  // broker-wide, used by the journal
    std::uint64_t exchange_seq;
    std::string exchange;
    std::string routing_key;
    bool redelivered = false;
    std::shared_ptr<const Envelope> envelope;
  };
  struct Unacked {
    Message message;
    ConnectionId consumer;
  };
  struct Queue {
    std::deque<Message> pending;
    std::map<std::uint64_t, Unacked> unacked;  // by delivery tag
    std::vector<ConnectionId> consumers;
    std::size_t next_consumer = 0;
    std::optional<ConnectionId> owner;  // temporary queues
  };
  struct Connection {
    std::shared_ptr<DeliverySink> sink;
  };
  using Outbox = std::vector<std::pair<std::shared_ptr<DeliverySink>, Delivery>>;

  Queue& queue_or_throw(const std::string& name);
  const Queue& queue_or_throw(const std::string& name) const;
  void dispatch(const std::string& name, Queue& queue, Outbox& out);
  void dispatch_all(Outbox& out);
  void requeue(const std::string& name, Queue& queue, std::uint64_t tag);
  void erase_queue(const std::string& name);
  static void flush(Outbox& out);
  void journal(const json& record);

  mutable std::mutex mu_;
  std::map<std::string, Exchange> exchanges_;
  std::map<std::string, Queue> queues_;
  std::set<Binding> bindings_;
  std::map<ConnectionId, Connection> connections_;
  ConnectionId next_connection_ = 1;
  std::uint64_t next_tag_ = 1;
  std::uint64_t next_message_ = 1;
  std::uint64_t next_temp_ = 1;
  std::ostream* journal_ = nullptr;
};

}  // namespace offload::broker
