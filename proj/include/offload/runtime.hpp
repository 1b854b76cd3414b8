// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// Execution environments for node state machines. A node only ever touches
// its Executor (clock + timers) and its BrokerChannel, so the same code runs
// on the simulator's virtual clock and as a live process.

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <queue>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "offload/broker.hpp"
#include "offload/rng.hpp"

namespace offload {

using Task = std::function<void()>;
using TimerId = std::uint64_t;

class Executor {
 public:
  virtual ~Executor() = default;
  /// Seconds (virtual or since the loop started).
  virtual double now() const = 0;
  virtual TimerId call_after(double delay_s, Task task) = 0;
  virtual void cancel(TimerId id) = 0;
  void post(Task task) { call_after(0.0, std::move(task)); }
};

/// Node-side view of a broker connection. Handlers run on the node's
/// executor.
class BrokerChannel {
 public:
  using Handler = std::function<void(const broker::Delivery&)>;
  virtual ~BrokerChannel() = default;
  virtual void declare_exchange(const std::string& name, broker::ExchangeKind kind) = 0;
  virtual void declare_queue(const std::string& name) = 0;
  virtual std::string temporary_queue() = 0;
  virtual void delete_queue(const std::string& name) = 0;
  virtual void bind(const std::string& queue, const std::string& exchange,
                    const std::string& pattern) = 0;
  virtual void publish(const std::string& exchange, const std::string& routing_key,
                       Envelope envelope) = 0;
  virtual void consume(const std::string& queue, Handler handler, bool exclusive = false) = 0;
  virtual void cancel(const std::string& queue) = 0;
  virtual void ack(const broker::Delivery& delivery) = 0;
  virtual void nack(const broker::Delivery& delivery) = 0;
  virtual void purge(const std::string& queue) = 0;
};

/// Declares the three topic exchanges plus the replication fanout and the
/// direct exchange used for lock acknowledgements.
void declare_topology(BrokerChannel& channel);

namespace sim {

/// Global virtual-time event queue. Ties are broken by insertion order.
class EventQueue {
 public:
  double now() const { return now_; }
  TimerId schedule_at(double time, Task task);
  void cancel(TimerId id);
  /// Runs one event; false when the queue is empty.
  bool step();
  /// Runs events until the queue drains, `stop()` turns true, or virtual time
  /// would pass `until`. Returns true if stopped by `stop()`.
  bool run(double until, const std::function<bool()>& stop);
  std::size_t size() const { return heap_.size(); }
  std::uint64_t executed() const { return executed_; }

 private:
  struct Event {
    double time;
    std::uint64_t seq;
    Task task;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.time > b.time || (a.time == b.time && a.seq > b.seq);
    }
  };
  double now_ = 0.0;
  std::uint64_t next_seq_ = 1;
  std::uint64_t executed_ = 0;
  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  std::unordered_set<TimerId> cancelled_;
};

/// Per-node executor on the shared queue. kill() drops every pending event
/// of the node; revive() starts a fresh incarnation.
class NodeExecutor final : public Executor {
 public:
  explicit NodeExecutor(EventQueue& queue) : queue_(queue), alive_(std::make_shared<bool>(true)) {}
  double now() const override { return queue_.now(); }
  TimerId call_after(double delay_s, Task task) override;
  void cancel(TimerId id) override { queue_.cancel(id); }
  void kill() { *alive_ = false; }
  void revive() { alive_ = std::make_shared<bool>(true); }
  bool alive() const { return *alive_; }
  /// Token of the current incarnation; false once it is killed.
  std::shared_ptr<bool> lifetime() const { return alive_; }
  EventQueue& queue() { return queue_; }

 private:
  EventQueue& queue_;
  std::shared_ptr<bool> alive_;
};

/// In-process broker reachable from simulated nodes. Publishes, acks and
/// deliveries each take `latency()` virtual seconds; declarations are
/// immediate. While the broker is down, channels buffer outbound traffic.
class BrokerHost {
 public:
  BrokerHost(EventQueue& queue, std::uint64_t seed);
  broker::Broker& broker() { return *broker_; }
  EventQueue& queue() { return queue_; }

  void set_latency(double base_s, double jitter_s);
  double latency();

  bool up() const { return up_; }
  /// Crash: every connection drops. With the journal enabled the durable
  /// state is rebuilt from it on restart().
  void crash();
  void restart();
  void enable_journal();

  class Channel;
  std::unique_ptr<Channel> open(NodeExecutor& node);

 private:
  friend class Channel;
  EventQueue& queue_;
  std::unique_ptr<broker::Broker> broker_;
  std::unique_ptr<std::stringstream> journal_;
  bool up_ = true;
  double base_latency_ = 0.0;
  double jitter_ = 0.0;
  Rng rng_;
  std::vector<Channel*> channels_;
};

class BrokerHost::Channel final : public BrokerChannel {
 public:
  Channel(BrokerHost& host, NodeExecutor& node);
  ~Channel() override;

  void declare_exchange(const std::string& name, broker::ExchangeKind kind) override;
  void declare_queue(const std::string& name) override;
  std::string temporary_queue() override;
  void delete_queue(const std::string& name) override;
  void bind(const std::string& queue, const std::string& exchange,
            const std::string& pattern) override;
  void publish(const std::string& exchange, const std::string& routing_key,
               Envelope envelope) override;
  void consume(const std::string& queue, Handler handler, bool exclusive) override;
  void cancel(const std::string& queue) override;
  void ack(const broker::Delivery& delivery) override;
  void nack(const broker::Delivery& delivery) override;
  void purge(const std::string& queue) override;

  /// Node crashed: the broker notices the connection drop immediately.
  void close();
  bool open() const { return open_; }

 private:
  friend class BrokerHost;
  void attach();
  void on_broker_crash();
  void on_broker_restart();
  void send(Task op);

  BrokerHost& host_;
  NodeExecutor& node_;
  broker::ConnectionId conn_ = 0;
  std::uint64_t epoch_ = 0;  // bumps on every reconnect; stale tags are dropped
  bool open_ = true;
  std::shared_ptr<bool> live_;
  std::vector<std::pair<std::string, std::pair<Handler, bool>>> consumers_;
  std::vector<Task> buffered_;
  double last_outbound_ = 0.0;  // keeps per-connection FIFO under jitter
  double last_inbound_ = 0.0;
};

}  // namespace sim

/// Wall-clock single-threaded event loop for live processes.
class RealtimeLoop final : public Executor {
 public:
  RealtimeLoop();
  ~RealtimeLoop() override;
  double now() const override;
  TimerId call_after(double delay_s, Task task) override;
  void cancel(TimerId id) override;

  /// Runs on the calling thread until stop().
  void run();
  void stop();

 private:
  struct Timer {
    double at;
    TimerId id;
    Task task;
  };
  struct Later {
    bool operator()(const Timer& a, const Timer& b) const {
      return a.at > b.at || (a.at == b.at && a.id > b.id);
    }
  };
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::priority_queue<Timer, std::vector<Timer>, Later> timers_;
  std::unordered_set<TimerId> cancelled_;
  TimerId next_id_ = 1;
  bool stopped_ = false;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace offload
