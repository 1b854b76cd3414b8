// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/runtime.hpp"

#include <algorithm>

#include "offload/errors.hpp"

namespace offload {

void declare_topology(BrokerChannel& channel) {
  using broker::ExchangeKind;
  channel.declare_exchange(std::string(exchange::orchestrator), ExchangeKind::topic);
  channel.declare_exchange(std::string(exchange::client), ExchangeKind::topic);
  channel.declare_exchange(std::string(exchange::worker), ExchangeKind::topic);
  channel.declare_exchange(std::string(exchange::replication), ExchangeKind::fanout);
  channel.declare_exchange(std::string(exchange::replica), ExchangeKind::direct);
}

namespace sim {

TimerId EventQueue::schedule_at(double time, Task task) {
  const TimerId id = next_seq_++;
  heap_.push(Event{std::max(time, now_), id, std::move(task)});
  return id;
}

void EventQueue::cancel(TimerId id) { cancelled_.insert(id); }

bool EventQueue::step() {
  while (!heap_.empty()) {
    Event ev = std::move(const_cast<Event&>(heap_.top()));
    heap_.pop();
    if (!cancelled_.empty() && cancelled_.erase(ev.seq) > 0) continue;
    now_ = ev.time;
    ++executed_;
    ev.task();
    return true;
  }
  return false;
}

bool EventQueue::run(double until, const std::function<bool()>& stop) {
  while (!heap_.empty()) {
    if (stop && stop()) return true;
    if (heap_.top().time > until) {
      now_ = until;
      return false;
    }
    step();
  }
  return stop && stop();
}

TimerId NodeExecutor::call_after(double delay_s, Task task) {
  return queue_.schedule_at(queue_.now() + std::max(0.0, delay_s),
                            [alive = alive_, task = std::move(task)] {
                              if (*alive) task();
                            });
}

BrokerHost::BrokerHost(EventQueue& queue, std::uint64_t seed)
    : queue_(queue), broker_(std::make_unique<broker::Broker>()), rng_(seed) {}

void BrokerHost::set_latency(double base_s, double jitter_s) {
  base_latency_ = base_s;
  jitter_ = jitter_s;
}

double BrokerHost::latency() {
  if (jitter_ <= 0.0) return base_latency_;
  return base_latency_ + jitter_ * rng_.uniform();
}

void BrokerHost::enable_journal() {
  journal_ = std::make_unique<std::stringstream>();
  broker_->attach_journal(journal_.get());
}

void BrokerHost::crash() {
  if (!up_) return;
  up_ = false;
  for (Channel* c : channels_) c->on_broker_crash();
  if (journal_) {
    broker_.reset();
  } else {
    // Durable in memory: queues survive, connections do not.
    for (Channel* c : channels_) {
      if (c->conn_ != 0) broker_->disconnect(c->conn_);
      c->conn_ = 0;
    }
  }
}

void BrokerHost::restart() {
  if (up_) return;
  if (journal_) {
    std::stringstream replay(journal_->str());
    broker_ = broker::Broker::recover(replay);
    journal_ = std::make_unique<std::stringstream>(replay.str(), std::ios::in | std::ios::out |
                                                                     std::ios::app);
    broker_->attach_journal(journal_.get());
  }
  up_ = true;
  for (Channel* c : channels_) c->on_broker_restart();
}

std::unique_ptr<BrokerHost::Channel> BrokerHost::open(NodeExecutor& node) {
  return std::make_unique<Channel>(*this, node);
}

BrokerHost::Channel::Channel(BrokerHost& host, NodeExecutor& node)
    : host_(host), node_(node), live_(std::make_shared<bool>(true)) {
  host_.channels_.push_back(this);
  if (host_.up_) attach();
}

BrokerHost::Channel::~Channel() {
  close();
  *live_ = false;
  std::erase(host_.channels_, this);
}

void BrokerHost::Channel::attach() {
  ++epoch_;
  conn_ = host_.broker_->connect(
      [this, live = live_, epoch = epoch_](const broker::Delivery& d) {
        if (!*live) return;
        const double arrive = std::max(host_.queue_.now() + host_.latency(), last_inbound_);
        last_inbound_ = arrive;
        node_.call_after(arrive - host_.queue_.now(), [this, live, epoch, d] {
          if (!*live || !open_ || epoch != epoch_) return;
          for (auto& c : consumers_) {
            if (c.first == d.queue) {
              auto handler = c.second.first;  // the handler may cancel itself
              handler(d);
              return;
            }
          }
        });
      });
}

void BrokerHost::Channel::close() {
  if (!open_) return;
  open_ = false;
  consumers_.clear();
  buffered_.clear();
  if (host_.up_ && conn_ != 0) host_.broker_->disconnect(conn_);
  conn_ = 0;
}

void BrokerHost::Channel::on_broker_crash() {
  ++epoch_;
}

void BrokerHost::Channel::on_broker_restart() {
  if (!open_) return;
  attach();
  for (auto& c : consumers_) {
    try {
      host_.broker_->consume(conn_, c.first, c.second.second);
    } catch (const Error&) {
      // The queue was temporary and died with the old broker.
    }
  }
  auto pending = std::move(buffered_);
  buffered_.clear();
  for (auto& op : pending) send(std::move(op));
}

void BrokerHost::Channel::send(Task op) {
  if (!open_) return;
  if (!host_.up_) {
    buffered_.push_back(std::move(op));
    return;
  }
  const double now = host_.queue_.now();
  const double arrive = std::max(now + host_.latency(), last_outbound_);
  last_outbound_ = arrive;
  host_.queue_.schedule_at(arrive, [host = &host_, op = std::move(op)] {
    if (!host->up_) return;  // lost on the wire
    try {
      op();
    } catch (const Error&) {
      // Asynchronous failures (unknown exchange, stale tag) are dropped like
      // a broker would drop them after closing the channel.
    }
  });
}

namespace {
void require_up(bool up) {
  if (!up) fail(ErrorCode::io, "broker unreachable");
}
}  // namespace

void BrokerHost::Channel::declare_exchange(const std::string& name, broker::ExchangeKind kind) {
  require_up(host_.up_);
  host_.broker_->declare_exchange(name, kind);
}

void BrokerHost::Channel::declare_queue(const std::string& name) {
  require_up(host_.up_);
  host_.broker_->declare_queue(name);
}

std::string BrokerHost::Channel::temporary_queue() {
  require_up(host_.up_);
  return host_.broker_->temporary_queue(conn_);
}

void BrokerHost::Channel::delete_queue(const std::string& name) {
  require_up(host_.up_);
  std::erase_if(consumers_, [&](const auto& c) { return c.first == name; });
  host_.broker_->delete_queue(name);
}

void BrokerHost::Channel::bind(const std::string& queue, const std::string& exchange,
                               const std::string& pattern) {
  require_up(host_.up_);
  host_.broker_->bind(queue, exchange, pattern);
}

void BrokerHost::Channel::publish(const std::string& exchange, const std::string& routing_key,
                                  Envelope envelope) {
  if (!registered_message_types().contains(envelope.msg_type)) {
    fail(ErrorCode::schema, "unregistered msg_type '" + envelope.msg_type + "'");
  }
  auto shared = std::make_shared<const Envelope>(std::move(envelope));
  send([host = &host_, exchange, routing_key, shared] {
    host->broker_->publish(exchange, routing_key, shared);
  });
}

void BrokerHost::Channel::consume(const std::string& queue, Handler handler, bool exclusive) {
  require_up(host_.up_);
  host_.broker_->consume(conn_, queue, exclusive);
  consumers_.emplace_back(queue, std::make_pair(std::move(handler), exclusive));
}

void BrokerHost::Channel::cancel(const std::string& queue) {
  std::erase_if(consumers_, [&](const auto& c) { return c.first == queue; });
  if (host_.up_ && conn_ != 0) host_.broker_->cancel(conn_, queue);
}

void BrokerHost::Channel::ack(const broker::Delivery& delivery) {
  if (!open_ || !host_.up_) return;  // the broker requeues on reconnect anyway
  send([host = &host_, conn = conn_, queue = delivery.queue, tag = delivery.tag] {
    host->broker_->ack(conn, queue, tag);
  });
}

void BrokerHost::Channel::nack(const broker::Delivery& delivery) {
  if (!open_ || !host_.up_) return;
  send([host = &host_, conn = conn_, queue = delivery.queue, tag = delivery.tag] {
    host->broker_->nack(conn, queue, tag);
  });
}

void BrokerHost::Channel::purge(const std::string& queue) {
  require_up(host_.up_);
  host_.broker_->purge(queue);
}

}  // namespace sim

RealtimeLoop::RealtimeLoop() : start_(std::chrono::steady_clock::now()) {}

RealtimeLoop::~RealtimeLoop() { stop(); }

double RealtimeLoop::now() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
}

TimerId RealtimeLoop::call_after(double delay_s, Task task) {
  std::lock_guard lock(mu_);
  const TimerId id = next_id_++;
  timers_.push(Timer{now() + std::max(0.0, delay_s), id, std::move(task)});
  cv_.notify_one();
  return id;
}

void RealtimeLoop::cancel(TimerId id) {
  std::lock_guard lock(mu_);
  cancelled_.insert(id);
}

void RealtimeLoop::run() {
  std::unique_lock lock(mu_);
  while (!stopped_) {
    if (timers_.empty()) {
      cv_.wait(lock);
      continue;
    }
    const double wait = timers_.top().at - now();
    if (wait > 0) {
      cv_.wait_for(lock, std::chrono::duration<double>(wait));
      continue;
    }
    Timer t = std::move(const_cast<Timer&>(timers_.top()));
    timers_.pop();
    if (cancelled_.erase(t.id) > 0) continue;
    lock.unlock();
    t.task();
    lock.lock();
  }
}

void RealtimeLoop::stop() {
  std::lock_guard lock(mu_);
  stopped_ = true;
  cv_.notify_all();
}

}  // namespace offload
