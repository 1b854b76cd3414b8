// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/broker.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

#include "offload/errors.hpp"

namespace offload::broker {

std::string_view to_string(ExchangeKind kind) {
  switch (kind) {
    case ExchangeKind::topic: return "topic";
    case ExchangeKind::direct: return "direct";
    case ExchangeKind::fanout: return "fanout";
  }
  return "topic";
}

ExchangeKind exchange_kind_from_string(std::string_view text) {
  if (text == "topic") return ExchangeKind::topic;
  if (text == "direct") return ExchangeKind::direct;
  if (text == "fanout") return ExchangeKind::fanout;
  fail(ErrorCode::parse, "unknown exchange kind '" + std::string(text) + "'");
}

namespace {

bool match_tokens(const std::vector<std::string>& pat, std::size_t pi,
                  const std::vector<std::string>& key, std::size_t ki) {
  while (pi < pat.size()) {
    if (pat[pi] == "#") {
      if (pi + 1 == pat.size()) return true;
      for (std::size_t k = ki; k <= key.size(); ++k) {
        if (match_tokens(pat, pi + 1, key, k)) return true;
      }
      return false;
    }
    if (ki >= key.size()) return false;
    if (pat[pi] != "*" && pat[pi] != key[ki]) return false;
    ++pi;
    ++ki;
  }
  return ki == key.size();
}

}  // namespace

bool match(std::string_view pattern, std::string_view routing_key) {
  if (pattern == routing_key) return true;
  return match_tokens(split_tokens(pattern), 0, split_tokens(routing_key), 0);
}

Broker::Broker() = default;
Broker::~Broker() = default;

void Broker::attach_journal(std::ostream* out) {
  std::lock_guard lock(mu_);
  journal_ = out;
}

void Broker::journal(const json& record) {
  if (journal_ == nullptr) return;
  *journal_ << record.dump() << '\n';
  journal_->flush();
}

std::unique_ptr<Broker> Broker::recover(std::istream& in) {
  auto b = std::make_unique<Broker>();
  std::string line;
  std::map<std::uint64_t, Message> messages;
  // queue -> message id -> delivered before the crash
  std::map<std::string, std::map<std::uint64_t, bool>> membership;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json r = json::parse(line, nullptr, false);
    if (r.is_discarded() || !r.contains("op")) {
      fail(ErrorCode::parse, "broker journal: malformed record");
    }
    const std::string op = r["op"];
    if (op == "exchange") {
      const std::string name = r["name"];
      b->exchanges_[name] = Exchange{exchange_kind_from_string(r["kind"].get<std::string>())};
    } else if (op == "queue") {
      b->queues_.try_emplace(r["name"].get<std::string>());
    } else if (op == "delete") {
      const std::string name = r["name"];
      b->queues_.erase(name);
      membership.erase(name);
      std::erase_if(b->bindings_, [&](const Binding& x) { return x.queue == name; });
    } else if (op == "bind") {
      b->bindings_.insert(Binding{r["queue"], r["exchange"], r["pattern"]});
    } else if (op == "publish") {
      Message m;
      m.id = r["id"];
      m.exchange_seq = r["seq"];
      m.exchange = r["exchange"];
      m.routing_key = r["key"];
      m.envelope = std::make_shared<const Envelope>(envelope_from_json(r["envelope"]));
      auto& ex = b->exchanges_[m.exchange];
      ex.next_seq = std::max(ex.next_seq, m.exchange_seq + 1);
      b->next_message_ = std::max(b->next_message_, m.id + 1);
      for (const auto& q : r["queues"]) membership[q.get<std::string>()][m.id] = false;
      messages.emplace(m.id, std::move(m));
    } else if (op == "deliver") {
      auto& q = membership[r["queue"].get<std::string>()];
      if (auto it = q.find(r["id"]); it != q.end()) it->second = true;
    } else if (op == "ack") {
      membership[r["queue"].get<std::string>()].erase(r["id"].get<std::uint64_t>());
    } else if (op == "purge") {
      membership.erase(r["queue"].get<std::string>());
    }
  }
  for (auto& [qname, ids] : membership) {
    auto qit = b->queues_.find(qname);
    if (qit == b->queues_.end()) continue;  // temporary queues are not durable
    for (const auto& [id, delivered] : ids) {
      Message m = messages.at(id);
      m.redelivered = delivered;
      qit->second.pending.push_back(std::move(m));
    }
  }
  return b;
}

ConnectionId Broker::connect(DeliverySink sink) {
  std::lock_guard lock(mu_);
  const ConnectionId id = next_connection_++;
  connections_[id] = Connection{std::make_shared<DeliverySink>(std::move(sink))};
  return id;
}

void Broker::disconnect(ConnectionId conn) {
  Outbox out;
  {
    std::lock_guard lock(mu_);
    if (connections_.erase(conn) == 0) return;
    std::vector<std::string> doomed;
    for (auto& [name, q] : queues_) {
      if (q.owner == conn) {
        doomed.push_back(name);
        continue;
      }
      std::erase(q.consumers, conn);
      std::vector<std::uint64_t> tags;
      for (const auto& [tag, u] : q.unacked) {
        if (u.consumer == conn) tags.push_back(tag);
      }
      // Highest tag first so the oldest delivery ends up at the head.
      for (auto it = tags.rbegin(); it != tags.rend(); ++it) requeue(name, q, *it);
    }
    for (const auto& name : doomed) erase_queue(name);
    dispatch_all(out);
  }
  flush(out);
}

void Broker::declare_exchange(const std::string& name, ExchangeKind kind) {
  if (name.empty()) fail(ErrorCode::usage, "exchange name must be nonempty");
  std::lock_guard lock(mu_);
  auto it = exchanges_.find(name);
  if (it != exchanges_.end()) {
    if (it->second.kind != kind) {
      fail(ErrorCode::conflict, "exchange '" + name + "' already declared as " +
                                    std::string(to_string(it->second.kind)));
    }
    return;
  }
  exchanges_.emplace(name, Exchange{kind});
  journal({{"op", "exchange"}, {"name", name}, {"kind", to_string(kind)}});
}

void Broker::declare_queue(const std::string& name) {
  if (name.empty()) fail(ErrorCode::usage, "queue name must be nonempty");
  std::lock_guard lock(mu_);
  if (queues_.try_emplace(name).second) journal({{"op", "queue"}, {"name", name}});
}

std::string Broker::temporary_queue(ConnectionId owner) {
  std::lock_guard lock(mu_);
  if (!connections_.contains(owner)) fail(ErrorCode::not_found, "unknown connection");
  std::string name;
  do {
    name = "tmp-gen-" + std::to_string(next_temp_++);
  } while (queues_.contains(name));
  queues_[name].owner = owner;
  return name;
}

void Broker::delete_queue(const std::string& name) {
  std::lock_guard lock(mu_);
  queue_or_throw(name);
  erase_queue(name);
}

void Broker::erase_queue(const std::string& name) {
  const bool durable = !queues_.at(name).owner.has_value();
  queues_.erase(name);
  std::erase_if(bindings_, [&](const Binding& b) { return b.queue == name; });
  if (durable) journal({{"op", "delete"}, {"name", name}});
}

void Broker::bind(const std::string& queue, const std::string& exchange,
                  const std::string& pattern) {
  std::lock_guard lock(mu_);
  const Queue& q = queue_or_throw(queue);
  if (!exchanges_.contains(exchange)) fail(ErrorCode::not_found, "unknown exchange '" + exchange + "'");
  if (bindings_.insert(Binding{queue, exchange, pattern}).second && !q.owner) {
    journal({{"op", "bind"}, {"queue", queue}, {"exchange", exchange}, {"pattern", pattern}});
  }
}

std::uint64_t Broker::publish(const std::string& exchange, const std::string& routing_key,
                              Envelope envelope) {
  return publish(exchange, routing_key, std::make_shared<const Envelope>(std::move(envelope)));
}

std::uint64_t Broker::publish(const std::string& exchange, const std::string& routing_key,
                              std::shared_ptr<const Envelope> envelope) {
  Outbox out;
  std::uint64_t seq = 0;
  {
    std::lock_guard lock(mu_);
    auto ex = exchanges_.find(exchange);
    if (ex == exchanges_.end()) fail(ErrorCode::not_found, "unknown exchange '" + exchange + "'");
    seq = ex->second.next_seq++;
    Message m{next_message_++, seq, exchange, routing_key, false, std::move(envelope)};

    // Bindings are ordered by queue name; a queue bound twice gets one copy.
    std::vector<std::string> targets;
    for (const auto& b : bindings_) {
      if (b.exchange != exchange) continue;
      bool hit = false;
      switch (ex->second.kind) {
        case ExchangeKind::fanout: hit = true; break;
        case ExchangeKind::direct: hit = b.pattern == routing_key; break;
        case ExchangeKind::topic: hit = match(b.pattern, routing_key); break;
      }
      if (hit && (targets.empty() || targets.back() != b.queue)) targets.push_back(b.queue);
    }
    if (journal_ != nullptr && !targets.empty()) {
      journal({{"op", "publish"},
               {"id", m.id},
               {"seq", seq},
               {"exchange", exchange},
               {"key", routing_key},
               {"queues", targets},
               {"envelope", to_json(*m.envelope)}});
    }
    for (const auto& name : targets) {
      Queue& q = queues_.at(name);
      q.pending.push_back(m);
      dispatch(name, q, out);
    }
  }
  flush(out);
  return seq;
}

void Broker::consume(ConnectionId conn, const std::string& queue, bool exclusive) {
  Outbox out;
  {
    std::lock_guard lock(mu_);
    if (!connections_.contains(conn)) fail(ErrorCode::not_found, "unknown connection");
    Queue& q = queue_or_throw(queue);
    if (std::find(q.consumers.begin(), q.consumers.end(), conn) != q.consumers.end()) return;
    if (exclusive && !q.consumers.empty()) {
      fail(ErrorCode::conflict, "queue '" + queue + "' already has a consumer");
    }
    q.consumers.push_back(conn);
    dispatch(queue, q, out);
  }
  flush(out);
}

void Broker::cancel(ConnectionId conn, const std::string& queue) {
  Outbox out;
  {
    std::lock_guard lock(mu_);
    Queue& q = queue_or_throw(queue);
    std::erase(q.consumers, conn);
    std::vector<std::uint64_t> tags;
    for (const auto& [tag, u] : q.unacked) {
      if (u.consumer == conn) tags.push_back(tag);
    }
    for (auto it = tags.rbegin(); it != tags.rend(); ++it) requeue(queue, q, *it);
    dispatch(queue, q, out);
  }
  flush(out);
}

void Broker::ack(ConnectionId conn, const std::string& queue, std::uint64_t tag) {
  Outbox out;
  {
    std::lock_guard lock(mu_);
    Queue& q = queue_or_throw(queue);
    auto it = q.unacked.find(tag);
    if (it == q.unacked.end() || it->second.consumer != conn) {
      fail(ErrorCode::protocol, "ack of unknown delivery tag " + std::to_string(tag));
    }
    if (!q.owner) journal({{"op", "ack"}, {"queue", queue}, {"id", it->second.message.id}});
    q.unacked.erase(it);
    dispatch(queue, q, out);
  }
  flush(out);
}

void Broker::nack(ConnectionId conn, const std::string& queue, std::uint64_t tag) {
  Outbox out;
  {
    std::lock_guard lock(mu_);
    Queue& q = queue_or_throw(queue);
    auto it = q.unacked.find(tag);
    if (it == q.unacked.end() || it->second.consumer != conn) {
      fail(ErrorCode::protocol, "nack of unknown delivery tag " + std::to_string(tag));
    }
    requeue(queue, q, tag);
    dispatch(queue, q, out);
  }
  flush(out);
}

std::size_t Broker::purge(const std::string& queue) {
  std::lock_guard lock(mu_);
  Queue& q = queue_or_throw(queue);
  const std::size_t n = q.pending.size();
  q.pending.clear();
  if (!q.owner) journal({{"op", "purge"}, {"queue", queue}});
  return n;
}

void Broker::requeue(const std::string& /*name*/, Queue& q, std::uint64_t tag) {
  auto it = q.unacked.find(tag);
  Message m = std::move(it->second.message);
  q.unacked.erase(it);
  m.redelivered = true;
  q.pending.push_front(std::move(m));
}

void Broker::dispatch(const std::string& name, Queue& q, Outbox& out) {
  while (!q.pending.empty() && !q.consumers.empty()) {
    // Round-robin over consumers that have no delivery outstanding.
    std::optional<std::size_t> chosen;
    for (std::size_t i = 0; i < q.consumers.size(); ++i) {
      const std::size_t idx = (q.next_consumer + i) % q.consumers.size();
      const ConnectionId c = q.consumers[idx];
      const bool busy = std::any_of(q.unacked.begin(), q.unacked.end(),
                                    [c](const auto& kv) { return kv.second.consumer == c; });
      if (!busy) {
        chosen = idx;
        break;
      }
    }
    if (!chosen) return;
    const ConnectionId c = q.consumers[*chosen];
    q.next_consumer = (*chosen + 1) % q.consumers.size();
    Message m = std::move(q.pending.front());
    q.pending.pop_front();
    const std::uint64_t tag = next_tag_++;
    Delivery d{name, tag, m.exchange_seq, m.exchange, m.routing_key, m.redelivered, m.envelope};
    if (!q.owner) journal({{"op", "deliver"}, {"queue", name}, {"id", m.id}});
    q.unacked.emplace(tag, Unacked{std::move(m), c});
    out.emplace_back(connections_.at(c).sink, std::move(d));
  }
}

void Broker::dispatch_all(Outbox& out) {
  for (auto& [name, q] : queues_) dispatch(name, q, out);
}

void Broker::flush(Outbox& out) {
  for (auto& [sink, delivery] : out) (*sink)(delivery);
}

Broker::Queue& Broker::queue_or_throw(const std::string& name) {
  auto it = queues_.find(name);
  if (it == queues_.end()) fail(ErrorCode::not_found, "unknown queue '" + name + "'");
  return it->second;
}

const Broker::Queue& Broker::queue_or_throw(const std::string& name) const {
  auto it = queues_.find(name);
  if (it == queues_.end()) fail(ErrorCode::not_found, "unknown queue '" + name + "'");
  return it->second;
}

bool Broker::has_exchange(const std::string& name) const {
  std::lock_guard lock(mu_);
  return exchanges_.contains(name);
}

bool Broker::has_queue(const std::string& name) const {
  std::lock_guard lock(mu_);
  return queues_.contains(name);
}

std::vector<std::string> Broker::queue_names() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, q] : queues_) out.push_back(name);
  return out;
}

std::size_t Broker::pending_count(const std::string& queue) const {
  std::lock_guard lock(mu_);
  return queue_or_throw(queue).pending.size();
}

std::size_t Broker::unacked_count(const std::string& queue) const {
  std::lock_guard lock(mu_);
  return queue_or_throw(queue).unacked.size();
}

std::vector<Binding> Broker::bindings() const {
  std::lock_guard lock(mu_);
  return {bindings_.begin(), bindings_.end()};
}

std::vector<Delivery> Broker::pending(const std::string& queue) const {
  std::lock_guard lock(mu_);
  std::vector<Delivery> out;
  for (const auto& m : queue_or_throw(queue).pending) {
    out.push_back(Delivery{queue, 0, m.exchange_seq, m.exchange, m.routing_key, m.redelivered,
                           m.envelope});
  }
  return out;
}

std::uint64_t Broker::next_seq(const std::string& exchange) const {
  std::lock_guard lock(mu_);
  auto it = exchanges_.find(exchange);
  if (it == exchanges_.end()) fail(ErrorCode::not_found, "unknown exchange '" + exchange + "'");
  return it->second.next_seq;
}

}  // namespace offload::broker
