// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/scenarios.hpp"

#include <map>
#include <memory>
#include <set>

#include "offload/codec.hpp"
#include "offload/replica.hpp"
#include "offload/runtime.hpp"

namespace offload::simlab {

namespace {

constexpr double kBaseLatency = 0.0005;
constexpr double kJitter = 0.005;

json random_mutation(Rng& rng, std::vector<std::string>& clients) {
  // Small name pools make the outcome depend on the order of application.
  const std::uint64_t pick = rng.below(5);
  const std::string user = "u" + std::to_string(rng.below(8));
  if (pick == 0 || clients.empty()) {
    const std::string id = make_guid(rng);
    clients.push_back(id);
    return {{"op", "register_client"}, {"username", user}, {"client_id", id}};
  }
  if (pick == 1) {
    return {{"op", "register_worker"}, {"worker_id", "w" + std::to_string(rng.below(4))}};
  }
  if (pick == 2) {
    return {{"op", "worker_connect"}, {"worker_id", "w" + std::to_string(rng.below(4))}};
  }
  const std::string owner = clients[rng.below(clients.size())];
  return {{"op", "create_job"},
          {"job_id", "j" + std::to_string(rng.below(40))},
          {"owner", owner},
          {"name", user}};
}

}  // namespace

StormReport replication_storm(std::uint64_t seed, int replicas, int changes) {
  sim::EventQueue queue;
  sim::BrokerHost host(queue, derive_seed(seed, 1));
  host.set_latency(kBaseLatency, kJitter);
  Rng storm(derive_seed(seed, 2));

  std::vector<std::string> names;
  for (int i = 0; i < replicas; ++i) names.push_back("r" + std::to_string(i + 1));
  struct Node {
    std::unique_ptr<sim::NodeExecutor> exec;
    std::unique_ptr<sim::BrokerHost::Channel> channel;
    std::unique_ptr<Rng> rng;
    std::unique_ptr<ReplicaManager> replica;
  };
  std::vector<Node> nodes;
  for (int i = 0; i < replicas; ++i) {
    Node n;
    n.exec = std::make_unique<sim::NodeExecutor>(queue);
    n.channel = host.open(*n.exec);
    n.rng = std::make_unique<Rng>(derive_seed(seed, 100 + static_cast<std::uint64_t>(i)));
    ReplicaOptions o;
    o.name = names[static_cast<std::size_t>(i)];
    o.initial_members = names;
    // Keep promotion out of the window so only the storm is ordered.
    o.promotion_timeout_s = 30.0;
    n.replica = std::make_unique<ReplicaManager>(*n.exec, *n.channel, *n.rng, o,
                                                 ReplicaManager::Hooks{});
    nodes.push_back(std::move(n));
  }
  declare_topology(*nodes.front().channel);
  for (auto& n : nodes) n.replica->start();

  StormReport report;
  report.requested = static_cast<std::size_t>(changes);
  std::vector<std::string> clients;
  for (int i = 0; i < changes; ++i) {
    Node& origin = nodes[storm.below(nodes.size())];
    json mutation = random_mutation(storm, clients);
    const double at = storm.uniform(0.0, 0.02);
    origin.exec->call_after(at, [&origin, &report, mutation] {
      origin.replica->request_change(mutation, [&report](const ApplyResult&) { ++report.completed; });
    });
  }
  queue.run(20.0, [&] { return report.completed == report.requested; });
  // Let the last changePublish reach every replica.
  queue.run(queue.now() + 1.0, nullptr);

  for (auto& n : nodes) {
    report.digests.push_back(n.replica->store().digest());
    report.logs.push_back(n.replica->applied_log());
  }
  report.identical = report.completed == report.requested;
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    report.identical = report.identical && report.digests[i] == report.digests[0] &&
                       report.logs[i] == report.logs[0];
  }
  return report;
}

FanoutReport fanout_order(std::uint64_t seed, int publishers, int consumers, int messages) {
  sim::EventQueue queue;
  sim::BrokerHost host(queue, derive_seed(seed, 1));
  host.set_latency(kBaseLatency, kJitter);
  Rng rng(derive_seed(seed, 2));
  const std::string fx = "fx";
  host.broker().declare_exchange(fx, broker::ExchangeKind::fanout);

  FanoutReport report;
  report.consumers = static_cast<std::size_t>(consumers);

  struct Consumer {
    std::string queue;
    std::unique_ptr<sim::NodeExecutor> exec;
    std::vector<std::unique_ptr<sim::BrokerHost::Channel>> channels;  // old ones stay closed
    std::vector<std::uint64_t> acked_seq;
    std::vector<std::string> acked_ids;
  };
  std::vector<std::unique_ptr<Consumer>> cons;
  std::function<void(Consumer&)> attach;
  attach = [&](Consumer& c) {
    c.channels.push_back(host.open(*c.exec));
    sim::BrokerHost::Channel* ch = c.channels.back().get();
    ch->consume(c.queue, [&, ch, cp = &c](const broker::Delivery& d) {
      if (d.redelivered) ++report.redeliveries;
      const std::uint64_t roll = rng.below(100);
      if (roll < 10) {
        ch->nack(d);
      } else if (roll < 13) {
        // Drop the connection with the delivery unacknowledged.
        ch->close();
        ++report.reconnects;
        cp->exec->call_after(rng.uniform(0.0, 0.01), [&, cp] { attach(*cp); });
      } else {
        cp->acked_seq.push_back(d.exchange_seq);
        cp->acked_ids.push_back(d.envelope->msg_id);
        ch->ack(d);
      }
    }, false);
  };
  for (int i = 0; i < consumers; ++i) {
    auto c = std::make_unique<Consumer>();
    c->queue = "fan" + std::to_string(i);
    c->exec = std::make_unique<sim::NodeExecutor>(queue);
    host.broker().declare_queue(c->queue);
    host.broker().bind(c->queue, fx, "");
    attach(*c);
    cons.push_back(std::move(c));
  }

  std::vector<std::unique_ptr<sim::NodeExecutor>> pub_exec;
  std::vector<std::unique_ptr<sim::BrokerHost::Channel>> pub_ch;
  for (int p = 0; p < publishers; ++p) {
    pub_exec.push_back(std::make_unique<sim::NodeExecutor>(queue));
    pub_ch.push_back(host.open(*pub_exec.back()));
  }
  for (int m = 0; m < messages; ++m) {
    const std::size_t p = rng.below(pub_ch.size());
    Envelope e{make_guid(rng), std::string(msg::heartbeat), "p" + std::to_string(p), std::nullopt,
               {{"n", m}}};
    pub_exec[p]->call_after(rng.uniform(0.0, 0.05), [ch = pub_ch[p].get(), e] {
      ch->publish("fx", "", e);
    });
  }
  report.published = static_cast<std::size_t>(messages);
  queue.run(60.0, [&] {
    for (auto& c : cons) {
      if (c->acked_ids.size() < report.published) return false;
    }
    return true;
  });

  report.complete = true;
  report.identical = true;
  report.ordered = true;
  for (auto& c : cons) {
    report.complete = report.complete && c->acked_ids.size() == report.published;
    report.identical = report.identical && c->acked_ids == cons.front()->acked_ids;
    for (std::size_t i = 1; i < c->acked_seq.size(); ++i) {
      if (c->acked_seq[i] != c->acked_seq[i - 1] + 1) report.ordered = false;
    }
  }
  return report;
}

RedeliveryReport redelivery_check(std::uint64_t seed, int messages) {
  Rng rng(seed);
  broker::Broker b;
  b.declare_exchange("tx", broker::ExchangeKind::topic);
  b.declare_queue("q");
  b.bind("q", "tx", "a.#");

  RedeliveryReport report;
  std::map<std::string, std::string> published;  // msg_id -> canonical bytes
  for (int i = 0; i < messages; ++i) {
    std::string blob;
    const std::uint64_t len = rng.below(64);
    for (std::uint64_t k = 0; k < len; ++k) blob.push_back(static_cast<char>(rng.below(256)));
    Envelope e{make_guid(rng), std::string(msg::job_result), "w" + std::to_string(rng.below(9)),
               rng.below(2) == 0 ? std::optional<std::string>{} : std::optional<std::string>{"tmp-gen-1"},
               {{"bytes", base64_encode(blob)}, {"text", "caf\xC3\xA9 \xE2\x9C\x93"}, {"i", i},
                {"x", rng.uniform()}}};
    published[e.msg_id] = encode(e);
    b.publish("tx", "a.b" + std::to_string(i % 3), e);
  }
  report.published = published.size();

  std::vector<broker::Delivery> inbox;
  auto connect = [&] {
    const auto c = b.connect([&](const broker::Delivery& d) { inbox.push_back(d); });
    b.consume(c, "q");
    return c;
  };
  broker::ConnectionId conn = connect();
  std::map<std::string, int> acks;
  std::set<std::string> seen;
  report.bit_exact = true;
  report.flags_correct = true;
  std::size_t guard = 0;
  while (acks.size() < published.size() && guard++ < 100000) {
    if (inbox.empty()) break;
    broker::Delivery d = inbox.front();
    inbox.erase(inbox.begin());
    ++report.deliveries;
    const std::string& id = d.envelope->msg_id;
    if (encode(*d.envelope) != published[id]) report.bit_exact = false;
    const bool repeat = !seen.insert(id).second;
    if (repeat) ++report.redeliveries;
    if (d.redelivered != repeat) report.flags_correct = false;
    const std::uint64_t roll = rng.below(10);
    if (roll < 2) {
      b.nack(conn, "q", d.tag);
    } else if (roll < 3) {
      inbox.clear();
      b.disconnect(conn);
      conn = connect();
    } else {
      ++acks[id];
      b.ack(conn, "q", d.tag);
    }
  }
  report.exactly_once_ack = acks.size() == published.size();
  for (const auto& [id, n] : acks) report.exactly_once_ack = report.exactly_once_ack && n == 1;
  return report;
}

}  // namespace offload::simlab
