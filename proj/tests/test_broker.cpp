// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <map>
#include <sstream>
#include <thread>
#include <vector>

#include "offload/broker.hpp"
#include "offload/codec.hpp"
#include "offload/errors.hpp"
#include "offload/rng.hpp"

using namespace offload;
using namespace offload::broker;

namespace {

Envelope env(const std::string& id_seed, json body = json::object()) {
  Rng rng(std::hash<std::string>{}(id_seed));
  return Envelope{make_guid(rng), "heartbeat", id_seed, std::nullopt, std::move(body)};
}

struct Recorder {
  std::vector<Delivery> got;
  DeliverySink sink() {
    return [this](const Delivery& d) { got.push_back(d); };
  }
};

}  // namespace

TEST_CASE("topic matching", "[broker]") {
  CHECK(match("a.b", "a.b"));
  CHECK_FALSE(match("a.b", "a.c"));
  CHECK(match("a.*", "a.b"));
  CHECK_FALSE(match("a.*", "a"));
  CHECK_FALSE(match("a.*", "a.b.c"));
  CHECK(match("a.#", "a"));
  CHECK(match("a.#", "a.b.c"));
  CHECK(match("#", "anything.at.all"));
  CHECK(match("#.c", "a.b.c"));
  CHECK(match("*.b.#", "x.b"));
  CHECK_FALSE(match("*.b.#", "x.c"));
  CHECK(match("o1.#", "o1.workerConnect"));
  CHECK_FALSE(match("o1.#", "o2.workerConnect"));
}

TEST_CASE("declarations are idempotent", "[broker]") {
  Broker b;
  b.declare_exchange("x", ExchangeKind::topic);
  b.declare_exchange("x", ExchangeKind::topic);
  CHECK_THROWS_AS(b.declare_exchange("x", ExchangeKind::fanout), Error);
  b.declare_queue("q");
  b.declare_queue("q");
  b.bind("q", "x", "a.#");
  b.bind("q", "x", "a.#");
  CHECK(b.bindings().size() == 1);
  CHECK_THROWS_AS(b.bind("q", "missing", "a"), Error);
  CHECK_THROWS_AS(b.bind("missing", "x", "a"), Error);
  CHECK_THROWS_AS(b.publish("missing", "a", env("m")), Error);
}

TEST_CASE("routing by exchange kind", "[broker]") {
  Broker b;
  b.declare_exchange("t", ExchangeKind::topic);
  b.declare_exchange("d", ExchangeKind::direct);
  b.declare_exchange("f", ExchangeKind::fanout);
  for (const char* q : {"q1", "q2", "q3"}) b.declare_queue(q);
  b.bind("q1", "t", "a.*");
  b.bind("q2", "t", "a.#");
  b.bind("q1", "d", "k");
  b.bind("q2", "d", "a.*");
  b.bind("q1", "f", "ignored");
  b.bind("q3", "f", "");
  b.publish("t", "a.b", env("1"));
  b.publish("t", "a", env("2"));
  b.publish("d", "a.*", env("3"));
  b.publish("d", "a.b", env("4"));
  b.publish("f", "whatever", env("5"));
  CHECK(b.pending_count("q1") == 2);
  CHECK(b.pending_count("q2") == 3);
  CHECK(b.pending_count("q3") == 1);
  CHECK(b.next_seq("t") == 3);
  CHECK(b.next_seq("f") == 2);
}

TEST_CASE("ack nack and redelivery", "[broker]") {
  Broker b;
  b.declare_exchange("x", ExchangeKind::direct);
  b.declare_queue("q");
  b.bind("q", "x", "k");
  const Envelope e1 = env("one", {{"payload", "\x01\x02 bytes"}});
  const Envelope e2 = env("two");
  b.publish("x", "k", e1);
  b.publish("x", "k", e2);

  Recorder r;
  const auto c = b.connect(r.sink());
  b.consume(c, "q");
  REQUIRE(r.got.size() == 1);  // prefetch 1
  CHECK(*r.got[0].envelope == e1);
  CHECK_FALSE(r.got[0].redelivered);
  CHECK(r.got[0].exchange_seq == 1);

  b.nack(c, "q", r.got[0].tag);
  REQUIRE(r.got.size() == 2);
  CHECK(r.got[1].redelivered);
  CHECK(encode(*r.got[1].envelope) == encode(e1));
  CHECK(r.got[1].exchange_seq == 1);
  CHECK(r.got[1].tag != r.got[0].tag);

  CHECK_THROWS_AS(b.ack(c, "q", r.got[0].tag), Error);
  b.ack(c, "q", r.got[1].tag);
  REQUIRE(r.got.size() == 3);
  CHECK(*r.got[2].envelope == e2);

  // Disconnect without ack: message returns to the head as redelivered.
  b.disconnect(c);
  CHECK(b.pending_count("q") == 1);
  CHECK(b.unacked_count("q") == 0);
  Recorder r2;
  const auto c2 = b.connect(r2.sink());
  b.consume(c2, "q");
  REQUIRE(r2.got.size() == 1);
  CHECK(r2.got[0].redelivered);
  CHECK(encode(*r2.got[0].envelope) == encode(e2));
  b.ack(c2, "q", r2.got[0].tag);
  CHECK(b.pending_count("q") == 0);
  CHECK(b.unacked_count("q") == 0);
}

TEST_CASE("competing consumers round robin", "[broker]") {
  Broker b;
  b.declare_exchange("x", ExchangeKind::direct);
  b.declare_queue("q");
  b.bind("q", "x", "k");
  Recorder r1, r2;
  const auto c1 = b.connect(r1.sink());
  const auto c2 = b.connect(r2.sink());
  b.consume(c1, "q");
  b.consume(c2, "q");
  for (int i = 0; i < 4; ++i) b.publish("x", "k", env("m" + std::to_string(i)));
  CHECK(r1.got.size() == 1);
  CHECK(r2.got.size() == 1);
  b.ack(c1, "q", r1.got[0].tag);
  b.ack(c2, "q", r2.got[0].tag);
  CHECK(r1.got.size() == 2);
  CHECK(r2.got.size() == 2);
  CHECK_THROWS_AS(b.consume(b.connect(nullptr), "q", true), Error);
}

TEST_CASE("temporary queues", "[broker]") {
  Broker b;
  b.declare_exchange("x", ExchangeKind::direct);
  Recorder r;
  const auto c = b.connect(r.sink());
  const std::string q = b.temporary_queue(c);
  CHECK(b.has_queue(q));
  b.bind(q, "x", q);
  b.consume(c, q);
  b.publish("x", q, env("reply"));
  CHECK(r.got.size() == 1);
  b.disconnect(c);
  CHECK_FALSE(b.has_queue(q));
  CHECK(b.bindings().empty());
  b.publish("x", q, env("late"));  // unroutable, dropped
}

TEST_CASE("purge and delete", "[broker]") {
  Broker b;
  b.declare_exchange("x", ExchangeKind::fanout);
  b.declare_queue("q");
  b.bind("q", "x", "");
  for (int i = 0; i < 3; ++i) b.publish("x", "", env("p" + std::to_string(i)));
  CHECK(b.purge("q") == 3);
  CHECK(b.pending_count("q") == 0);
  b.delete_queue("q");
  CHECK_FALSE(b.has_queue("q"));
  CHECK(b.bindings().empty());
  CHECK_THROWS_AS(b.purge("q"), Error);
}

// Random interleavings of publishes from several producers, acks, nacks and
// consumer reconnects. Every queue must observe the fanout messages in one
// global order, and after each queue drains the acknowledged sequence must be
// exactly the published order.
TEST_CASE("fanout total order under random schedules", "[broker][property]") {
  for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
    Rng rng(seed);
    Broker b;
    b.declare_exchange("f", ExchangeKind::fanout);
    const int nq = 2 + static_cast<int>(rng.below(3));
    struct Consumer {
      std::string queue;
      Recorder rec;
      ConnectionId conn = 0;
      std::size_t seen = 0;
      std::vector<std::uint64_t> acked;
    };
    std::vector<std::unique_ptr<Consumer>> cs;
    for (int i = 0; i < nq; ++i) {
      auto c = std::make_unique<Consumer>();
      c->queue = "q" + std::to_string(i);
      b.declare_queue(c->queue);
      b.bind(c->queue, "f", "");
      c->conn = b.connect(c->rec.sink());
      b.consume(c->conn, c->queue);
      cs.push_back(std::move(c));
    }
    std::vector<std::uint64_t> published;
    const int total = 20 + static_cast<int>(rng.below(30));
    int sent = 0;
    while (true) {
      bool idle = true;
      for (auto& c : cs) {
        if (c->rec.got.size() > c->seen) idle = false;
      }
      if (sent == total && idle) break;
      const auto op = rng.below(10);
      if (op < 4 && sent < total) {
        const auto producer = rng.below(3);
        published.push_back(b.publish("f", "", env("s" + std::to_string(seed) + "p" +
                                                   std::to_string(producer) + "m" +
                                                   std::to_string(sent))));
        ++sent;
        continue;
      }
      auto& c = *cs[rng.below(cs.size())];
      if (c.rec.got.size() == c.seen) continue;
      const Delivery& d = c.rec.got.back();
      ++c.seen;
      if (op == 4) {
        b.nack(c.conn, c.queue, d.tag);
      } else if (op == 5) {
        b.disconnect(c.conn);
        c.rec.got.clear();
        c.seen = 0;
        c.conn = b.connect(c.rec.sink());
        b.consume(c.conn, c.queue);
      } else {
        c.acked.push_back(d.exchange_seq);
        b.ack(c.conn, c.queue, d.tag);
      }
    }
    for (std::size_t i = 1; i < published.size(); ++i) REQUIRE(published[i] == published[i - 1] + 1);
    for (auto& c : cs) {
      INFO("seed " << seed << " queue " << c->queue);
      REQUIRE(c->acked == published);
      REQUIRE(b.pending_count(c->queue) == 0);
      REQUIRE(b.unacked_count(c->queue) == 0);
    }
  }
}

TEST_CASE("concurrent publishers see one order", "[broker][threads]") {
  Broker b;
  b.declare_exchange("f", ExchangeKind::fanout);
  std::vector<std::vector<std::uint64_t>> seen(3);
  std::vector<std::mutex> locks(3);
  std::vector<ConnectionId> conns;
  for (int i = 0; i < 3; ++i) {
    const std::string q = "q" + std::to_string(i);
    b.declare_queue(q);
    b.bind(q, "f", "");
  }
  for (int i = 0; i < 3; ++i) {
    const std::string q = "q" + std::to_string(i);
    conns.push_back(b.connect([&, i, q](const Delivery& d) {
      {
        std::lock_guard lock(locks[i]);
        seen[i].push_back(d.exchange_seq);
      }
      b.ack(conns[i], q, d.tag);
    }));
  }
  for (int i = 0; i < 3; ++i) b.consume(conns[i], "q" + std::to_string(i));
  std::vector<std::thread> producers;
  for (int p = 0; p < 4; ++p) {
    producers.emplace_back([&, p] {
      for (int m = 0; m < 250; ++m) b.publish("f", "", env("p" + std::to_string(p) + "m" + std::to_string(m)));
    });
  }
  for (auto& t : producers) t.join();
  for (int i = 0; i < 3; ++i) {
    std::lock_guard lock(locks[i]);
    REQUIRE(seen[i].size() == 1000);
    CHECK(seen[i] == seen[0]);
    for (std::size_t k = 0; k < seen[i].size(); ++k) CHECK(seen[i][k] == k + 1);
  }
}

TEST_CASE("journal recovery", "[broker]") {
  std::stringstream journal;
  std::vector<Delivery> got;
  {
    Broker b;
    b.attach_journal(&journal);
    b.declare_exchange("x", ExchangeKind::topic);
    b.declare_queue("q");
    b.declare_queue("gone");
    b.bind("q", "x", "a.#");
    b.bind("gone", "x", "#");
    b.delete_queue("gone");
    b.publish("x", "a.1", env("1"));
    b.publish("x", "a.2", env("2"));
    b.publish("x", "a.3", env("3"));
    const auto c = b.connect([&](const Delivery& d) { got.push_back(d); });
    b.consume(c, "q");
    b.ack(c, "q", got.back().tag);  // 1 acked, 2 in flight
  }
  journal.seekg(0);
  auto r = Broker::recover(journal);
  CHECK(r->has_exchange("x"));
  CHECK(r->has_queue("q"));
  CHECK_FALSE(r->has_queue("gone"));
  CHECK(r->bindings() == std::vector<Binding>{{"q", "x", "a.#"}});
  CHECK(r->next_seq("x") == 4);
  const auto pending = r->pending("q");
  REQUIRE(pending.size() == 2);
  CHECK(pending[0].exchange_seq == 2);
  CHECK(pending[0].redelivered);
  CHECK(*pending[0].envelope == *got[1].envelope);
  CHECK(pending[1].exchange_seq == 3);
  CHECK_FALSE(pending[1].redelivered);
}
