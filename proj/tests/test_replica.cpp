// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <memory>

#include "offload/replica.hpp"
#include "offload/scenarios.hpp"

using namespace offload;

namespace {

struct Replica {
  Replica(sim::EventQueue& q, sim::BrokerHost& host, std::uint64_t seed, ReplicaOptions o)
      : exec(q), channel(host.open(exec)), rng(seed),
        manager(exec, *channel, rng, std::move(o), ReplicaManager::Hooks{}) {}
  sim::NodeExecutor exec;
  std::unique_ptr<sim::BrokerHost::Channel> channel;
  Rng rng;
  ReplicaManager manager;
};

ReplicaOptions options(const std::string& name, std::vector<std::string> members) {
  ReplicaOptions o;
  o.name = name;
  o.initial_members = std::move(members);
  return o;
}

}  // namespace

TEST_CASE("concurrent change storms converge to one order") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto r = simlab::replication_storm(seed, 3, 40);
    INFO("seed " << seed);
    CHECK(r.completed == 40);
    CHECK(r.identical);
    CHECK(r.logs[0].size() >= 40);
  }
}

TEST_CASE("a late replica joins with a snapshot and follows later changes") {
  sim::EventQueue q;
  sim::BrokerHost host(q, 1);
  host.set_latency(0.001, 0.002);
  auto r1 = std::make_unique<Replica>(q, host, 11, options("r1", {"r1", "r2"}));
  auto r2 = std::make_unique<Replica>(q, host, 12, options("r2", {"r1", "r2"}));
  declare_topology(*r1->channel);
  r1->manager.start();
  r2->manager.start();
  int done = 0;
  for (int i = 0; i < 5; ++i) {
    r1->manager.request_change({{"op", "register_worker"}, {"worker_id", "w" + std::to_string(i)}},
                               [&](const ApplyResult&) { ++done; });
  }
  q.run(30.0, [&] { return done == 5; });
  REQUIRE(done == 5);

  auto r3 = std::make_unique<Replica>(q, host, 13, options("r3", {}));
  r3->manager.start();
  q.run(q.now() + 30.0, [&] { return r3->manager.synced(); });
  REQUIRE(r3->manager.synced());
  r3->manager.request_change({{"op", "register_worker"}, {"worker_id", "late"}},
                             [&](const ApplyResult&) { ++done; });
  q.run(q.now() + 30.0, [&] { return done == 6; });
  q.run(q.now() + 1.0, nullptr);
  CHECK(r3->manager.store().digest() == r1->manager.store().digest());
  CHECK(r2->manager.store().digest() == r1->manager.store().digest());
  CHECK(r3->manager.store().workers().size() == 6);
}

TEST_CASE("a backup promotes itself once the primary goes silent") {
  sim::EventQueue q;
  sim::BrokerHost host(q, 2);
  auto o1 = options("r1", {"r1", "r2"});
  o1.prefer_primary = true;
  auto r1 = std::make_unique<Replica>(q, host, 21, o1);
  auto r2 = std::make_unique<Replica>(q, host, 22, options("r2", {"r1", "r2"}));
  declare_topology(*r1->channel);
  r1->manager.start();
  r2->manager.start();
  q.run(5.0, nullptr);
  REQUIRE(r1->manager.is_primary());
  r1->exec.kill();
  r1->channel->close();
  q.run(q.now() + 10.0, [&] { return r2->manager.is_primary(); });
  CHECK(r2->manager.is_primary());
}

TEST_CASE("redelivered messages are bit-exact and flagged") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = simlab::redelivery_check(seed, 50);
    INFO("seed " << seed);
    CHECK(r.bit_exact);
    CHECK(r.flags_correct);
    CHECK(r.exactly_once_ack);
    CHECK(r.redeliveries > 0);
  }
}

TEST_CASE("fanout consumers agree on the exchange order") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = simlab::fanout_order(seed, 3, 3, 60);
    INFO("seed " << seed);
    CHECK(r.complete);
    CHECK(r.identical);
    CHECK(r.ordered);
  }
}
