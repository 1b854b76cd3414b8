// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// A small cluster on the virtual clock: one orchestrator, one worker and
// two clients driven through their public APIs.

#include <catch_amalgamated.hpp>

#include <memory>

#include "offload/client.hpp"
#include "offload/orchestrator.hpp"
#include "offload/program.hpp"
#include "offload/worker.hpp"

using namespace offload;

namespace {

struct Node {
  explicit Node(sim::EventQueue& q, sim::BrokerHost& host, sim::BlobNetwork& net, std::uint64_t seed)
      : exec(q), channel(host.open(exec)), blobs(net, exec), rng(seed) {}
  sim::NodeExecutor exec;
  std::unique_ptr<sim::BrokerHost::Channel> channel;
  sim::SimBlobClient blobs;
  Rng rng;
};

struct Cluster {
  sim::EventQueue queue;
  sim::BrokerHost host{queue, 1};
  sim::BlobNetwork net{queue};
  BlobStore orch_blobs;
  Node o{queue, host, net, 2};
  Node w{queue, host, net, 3};
  Node a{queue, host, net, 4};
  Node b{queue, host, net, 5};
  std::unique_ptr<Orchestrator> orch;
  std::unique_ptr<Worker> worker;
  std::unique_ptr<ClientSession> alice, bob;

  explicit Cluster(double checkpoint_interval = 0.0) {
    host.set_latency(0.001, 0.0);
    net.set_latency(0.001);
    net.attach("sim://o1", &orch_blobs);
    net.set_alive("sim://o1", true);
    OrchestratorOptions oo;
    oo.name = "o1";
    oo.blob_endpoint = "sim://o1";
    oo.bootstrap = true;
    oo.prefer_primary = true;
    orch = std::make_unique<Orchestrator>(o.exec, *o.channel, o.blobs, orch_blobs, o.rng, oo);
    orch->start();
    WorkerOptions wo;
    wo.name = "w1";
    wo.checkpoint_interval_s = checkpoint_interval;
    wo.checkpoint_cost_s = 0.5;
    worker = std::make_unique<Worker>(w.exec, *w.channel, w.blobs, w.rng, wo);
    worker->start();
    alice = std::make_unique<ClientSession>(a.exec, *a.channel, a.blobs, a.rng, ClientOptions{"ca", "alice"});
    bob = std::make_unique<ClientSession>(b.exec, *b.channel, b.blobs, b.rng, ClientOptions{"cb", "bob"});
    int connected = 0;
    alice->connect([&](std::optional<Error> e) { connected += !e; });
    bob->connect([&](std::optional<Error> e) { connected += !e; });
    run_until([&] { return connected == 2 && worker->connected(); });
    REQUIRE(connected == 2);
  }

  void run_until(const std::function<bool()>& done, double horizon = 600.0) {
    queue.run(queue.now() + horizon, done);
  }

  std::string submit(ClientSession& c, const std::string& spec) {
    std::string id;
    bool fired = false;
    c.submit(spec, "job", [&](std::optional<json> job, std::optional<Error> e) {
      fired = true;
      if (job) id = job->at("job_id").get<std::string>();
      if (e) FAIL(e->what());
    });
    run_until([&] { return fired; });
    REQUIRE_FALSE(id.empty());
    return id;
  }
};

template <typename Call>
std::optional<Error> error_of(Cluster& c, Call call) {
  std::optional<Error> err;
  bool fired = false;
  call([&](std::optional<json>, std::optional<Error> e) {
    fired = true;
    err = e;
  });
  c.run_until([&] { return fired; });
  REQUIRE(fired);
  return err;
}

}  // namespace

TEST_CASE("a submitted job runs and its result downloads bit-exact") {
  Cluster c;
  const std::string spec = "prime_sieve:steps=6,step_cost=2,limit=3000";
  const std::string id = c.submit(*c.alice, spec);
  c.run_until([&] { return c.alice->results_ready().contains(id); });
  REQUIRE(c.alice->results_ready().contains(id));
  std::optional<std::string> data;
  c.alice->download(id, "", [&](std::optional<std::string> d, std::optional<Error>) { data = d; });
  c.run_until([&] { return data.has_value(); });
  CHECK(data == run_to_completion(JobProgram::parse(spec)));
  CHECK(c.alice->result_ready_received() == 1);
  CHECK(c.orch->store().job(id)->status == "completed");
}

TEST_CASE("client errors carry their codes") {
  Cluster c;
  auto missing = error_of(c, [&](auto cb) { c.alice->status("no-such-job", cb); });
  REQUIRE(missing);
  CHECK(missing->code() == ErrorCode::not_found);

  auto bad = error_of(c, [&](auto cb) { c.alice->submit("warp_drive", "x", cb); });
  REQUIRE(bad);
  CHECK(bad->code() == ErrorCode::schema);

  const std::string id = c.submit(*c.alice, "busy_counter:steps=50,step_cost=1");
  auto foreign = error_of(c, [&](auto cb) { c.bob->cancel(id, cb); });
  REQUIRE(foreign);
  CHECK(foreign->code() == ErrorCode::authorization);
}

TEST_CASE("canceling a running job stops the worker") {
  Cluster c;
  const std::string id = c.submit(*c.alice, "busy_counter:steps=100,step_cost=1");
  c.run_until([&] { return c.worker->step_counter() > 5; });
  REQUIRE(c.worker->current_job() == id);
  CHECK_FALSE(error_of(c, [&](auto cb) { c.alice->cancel(id, cb); }));
  c.run_until([&] { return c.worker->current_job().empty(); }, 30.0);
  CHECK(c.worker->current_job().empty());
  CHECK(c.orch->store().job(id)->status == "canceled");
  CHECK(c.alice->results_ready().empty());
}

TEST_CASE("list shows only the caller's jobs and honours the filter") {
  Cluster c;
  const std::string mine = c.submit(*c.alice, "busy_counter:steps=2,step_cost=1");
  c.submit(*c.bob, "busy_counter:steps=2,step_cost=1");
  c.run_until([&] { return c.alice->results_ready().contains(mine); });
  std::optional<json> all, queued;
  c.alice->list("all", [&](std::optional<json> j, std::optional<Error>) { all = j; });
  c.alice->list("queued", [&](std::optional<json> j, std::optional<Error>) { queued = j; });
  c.run_until([&] { return all && queued; });
  REQUIRE(all);
  REQUIRE(all->size() == 1);
  CHECK(all->at(0).at("job_id") == mine);
  CHECK(queued->empty());
}

TEST_CASE("the worker checkpoints on its execution clock") {
  Cluster c(10.0);
  const std::string id = c.submit(*c.alice, "busy_counter:steps=35,step_cost=1");
  c.run_until([&] { return c.worker->step_counter() >= 25; });
  const auto& ms = c.orch->store().manifests(id);
  REQUIRE(ms.size() == 2);
  CHECK(ms[0].step_counter == 10);
  CHECK(ms[1].step_counter == 20);
  c.run_until([&] { return c.alice->results_ready().contains(id); });
  CHECK(c.orch->store().manifests(id).empty());
}
