// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>

#include "offload/ckptmath.hpp"
#include "offload/errors.hpp"
#include "offload/simlab.hpp"

using namespace offload;
using namespace offload::simlab;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string schema_message(const json& doc) {
  try {
    SimConfig::from_json(doc);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::schema);
    return e.what();
  }
  return "accepted";
}

double mean_completion(const ExperimentResult& r) {
  double sum = 0.0;
  for (const auto& run : r.runs) sum += run.completion_s;
  return sum / static_cast<double>(r.runs.size());
}

}  // namespace

TEST_CASE("config errors name the offending field") {
  CHECK_THAT(schema_message({{"mu", -1}}), ContainsSubstring("$.mu"));
  CHECK_THAT(schema_message({{"mode", "fast"}}), ContainsSubstring("$.mode"));
  CHECK_THAT(schema_message({{"colour", 1}}), ContainsSubstring("$.colour"));
  CHECK_THAT(schema_message({{"segments", 2}, {"checkpoints", 1}}), ContainsSubstring("$.checkpoints"));
  CHECK_THAT(schema_message({{"energy", {{"p_idle_w", 5}, {"p_active_w", 1}}}}),
             ContainsSubstring("$.energy.p_active_w"));
  CHECK_THAT(schema_message({{"script", {{{"action", "kill"}, {"node", "w1"}, {"at_s", 1}},
                                         {{"action", "explode"}}}}}),
             ContainsSubstring("$.script[1].action"));
  CHECK_THAT(schema_message({{"program", "nope"}}), ContainsSubstring("$.program"));
}

TEST_CASE("config round-trips and checkpoints is an alias") {
  const SimConfig c = SimConfig::from_json({{"checkpoints", 5}, {"mu", 0.003}, {"seed", 9}});
  CHECK(c.segments == 6);
  const SimConfig back = SimConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  SimConfig other = c;
  other.seed = 10;
  CHECK(other.hash() == c.hash());
  other.mu = 0.004;
  CHECK(other.hash() != c.hash());
}

TEST_CASE("mode defaults differ only in the recovery path") {
  SimConfig c;
  CHECK(c.latency() == 0.0);
  CHECK(c.restart_delay() == 0.0);
  c.mode = Mode::system;
  CHECK(c.latency() > 0.0);
  CHECK(c.detection_timeout() == 3 * c.worker_heartbeat_s);
  CHECK(c.max_time() == 100 * c.T_s);
}

TEST_CASE("energy is linear in total and busy time") {
  const EnergyModel m;
  CHECK(node_energy(100, 0, m) == Catch::Approx(250.0));
  CHECK(node_energy(100, 100, m) == Catch::Approx(600.0));
  CHECK(node_energy(200, 40, m) == Catch::Approx(2 * node_energy(100, 20, m)));
  CHECK(node_energy(100, 50, m) > node_energy(100, 49, m));
}

TEST_CASE("runs are deterministic and the result is exact") {
  SimConfig c;
  c.mu = 0.003;
  c.segments = 6;
  c.seed = 77;
  const RunRecord a = run_simulation(c);
  const RunRecord b = run_simulation(c);
  CHECK(runs_csv({a}) == runs_csv({b}));
  CHECK(a.result_digest == a.expected_digest);
  double sum = 0.0;
  for (const auto& n : a.nodes) sum += n.energy_j;
  CHECK(a.energy_total_j == Catch::Approx(sum));
}

TEST_CASE("checkpoints cost energy when nothing fails") {
  ExperimentOptions opt;
  const auto r = run_experiment("checkpoint_overhead", opt);
  REQUIRE(r.runs.size() == 2);
  CHECK(r.runs[1].energy_total_j > r.runs[0].energy_total_j);
  CHECK(r.runs[1].checkpoints_taken == 15);
}

TEST_CASE("observed fault rate matches mu per unit of execution") {
  SimConfig c;
  c.mu = 0.01;
  c.seed = 5;
  const auto r = run_trials(c, 60);
  double faults = 0.0, exposure = 0.0;
  for (const auto& run : r.runs) {
    faults += static_cast<double>(run.faults);
    exposure += run.exposure_s;
  }
  REQUIRE(faults > 500);
  CHECK(faults / exposure == Catch::Approx(0.01).epsilon(0.15));
}

TEST_CASE("the system recovery path is never faster than the model") {
  SimConfig c;
  c.mu = 0.003;
  c.segments = 6;
  c.seed = 11;
  const double model = mean_completion(run_trials(c, 150));
  c.mode = Mode::system;
  const double system = mean_completion(run_trials(c, 150));
  CHECK(system > model);

  SimConfig quiet;
  const double base = run_simulation(quiet).completion_s;
  quiet.mode = Mode::system;
  CHECK(run_simulation(quiet).completion_s >= base);
}

TEST_CASE("a worker killed while uploading a checkpoint still yields the exact result") {
  SimConfig c;
  c.mode = Mode::system;
  c.segments = 6;
  c.script.push_back(ScriptStep{"kill_on_checkpoint", "", 0.0, 2});
  const RunRecord r = run_simulation(c);
  CHECK(r.scripted_kills == 1);
  CHECK(r.completed);
  CHECK(r.result_digest == r.expected_digest);
}

TEST_CASE("a broker crash with a journal is survived") {
  SimConfig c;
  c.mode = Mode::system;
  c.segments = 6;
  c.broker_journal = true;
  c.script.push_back(ScriptStep{"kill", "broker", 120.0});
  const RunRecord r = run_simulation(c);
  CHECK(r.scripted_kills == 1);
  CHECK(r.completed);
  CHECK(r.result_digest == r.expected_digest);
  CHECK(r.result_ready_delivered == 1);
}

TEST_CASE("cutoff runs report no completion time") {
  SimConfig c;
  c.mu = 0.131;
  c.max_time_s = 400.0;
  const RunRecord r = run_simulation(c);
  CHECK(r.cutoff);
  CHECK(std::isnan(r.completion_s));
  CHECK_THAT(runs_csv({r}), ContainsSubstring(",NaN,"));
}

TEST_CASE("unknown experiments are a usage error") {
  try {
    run_experiment("warp_drive", {});
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::usage);
    CHECK_THAT(std::string(e.what()), ContainsSubstring("optimal_frequency"));
  }
}
