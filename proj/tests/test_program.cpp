// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include "offload/errors.hpp"
#include "offload/program.hpp"

using namespace offload;

TEST_CASE("program specs parse to a canonical form") {
  const auto p = JobProgram::parse("busy_counter:steps=20,step_cost=0.5");
  CHECK(p.kind == "busy_counter");
  CHECK(p.total_steps == 20);
  CHECK(p.step_cost_s == 0.5);
  CHECK(p.spec() == "busy_counter:step_cost=0.5,steps=20,work=1000");
  CHECK(JobProgram::parse(p.spec()).spec() == p.spec());
}

TEST_CASE("bad program specs are rejected with the right code") {
  auto code = [](const char* spec) -> std::optional<ErrorCode> {
    try {
      JobProgram::parse(spec);
    } catch (const Error& e) {
      return e.code();
    }
    return std::nullopt;
  };
  CHECK(code("quantum_annealer") == ErrorCode::schema);
  CHECK(code("busy_counter:color=red") == ErrorCode::schema);
  CHECK(code("busy_counter:steps=0") == ErrorCode::schema);
  CHECK(code("busy_counter:steps") == ErrorCode::parse);
}

TEST_CASE("prime_sieve counts the primes below its limit") {
  const auto p = JobProgram::parse("prime_sieve:limit=100000,steps=7");
  const json r = json::parse(run_to_completion(p));
  CHECK(r.at("output").at("count") == 9592);
}

TEST_CASE("resuming from any step gives the uninterrupted result") {
  for (const char* spec : {"busy_counter:steps=13", "prime_sieve:steps=9,limit=5000",
                           "mc_pi:steps=11,samples=300,seed=4"}) {
    const auto p = JobProgram::parse(spec);
    const std::string expected = run_to_completion(p);
    for (std::int64_t cut = 0; cut <= p.total_steps; ++cut) {
      json state = p.initial_state();
      for (std::int64_t k = 0; k < cut; ++k) state = p.step(state, k);
      ExecutionState saved{"job", cut, 0.0, state};
      const auto restored = ExecutionState::deserialize(saved.serialize());
      REQUIRE(restored == saved);
      json s = restored.state;
      for (std::int64_t k = cut; k < p.total_steps; ++k) s = p.step(s, k);
      CHECK(encode_result(p, s) == expected);
    }
  }
}

TEST_CASE("corrupt execution state is a parse error") {
  CHECK_THROWS_AS(ExecutionState::deserialize("{not json"), Error);
  try {
    ExecutionState::deserialize("[]");
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::parse);
  }
}
