// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/program.hpp"

#include <charconv>
#include <cmath>
#include <set>

#include "offload/errors.hpp"
#include "offload/rng.hpp"

namespace offload {

namespace {

struct KindInfo {
  std::map<std::string, std::string> defaults;
};

const std::map<std::string, KindInfo, std::less<>>& kinds() {
  static const std::map<std::string, KindInfo, std::less<>> table = {
      {"busy_counter", {{{"steps", "100"}, {"step_cost", "1"}, {"work", "1000"}}}},
      {"prime_sieve", {{{"steps", "100"}, {"step_cost", "1"}, {"limit", "100000"}}}},
      {"mc_pi", {{{"steps", "100"}, {"step_cost", "1"}, {"samples", "10000"}, {"seed", "1"}}}},
  };
  return table;
}

std::int64_t int_param(const JobProgram& p, const std::string& name) {
  const std::string& text = p.params.at(name);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    fail(ErrorCode::schema, "program param '" + name + "' is not an integer: '" + text + "'");
  }
  return v;
}

double double_param(const JobProgram& p, const std::string& name) {
  const std::string& text = p.params.at(name);
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::schema, "program param '" + name + "' is not a number: '" + text + "'");
  }
}

std::uint64_t u64(const json& j, const char* key) { return j.at(key).get<std::uint64_t>(); }

bool is_prime(std::int64_t n) {
  if (n < 2) return false;
  if (n % 2 == 0) return n == 2;
  for (std::int64_t d = 3; d * d <= n; d += 2) {
    if (n % d == 0) return false;
  }
  return true;
}

}  // namespace

JobProgram JobProgram::parse(std::string_view spec) {
  JobProgram p;
  const auto colon = spec.find(':');
  p.kind = std::string(spec.substr(0, colon));
  auto kind = kinds().find(p.kind);
  if (kind == kinds().end()) {
    fail(ErrorCode::schema, "unknown program kind '" + p.kind +
                                "' (expected busy_counter, prime_sieve or mc_pi)");
  }
  p.params = kind->second.defaults;
  if (colon != std::string_view::npos) {
    std::string_view rest = spec.substr(colon + 1);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const std::string_view item = rest.substr(0, comma);
      const auto eq = item.find('=');
      if (eq == std::string_view::npos || eq == 0 || eq + 1 == item.size()) {
        fail(ErrorCode::parse, "program spec: expected name=value, got '" + std::string(item) + "'");
      }
      const std::string name(item.substr(0, eq));
      if (!p.params.contains(name)) {
        fail(ErrorCode::schema, "program '" + p.kind + "' has no parameter '" + name + "'");
      }
      p.params[name] = std::string(item.substr(eq + 1));
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
      if (rest.empty()) fail(ErrorCode::parse, "program spec: trailing comma");
    }
  }
  p.total_steps = int_param(p, "steps");
  p.step_cost_s = double_param(p, "step_cost");
  if (p.total_steps < 1) fail(ErrorCode::schema, "program param 'steps' must be >= 1");
  if (!(p.step_cost_s >= 0.0) || !std::isfinite(p.step_cost_s)) {
    fail(ErrorCode::schema, "program param 'step_cost' must be >= 0");
  }
  for (const char* name : {"work", "limit", "samples"}) {
    if (p.params.contains(name) && int_param(p, name) < 1) {
      fail(ErrorCode::schema, std::string("program param '") + name + "' must be >= 1");
    }
  }
  if (p.params.contains("seed")) int_param(p, "seed");
  return p;
}

std::string JobProgram::spec() const {
  std::string s = kind;
  char sep = ':';
  for (const auto& [k, v] : params) {
    s += sep;
    s += k + "=" + v;
    sep = ',';
  }
  return s;
}

json JobProgram::initial_state() const {
  if (kind == "busy_counter") return {{"acc", std::uint64_t{0}}};
  if (kind == "prime_sieve") return {{"count", std::uint64_t{0}}};
  return {{"hits", std::uint64_t{0}}, {"samples", std::uint64_t{0}}};
}

json JobProgram::step(const json& state, std::int64_t index) const {
  if (kind == "busy_counter") {
    std::uint64_t acc = u64(state, "acc");
    const std::int64_t work = int_param(*this, "work");
    for (std::int64_t i = 0; i < work; ++i) {
      acc = splitmix64(acc + static_cast<std::uint64_t>(index) * 0x100000001b3ULL +
                       static_cast<std::uint64_t>(i));
    }
    return {{"acc", acc}};
  }
  if (kind == "prime_sieve") {
    const std::int64_t limit = int_param(*this, "limit");
    const std::int64_t lo = limit * index / total_steps;
    const std::int64_t hi = limit * (index + 1) / total_steps;
    std::uint64_t count = u64(state, "count");
    for (std::int64_t n = lo; n < hi; ++n) count += is_prime(n) ? 1 : 0;
    return {{"count", count}};
  }
  const std::int64_t samples = int_param(*this, "samples");
  Rng rng(derive_seed(static_cast<std::uint64_t>(int_param(*this, "seed")),
                      static_cast<std::uint64_t>(index)));
  std::uint64_t hits = u64(state, "hits");
  for (std::int64_t i = 0; i < samples; ++i) {
    const double x = rng.uniform();
    const double y = rng.uniform();
    if (x * x + y * y < 1.0) ++hits;
  }
  return {{"hits", hits}, {"samples", u64(state, "samples") + static_cast<std::uint64_t>(samples)}};
}

json JobProgram::result(const json& state) const {
  if (kind == "busy_counter") return {{"acc", u64(state, "acc")}};
  if (kind == "prime_sieve") {
    return {{"primes_below", int_param(*this, "limit")}, {"count", u64(state, "count")}};
  }
  const double hits = static_cast<double>(u64(state, "hits"));
  const double samples = static_cast<double>(u64(state, "samples"));
  return {{"hits", u64(state, "hits")},
          {"samples", u64(state, "samples")},
          {"pi_estimate", 4.0 * hits / samples}};
}

std::string ExecutionState::serialize() const {
  return json{{"job_id", job_id},
              {"step_counter", step_counter},
              {"accumulated_exec_s", accumulated_exec_s},
              {"state", state}}
      .dump();
}

ExecutionState ExecutionState::deserialize(std::string_view blob) {
  json j = json::parse(blob.begin(), blob.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorCode::parse, "execution state: malformed JSON");
  ExecutionState s;
  try {
    s.job_id = j.at("job_id").get<std::string>();
    s.step_counter = j.at("step_counter").get<std::int64_t>();
    s.accumulated_exec_s = j.at("accumulated_exec_s").get<double>();
    s.state = j.at("state");
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, std::string("execution state: ") + e.what());
  }
  if (s.step_counter < 0 || !s.state.is_object()) {
    fail(ErrorCode::parse, "execution state: inconsistent fields");
  }
  return s;
}

std::string encode_result(const JobProgram& program, const json& state) {
  return json{{"program", program.spec()}, {"output", program.result(state)}}.dump();
}

std::string run_to_completion(const JobProgram& program) {
  json state = program.initial_state();
  for (std::int64_t k = 0; k < program.total_steps; ++k) state = program.step(state, k);
  return encode_result(program, state);
}

}  // namespace offload
