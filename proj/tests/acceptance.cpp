// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion. Arguments select
// criteria by number; no arguments runs all of them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdarg>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "offload/ckptmath.hpp"
#include "offload/rng.hpp"
#include "offload/scenarios.hpp"
#include "offload/simlab.hpp"

using namespace offload;
namespace cm = offload::ckptmath;
namespace sl = offload::simlab;

namespace {

constexpr std::uint64_t kSeed = 20260401;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* pattern, ...) {
  char buf[512];
  va_list args;
  va_start(args, pattern);
  std::vsnprintf(buf, sizeof buf, pattern, args);
  va_end(args);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }

// CSV output of the simulation criteria, keyed by criterion, for the
// rerun comparison.
using CsvProducer = std::function<std::string()>;
std::map<int, std::string> first_csv;

sl::SimConfig experiment_base() {
  sl::SimConfig c;
  c.T_s = 300.0;
  c.C_s = 6.0;
  c.replica_heartbeat_s = 10.0;
  c.promotion_timeout_s = 30.0;
  return c;
}

Outcome criterion1() {
  struct Case {
    double mu, T;
  };
  const Case cases[] = {{0.003, 300.0}, {0.01, 100.0}, {0.02, 50.0}};
  Outcome o{true, ""};
  for (const auto& c : cases) {
    const auto t = std::chrono::steady_clock::now();
    const cm::FaultModel f(c.mu);
    const cm::JobProfile p(c.T);
    const auto mc = cm::monte_carlo_exec_time(f, p, 200000, kSeed);
    const double secs = seconds_since(t);
    const double want = cm::expected_exec_time(f, p);
    const double err = rel_err(mc.mean_s, want);
    o.pass = o.pass && err <= 0.02 && secs < 10.0;
    o.detail += fmt("(%g,%g) mc=%.4f closed=%.4f err=%.3f%% %.2fs; ", c.mu, c.T, mc.mean_s, want,
                    100 * err, secs);
  }
  return o;
}

Outcome criterion2() {
  const auto t = std::chrono::steady_clock::now();
  Rng rng(kSeed);
  double worst = INFINITY;
  int argmin_mismatch = 0;
  for (int i = 0; i < 200; ++i) {
    const double mu = std::exp(rng.uniform(std::log(1e-4), std::log(0.05)));
    const double T = rng.uniform(10.0, 1000.0);
    const double C = rng.uniform(0.0, 30.0);
    const cm::FaultModel f(mu);
    const cm::JobProfile p(T);
    const cm::CheckpointCost cost(C);
    const auto table = cm::expected_time_table(f, p, cost, 400);
    for (std::size_t n = 1; n + 1 < table.size(); ++n) {
      // Scaled by the magnitude so the bound is about the shape, not round-off.
      const double d2 = (table[n + 1] - 2 * table[n] + table[n - 1]) / std::max(1.0, table[n]);
      worst = std::min(worst, d2);
    }
    const auto best = std::min_element(table.begin(), table.end()) - table.begin() + 1;
    if (cm::optimal_segments(f, p, cost).segments != best) ++argmin_mismatch;
  }
  const double secs = seconds_since(t);
  return {worst >= -1e-9 && argmin_mismatch == 0 && secs < 5.0,
          fmt("min scaled second difference %.3g, argmin mismatches %d, %.2fs", worst,
              argmin_mismatch, secs)};
}

Outcome criterion3() {
  sl::ExperimentOptions opt;
  opt.seed = kSeed;
  const auto r = sl::run_experiment("checkpoint_overhead", opt);
  first_csv.emplace(3, sl::runs_csv(r.runs));
  double none = NAN, fifteen = NAN;
  for (const auto& run : r.runs) {
    if (run.segments == 1) none = run.completion_s;
    if (run.segments == 16) fifteen = run.completion_s;
  }
  return {none == 300.0 && fifteen == 390.0,
          fmt("0 checkpoints %.17g s, 15 checkpoints %.17g s", none, fifteen)};
}

std::string optimal_frequency_csv(sl::ExperimentResult* out) {
  sl::ExperimentOptions opt;
  opt.seed = kSeed;
  opt.trials = 2000;
  auto r = sl::run_experiment("optimal_frequency", opt);
  if (out != nullptr) *out = r;
  return sl::runs_csv(r.runs);
}

Outcome criterion4() {
  const auto t = std::chrono::steady_clock::now();
  sl::ExperimentResult r;
  first_csv.emplace(4, optimal_frequency_csv(&r));
  const double secs = seconds_since(t);
  std::map<std::int64_t, const sl::ArmSummary*> by_n;
  Outcome o{true, ""};
  for (const auto& a : r.arms) {
    by_n[a.segments] = &a;
    const double err = rel_err(a.mean_completion_s, a.closed_form_s);
    o.pass = o.pass && a.trials >= 2000 && a.completed == a.trials && err <= 0.02;
    o.detail += fmt("N=%lld n=%llu mean=%.2f closed=%.2f err=%.2f%%; ",
                    static_cast<long long>(a.segments), static_cast<unsigned long long>(a.trials),
                    a.mean_completion_s, a.closed_form_s, 100 * err);
  }
  if (by_n.count(1) == 0 || by_n.count(6) == 0 || by_n.count(16) == 0) return {false, "arm missing"};
  const bool order = by_n[6]->mean_completion_s < by_n[16]->mean_completion_s &&
                     by_n[16]->mean_completion_s < by_n[1]->mean_completion_s;
  o.pass = o.pass && order && secs < 60.0;
  o.detail += fmt("order %s, %.1fs", order ? "N6<N16<N1" : "violated", secs);
  return o;
}

std::string cutoff_csv(std::uint64_t* cutoffs) {
  sl::SimConfig c = experiment_base();
  c.seed = kSeed;
  c.mu = 0.131;
  const auto r = sl::run_trials(c, 100);
  if (cutoffs != nullptr) {
    *cutoffs = static_cast<std::uint64_t>(
        std::count_if(r.runs.begin(), r.runs.end(), [&](const sl::RunRecord& x) { return x.cutoff; }));
  }
  return sl::runs_csv(r.runs);
}

Outcome criterion5() {
  std::uint64_t cutoffs = 0;
  first_csv.emplace(5, cutoff_csv(&cutoffs));
  return {cutoffs >= 99, fmt("%llu of 100 runs reached the 100*T cutoff",
                             static_cast<unsigned long long>(cutoffs))};
}

Outcome criterion6() {
  int bad = 0, incomplete = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto r = sl::replication_storm(derive_seed(kSeed, s), 3, 100);
    if (r.completed != r.requested) ++incomplete;
    if (!r.identical) ++bad;
  }
  return {bad == 0 && incomplete == 0,
          fmt("1000 schedules, %d diverged, %d incomplete", bad, incomplete)};
}

std::vector<sl::RunRecord> worker_kill_runs() {
  std::vector<sl::RunRecord> runs;
  for (std::uint64_t s = 0; s < 500; ++s) {
    sl::SimConfig c;
    c.seed = derive_seed(kSeed, 7000 + s);
    c.mode = sl::Mode::system;
    c.segments = 6;
    Rng when(c.seed);
    c.script.push_back(sl::ScriptStep{"kill_executing_worker", "", when.uniform(0.0, 0.9 * c.T_s)});
    runs.push_back(sl::run_simulation(c, "c7-" + std::to_string(s)));
  }
  return runs;
}

Outcome criterion7() {
  const auto runs = worker_kill_runs();
  first_csv.emplace(7, sl::runs_csv(runs));
  sl::SimConfig ref;
  ref.mode = sl::Mode::system;
  ref.segments = 6;
  const double bound = ref.T_s / 6 + ref.detection_timeout();
  int failed = 0, no_kill = 0;
  double worst = 0.0;
  for (const auto& r : runs) {
    worst = std::max(worst, r.reexecuted_s);
    if (r.scripted_kills == 0) ++no_kill;
    if (!r.completed || r.reexecuted_s > bound + 1e-9 || r.result_digest != r.expected_digest) ++failed;
  }
  return {failed == 0 && no_kill == 0,
          fmt("500 seeds, %d failed, %d without a kill, worst re-executed %.2fs (bound %.2fs)",
              failed, no_kill, worst, bound)};
}

std::vector<sl::RunRecord> primary_kill_runs() {
  std::vector<sl::RunRecord> runs;
  for (std::uint64_t s = 0; s < 200; ++s) {
    sl::SimConfig c;
    c.seed = derive_seed(kSeed, 8000 + s);
    c.mode = sl::Mode::system;
    c.segments = 6;
    c.orchestrators = 2;
    c.settle_s = 20.0;
    Rng when(c.seed);
    sl::ScriptStep st{"kill_primary", "", when.uniform(0.0, 0.9 * c.T_s)};
    st.restart = false;
    c.script.push_back(st);
    runs.push_back(sl::run_simulation(c, "c8-" + std::to_string(s)));
  }
  return runs;
}

Outcome criterion8() {
  const auto runs = primary_kill_runs();
  first_csv.emplace(8, sl::runs_csv(runs));
  int lost = 0, wrong_count = 0, no_kill = 0;
  std::uint64_t raw_max = 0;
  for (const auto& r : runs) {
    if (r.scripted_kills == 0) ++no_kill;
    if (!r.completed || r.final_status != "completed" || r.result_digest != r.expected_digest) ++lost;
    if (r.result_ready_delivered != 1) ++wrong_count;
    raw_max = std::max(raw_max, r.result_ready_received);
  }
  return {lost == 0 && wrong_count == 0 && no_kill == 0,
          fmt("200 seeds, %d lost, %d without exactly one resultReady, %d without a kill, "
              "max raw resultReady %llu",
              lost, wrong_count, no_kill, static_cast<unsigned long long>(raw_max))};
}

Outcome criterion9() {
  int inexact = 0, flags = 0, acks = 0, fan_bad = 0;
  std::size_t redeliveries = 0, fan_redeliveries = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto r = sl::redelivery_check(derive_seed(kSeed, 9000 + s));
    redeliveries += r.redeliveries;
    if (!r.bit_exact) ++inexact;
    if (!r.flags_correct) ++flags;
    if (!r.exactly_once_ack) ++acks;
    const auto f = sl::fanout_order(derive_seed(kSeed, 9500 + s));
    fan_redeliveries += f.redeliveries;
    if (!f.complete || !f.identical || !f.ordered) ++fan_bad;
  }
  return {inexact + flags + acks + fan_bad == 0 && redeliveries > 0 && fan_redeliveries > 0,
          fmt("redelivery: %zu repeats, %d inexact, %d bad flags, %d bad acks; "
              "fanout: 200 schedules, %d out of order",
              redeliveries, inexact, flags, acks, fan_bad)};
}

Outcome criterion10() {
  const std::map<int, CsvProducer> producers{
      {3, [] {
         sl::ExperimentOptions opt;
         opt.seed = kSeed;
         return sl::runs_csv(sl::run_experiment("checkpoint_overhead", opt).runs);
       }},
      {4, [] { return optimal_frequency_csv(nullptr); }},
      {5, [] { return cutoff_csv(nullptr); }},
      {7, [] { return sl::runs_csv(worker_kill_runs()); }},
      {8, [] { return sl::runs_csv(primary_kill_runs()); }},
  };
  Outcome o{true, ""};
  for (const auto& [id, make] : producers) {
    if (first_csv.count(id) == 0) first_csv.emplace(id, make());
    const bool same = make() == first_csv[id];
    o.pass = o.pass && same;
    o.detail += fmt("criterion %d %s (%zu bytes); ", id, same ? "identical" : "DIFFERS",
                    first_csv[id].size());
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::function<Outcome()>> criteria{
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},  {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  if (selected.empty()) {
    for (const auto& [id, fn] : criteria) selected.insert(id);
  }
  int failures = 0;
  for (int id : selected) {
    const auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::printf("criterion %d: unknown\n", id);
      return 2;
    }
    const auto t = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("criterion %d: %s %s [%.1fs]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                seconds_since(t));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
