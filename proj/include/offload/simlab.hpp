// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// Discrete-event simulation of the whole system: broker, orchestrator
// replicas, workers and one client run their real state machines on a
// shared virtual clock.
//
// Worker faults follow a Poisson process of rate mu measured in execution
// time: each worker carries an exponential budget that is consumed only
// while it executes job steps, and a fault fires when the budget runs out.
// A fault kills the worker, which restarts under its saved id after the
// restart delay.
//
// model_faithful mode removes everything the closed-form model ignores:
// zero latency, a perfect failure detector, no restart delay and no restore
// cost. system mode keeps the real recovery path (heartbeat detection,
// restart delay, restore cost, network latency).

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "offload/envelope.hpp"

namespace offload::simlab {

enum class Mode { model_faithful, system };

std::string_view to_string(Mode mode);

struct EnergyModel {
  double p_idle_w = 2.5;
  double p_active_w = 6.0;
};

/// Scripted fault. Times are relative to job submission.
///   kill / restart           node = o1.., w1.., or "broker"
///   kill_primary             whichever orchestrator is primary at `at_s`
///   kill_executing_worker    whichever worker holds the job at `at_s`
///   kill_on_checkpoint       kills the worker that started checkpoint
///                            `seq` while its state is being uploaded
/// Killed nodes other than the broker restart after the restart delay
/// unless `restart` is false.
struct ScriptStep {
  std::string action;
  std::string node;
  double at_s = 0.0;
  std::uint64_t seq = 0;
  bool restart = true;
};

struct SimConfig {
  std::uint64_t seed = 1;
  Mode mode = Mode::model_faithful;
  double mu = 0.0;
  double T_s = 300.0;
  std::int64_t segments = 1;  // checkpoints = segments - 1
  double C_s = 6.0;
  /// Optional job program; by default a busy_counter whose step cost
  /// divides the segment length.
  std::string program;
  int orchestrators = 2;
  int workers = 2;
  std::optional<double> latency_s;
  double worker_heartbeat_s = 10.0;
  std::optional<double> detection_timeout_s;
  std::optional<double> restart_delay_s;
  std::optional<double> restore_cost_s;
  double replica_heartbeat_s = 1.0;
  double promotion_timeout_s = 3.0;
  std::optional<double> max_time_s;
  /// Keep running this long after the result to observe duplicates.
  double settle_s = 0.0;
  bool broker_journal = false;
  EnergyModel energy;
  std::vector<ScriptStep> script;

  /// Throws Error(schema) naming the offending field path.
  static SimConfig from_json(const json& doc);
  json to_json() const;
  std::string hash() const;

  double latency() const;
  double detection_timeout() const;
  double restart_delay() const;
  double restore_cost() const;
  double max_time() const;
};

struct NodeUsage {
  std::string node;
  double t_total_s = 0.0;
  double t_busy_s = 0.0;
  double energy_j = 0.0;
};

struct RunRecord {
  std::string run_id;
  std::string config_hash;
  std::uint64_t seed = 0;
  Mode mode = Mode::model_faithful;
  double mu = 0.0;
  double T_s = 0.0;
  std::int64_t segments = 1;
  double C_s = 0.0;
  bool completed = false;
  bool cutoff = false;
  double completion_s = 0.0;  // time from submission to the client's notification
  std::uint64_t faults = 0;
  std::uint64_t scripted_kills = 0;
  std::uint64_t checkpoints_taken = 0;
  double exposure_s = 0.0;  // execution time seen by the fault clocks
  double reexecuted_s = 0.0;
  double step_cost_s = 0.0;
  std::int64_t total_steps = 0;
  std::string result_digest;
  std::string expected_digest;
  std::uint64_t result_ready_received = 0;
  std::uint64_t result_ready_delivered = 0;
  std::string final_status;
  std::uint64_t events = 0;
  std::vector<NodeUsage> nodes;
  double energy_total_j = 0.0;

  std::int64_t checkpoints() const { return segments - 1; }
};

/// Runs one simulation. Deterministic in (config, seed).
RunRecord run_simulation(const SimConfig& config, const std::string& run_id = "run");

/// p_idle * t_total + (p_active - p_idle) * t_busy.
double node_energy(double t_total_s, double t_busy_s, const EnergyModel& model);
/// Fills energy_j of every node and energy_total_j.
void apply_energy(RunRecord& record, const EnergyModel& model);

// Experiments -------------------------------------------------------------

struct ArmSummary {
  std::string experiment;
  std::string arm;
  Mode mode = Mode::model_faithful;
  double mu = 0.0;
  double T_s = 0.0;
  std::int64_t segments = 1;
  double C_s = 0.0;
  std::uint64_t trials = 0;
  std::uint64_t completed = 0;
  double mean_completion_s = 0.0;  // over completed runs
  double stderr_s = 0.0;
  double closed_form_s = 0.0;
  double mean_energy_j = 0.0;
};

struct ExperimentResult {
  std::string name;
  std::vector<RunRecord> runs;
  std::vector<ArmSummary> arms;
};

struct ExperimentOptions {
  std::uint64_t trials = 0;  // 0 picks the experiment's default
  std::uint64_t seed = 1;
  Mode mode = Mode::model_faithful;
  /// Arms with random outcomes keep adding trials until the standard error
  /// of the mean is at most this fraction of the mean (0 disables).
  double target_rel_stderr = 0.005;
  std::uint64_t max_trials = 40000;
};

const std::vector<std::string>& experiment_names();

/// Throws Error(usage) listing the registered names for an unknown one.
ExperimentResult run_experiment(const std::string& name, const ExperimentOptions& options);

/// Repeats `config` with per-trial derived seeds.
ExperimentResult run_trials(const SimConfig& config, std::uint64_t trials);

// Output ------------------------------------------------------------------

/// One row per run with the fixed column set.
std::string runs_csv(const std::vector<RunRecord>& runs);
std::string summary_csv(const std::vector<ArmSummary>& arms);
/// Whitespace-separated mirror of the summary for gnuplot.
std::string summary_dat(const std::vector<ArmSummary>& arms);
std::string plot_script(const std::string& name);

/// Writes <name>.csv, <name>_summary.csv, <name>.dat and, if asked,
/// <name>.gp into `dir`.
void write_outputs(const ExperimentResult& result, const std::string& dir, bool plot_script);

}  // namespace offload::simlab
