// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// Expected completion time of a job under Poisson faults, with and without
// checkpointing, and the search for the checkpoint count that minimizes it.
//
// A job needs `total_time_s` seconds of fault-free execution. Faults arrive
// at rate `mu` per second and destroy all work since the last checkpoint.
// Splitting the job into N equal segments costs N-1 checkpoints of
// `overhead_s` each; checkpointing itself is not exposed to faults.

#pragma once

#include <cstdint>
#include <vector>

namespace offload::ckptmath {

/// Poisson fault rate in faults per second. Zero stands for the mu -> 0 limit.
struct FaultModel {
  double mu = 0.0;
  explicit FaultModel(double rate);
};

/// Fault-free completion time T.
struct JobProfile {
  double total_time_s;
  explicit JobProfile(double seconds);
};

/// Per-checkpoint overhead C.
struct CheckpointCost {
  double overhead_s = 0.0;
  explicit CheckpointCost(double seconds);
};

struct SegmentPlan {
  std::int64_t segments = 1;
  std::int64_t checkpoints = 0;
  double interval_s = 0.0;
  /// Set when the optimizer stopped at the search cap without bracketing a
  /// minimum (only possible with zero checkpoint cost).
  bool capped = false;

  static SegmentPlan split(const JobProfile& profile, std::int64_t segments);
};

struct McEstimate {
  double mean_s = 0.0;
  double stderr_s = 0.0;
  std::uint64_t trials = 0;
  std::uint64_t seed = 0;
};

/// Below this value of mu*T the closed forms are replaced by their Taylor
/// expansions.
inline constexpr double kSeriesThreshold = 1e-12;

/// Largest segment count optimal_segments() will consider.
inline constexpr std::int64_t kMaxSegments = 1'000'000;

double fault_pdf(const FaultModel& model, double t);

double p_fault_before(const FaultModel& model, double horizon_s);

/// Mean time of the first fault given that it happens before `horizon_s`.
double expected_fault_time(const FaultModel& model, double horizon_s);

/// E_x(mu, T) = (e^{mu T} - 1) / mu: restart-from-scratch completion time.
double expected_exec_time(const FaultModel& model, const JobProfile& profile);

/// E_Y = N E_x(mu, T/N) + (N-1) C.
double expected_time_with_checkpoints(const FaultModel& model, const JobProfile& profile,
                                      const SegmentPlan& plan, const CheckpointCost& cost);

/// d^2 E_Y / dN^2 = mu T^2 / N^3 e^{mu T / N}, N taken as real.
double ey_second_derivative(const FaultModel& model, const JobProfile& profile,
                            const SegmentPlan& plan, const CheckpointCost& cost);

/// Smallest N minimizing E_Y. Relies on convexity: N is increased until the
/// expected time stops decreasing.
SegmentPlan optimal_segments(const FaultModel& model, const JobProfile& profile,
                             const CheckpointCost& cost);

/// E_Y(N) for N = 1..max_segments.
std::vector<double> expected_time_table(const FaultModel& model, const JobProfile& profile,
                                        const CheckpointCost& cost, std::int64_t max_segments);

/// Simulates the restart-from-scratch process directly.
McEstimate monte_carlo_exec_time(const FaultModel& model, const JobProfile& profile,
                                 std::uint64_t trials, std::uint64_t seed);

/// Simulates N independently restarting segments plus N-1 checkpoint pauses.
/// With one segment this consumes the random stream exactly like
/// monte_carlo_exec_time().
McEstimate monte_carlo_checkpointed_time(const FaultModel& model, const JobProfile& profile,
                                         const SegmentPlan& plan, const CheckpointCost& cost,
                                         std::uint64_t trials, std::uint64_t seed);

}  // namespace offload::ckptmath
