// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/ckptmath.hpp"

#include <cmath>
#include <string>

#include "offload/errors.hpp"
#include "offload/rng.hpp"

namespace offload::ckptmath {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::domain, what);
}

// Running mean / variance (Welford).
class Accumulator {
 public:
  void add(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }
  McEstimate finish(std::uint64_t seed) const {
    McEstimate est;
    est.mean_s = mean_;
    est.trials = n_;
    est.seed = seed;
    if (n_ > 1) {
      const double var = m2_ / static_cast<double>(n_ - 1);
      est.stderr_s = std::sqrt(var / static_cast<double>(n_));
    }
    return est;
  }

 private:
  std::uint64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

// Time lost to faults while completing one piece of work of length `length`
// that restarts from its beginning on every fault.
double lost_time(Rng& rng, double mu, double length) {
  double lost = 0.0;
  if (mu <= 0.0) return lost;
  for (;;) {
    const double fault_at = rng.exponential(mu);
    if (fault_at >= length) return lost;
    lost += fault_at;
  }
}

}  // namespace

FaultModel::FaultModel(double rate) : mu(rate) {
  require(std::isfinite(rate) && rate >= 0.0, "fault rate must be finite and >= 0");
}

JobProfile::JobProfile(double seconds) : total_time_s(seconds) {
  require(std::isfinite(seconds) && seconds > 0.0, "total time must be > 0");
}

CheckpointCost::CheckpointCost(double seconds) : overhead_s(seconds) {
  require(std::isfinite(seconds) && seconds >= 0.0, "checkpoint overhead must be >= 0");
}

SegmentPlan SegmentPlan::split(const JobProfile& profile, std::int64_t segments) {
  require(segments >= 1, "segment count must be >= 1");
  SegmentPlan plan;
  plan.segments = segments;
  plan.checkpoints = segments - 1;
  plan.interval_s = profile.total_time_s / static_cast<double>(segments);
  return plan;
}

double fault_pdf(const FaultModel& model, double t) {
  require(t >= 0.0, "fault_pdf: t must be >= 0");
  return model.mu * std::exp(-model.mu * t);
}

double p_fault_before(const FaultModel& model, double horizon_s) {
  require(horizon_s >= 0.0, "p_fault_before: horizon must be >= 0");
  return -std::expm1(-model.mu * horizon_s);
}

double expected_fault_time(const FaultModel& model, double horizon_s) {
  require(horizon_s > 0.0, "expected_fault_time: horizon must be > 0");
  const double x = model.mu * horizon_s;
  if (x < 1e-3) {
    // 1/x - 1/(e^x - 1) = 1/2 - x/12 + x^3/720 - ...
    return horizon_s * (0.5 - x / 12.0 + x * x * x / 720.0);
  }
  // (1/mu - T e^{-mu T} - e^{-mu T}/mu) / (1 - e^{-mu T}) rearranged to avoid
  // the cancellation in the numerator.
  return 1.0 / model.mu - horizon_s / std::expm1(x);
}

double expected_exec_time(const FaultModel& model, const JobProfile& profile) {
  const double t = profile.total_time_s;
  const double x = model.mu * t;
  if (x < kSeriesThreshold) return t * (1.0 + x / 2.0 + x * x / 6.0);
  return std::expm1(x) / model.mu;
}

double expected_time_with_checkpoints(const FaultModel& model, const JobProfile& profile,
                                      const SegmentPlan& plan, const CheckpointCost& cost) {
  require(plan.segments >= 1, "segment count must be >= 1");
  const auto n = static_cast<double>(plan.segments);
  const JobProfile part(profile.total_time_s / n);
  return n * expected_exec_time(model, part) + (n - 1.0) * cost.overhead_s;
}

double ey_second_derivative(const FaultModel& model, const JobProfile& profile,
                            const SegmentPlan& plan, const CheckpointCost& /*cost*/) {
  require(plan.segments >= 1, "segment count must be >= 1");
  const auto n = static_cast<double>(plan.segments);
  const double t = profile.total_time_s;
  return model.mu * t * t / (n * n * n) * std::exp(model.mu * t / n);
}

SegmentPlan optimal_segments(const FaultModel& model, const JobProfile& profile,
                             const CheckpointCost& cost) {
  auto expected = [&](std::int64_t n) {
    return expected_time_with_checkpoints(model, profile, SegmentPlan::split(profile, n), cost);
  };
  std::int64_t best = 1;
  double best_time = expected(1);
  for (std::int64_t n = 2; n <= kMaxSegments; ++n) {
    const double t = expected(n);
    if (t >= best_time) return SegmentPlan::split(profile, best);
    best = n;
    best_time = t;
  }
  if (cost.overhead_s > 0.0) {
    fail(ErrorCode::domain, "optimal_segments: minimum not bracketed below the search cap");
  }
  SegmentPlan plan = SegmentPlan::split(profile, best);
  plan.capped = true;
  return plan;
}

std::vector<double> expected_time_table(const FaultModel& model, const JobProfile& profile,
                                        const CheckpointCost& cost, std::int64_t max_segments) {
  require(max_segments >= 1, "table size must be >= 1");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(max_segments));
  for (std::int64_t n = 1; n <= max_segments; ++n) {
    out.push_back(
        expected_time_with_checkpoints(model, profile, SegmentPlan::split(profile, n), cost));
  }
  return out;
}

McEstimate monte_carlo_exec_time(const FaultModel& model, const JobProfile& profile,
                                 std::uint64_t trials, std::uint64_t seed) {
  require(trials >= 1, "trials must be >= 1");
  Rng rng(seed);
  Accumulator acc;
  for (std::uint64_t i = 0; i < trials; ++i) {
    acc.add(profile.total_time_s + lost_time(rng, model.mu, profile.total_time_s));
  }
  return acc.finish(seed);
}

McEstimate monte_carlo_checkpointed_time(const FaultModel& model, const JobProfile& profile,
                                         const SegmentPlan& plan, const CheckpointCost& cost,
                                         std::uint64_t trials, std::uint64_t seed) {
  require(trials >= 1, "trials must be >= 1");
  require(plan.segments >= 1, "segment count must be >= 1");
  Rng rng(seed);
  Accumulator acc;
  const double segment = profile.total_time_s / static_cast<double>(plan.segments);
  const double pauses = static_cast<double>(plan.segments - 1) * cost.overhead_s;
  for (std::uint64_t i = 0; i < trials; ++i) {
    double lost = 0.0;
    for (std::int64_t s = 0; s < plan.segments; ++s) lost += lost_time(rng, model.mu, segment);
    acc.add(profile.total_time_s + lost + pauses);
  }
  return acc.finish(seed);
}

}  // namespace offload::ckptmath
