// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "offload/ckptmath.hpp"
#include "offload/errors.hpp"
#include "offload/rng.hpp"

using namespace offload;
using namespace offload::ckptmath;
using Catch::Approx;

namespace {

// Composite Simpson rule; test-only oracle for the integral definitions.
double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2 == 1) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return s * h / 3.0;
}

double ey(double mu, double t, std::int64_t n, double c) {
  const JobProfile p(t);
  return expected_time_with_checkpoints(FaultModel(mu), p, SegmentPlan::split(p, n),
                                        CheckpointCost(c));
}

// Exhaustive argmin over [1, 1000]; the window grows only if the minimum sits
// on its upper edge (tiny C with large mu*T).
std::int64_t brute_argmin(double mu, double t, double c) {
  std::int64_t hi = 1000;
  for (;;) {
    std::int64_t best = 1;
    double best_time = ey(mu, t, 1, c);
    for (std::int64_t n = 2; n <= hi; ++n) {
      const double v = ey(mu, t, n, c);
      if (v < best_time) {
        best = n;
        best_time = v;
      }
    }
    if (best < hi || hi >= kMaxSegments) return best;
    hi = std::min<std::int64_t>(hi * 10, kMaxSegments);
  }
}

}  // namespace

// Expected values below were computed with 30-digit mpmath evaluation of the
// closed forms and frozen here.
TEST_CASE("fault_pdf", "[ckptmath]") {
  CHECK(fault_pdf(FaultModel(1.0), 0.0) == 1.0);
  CHECK(fault_pdf(FaultModel(0.003), 0.0) == 0.003);
  CHECK(fault_pdf(FaultModel(0.003), 300.0) == Approx(0.00121970897922179733).epsilon(1e-12));
  CHECK_THROWS_AS(fault_pdf(FaultModel(0.003), -1.0), Error);
}

TEST_CASE("fault_pdf integrates to one", "[ckptmath][property]") {
  for (double mu : {1e-4, 0.003, 0.131, 2.0}) {
    const FaultModel m(mu);
    const double upper = 10.0 / mu * std::log(1e12);
    // Split at 50/mu so the steep head gets its own panel.
    const double head = std::min(upper, 50.0 / mu);
    auto f = [&](double t) { return fault_pdf(m, t); };
    const double total = simpson(f, 0.0, head, 200000) + simpson(f, head, upper, 2000);
    CHECK(total >= 1.0 - 1e-9);
    CHECK(total <= 1.0 + 1e-9);
  }
}

TEST_CASE("p_fault_before", "[ckptmath]") {
  CHECK(p_fault_before(FaultModel(0.003), 0.0) == 0.0);
  CHECK(p_fault_before(FaultModel(0.7), 0.0) == 0.0);
  CHECK(p_fault_before(FaultModel(0.003), 300.0) == Approx(0.593430340259400888).epsilon(1e-12));
  CHECK(p_fault_before(FaultModel(0.0), 300.0) == 0.0);
  CHECK(p_fault_before(FaultModel(1e-15), 300.0) == Approx(3e-13).epsilon(1e-6));
  CHECK_THROWS_AS(p_fault_before(FaultModel(0.003), -1.0), Error);

  // Monotone in T and mu, bounded by [0, 1].
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const double mu = rng.uniform(0.0, 0.2);
    const double t = rng.uniform(0.0, 1000.0);
    const double p = p_fault_before(FaultModel(mu), t);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    CHECK(p_fault_before(FaultModel(mu), t + 1.0) >= p);
    CHECK(p_fault_before(FaultModel(mu + 0.01), t) >= p);
  }
}

TEST_CASE("expected_fault_time", "[ckptmath]") {
  CHECK(expected_fault_time(FaultModel(0.003), 300.0) ==
        Approx(127.798008211830971844).epsilon(1e-12));
  // Cross-check against quadrature of t p(t) / P_F over [0, T].
  const FaultModel m(0.003);
  const double integral =
      simpson([&](double t) { return t * fault_pdf(m, t); }, 0.0, 300.0, 20000) /
      p_fault_before(m, 300.0);
  CHECK(expected_fault_time(m, 300.0) == Approx(integral).epsilon(1e-10));

  CHECK(expected_fault_time(FaultModel(0.003), 1e6) == Approx(1.0 / 0.003).epsilon(1e-12));
  CHECK(expected_fault_time(FaultModel(1e-15), 300.0) == Approx(150.0).epsilon(1e-12));
  CHECK(expected_fault_time(FaultModel(0.0), 300.0) == 150.0);
  CHECK_THROWS_AS(expected_fault_time(FaultModel(0.003), 0.0), Error);
}

TEST_CASE("expected_fault_time stays inside (0, min(T, 1/mu))", "[ckptmath][property]") {
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    const double mu = std::exp(rng.uniform(std::log(1e-9), std::log(10.0)));
    const double t = std::exp(rng.uniform(std::log(1e-3), std::log(1e5)));
    const double tf = expected_fault_time(FaultModel(mu), t);
    CHECK(tf > 0.0);
    CHECK(tf < std::min(t, 1.0 / mu) * (1.0 + 1e-12));
  }
}

TEST_CASE("expected_exec_time", "[ckptmath]") {
  CHECK(expected_exec_time(FaultModel(0.0), JobProfile(300.0)) == 300.0);
  CHECK(expected_exec_time(FaultModel(1e-16), JobProfile(300.0)) == Approx(300.0).epsilon(1e-12));
  CHECK(expected_exec_time(FaultModel(0.003), JobProfile(300.0)) ==
        Approx(486.534370385649887933).epsilon(1e-12));
  CHECK(expected_exec_time(FaultModel(0.01), JobProfile(100.0)) ==
        Approx(171.828182845904525617).epsilon(1e-12));

  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double mu = rng.uniform(0.0, 0.05);
    const double t = rng.uniform(1.0, 3600.0);
    CHECK(expected_exec_time(FaultModel(mu), JobProfile(t)) >= t);
  }
}

TEST_CASE("expected_time_with_checkpoints", "[ckptmath]") {
  CHECK(ey(0.003, 300.0, 1, 6.0) == Approx(486.534370385649887933).epsilon(1e-12));
  CHECK(ey(0.003, 300.0, 5, 6.0) == Approx(352.695605203016941461).epsilon(1e-12));
  CHECK(ey(0.003, 300.0, 6, 6.0) == Approx(353.668485456566245233).epsilon(1e-12));
  CHECK(ey(0.003, 300.0, 16, 6.0) == Approx(398.597953121212554761).epsilon(1e-12));

  // With free checkpoints E_Y decreases towards T.
  double prev = ey(0.01, 300.0, 1, 0.0);
  for (std::int64_t n = 2; n < 200; ++n) {
    const double v = ey(0.01, 300.0, n, 0.0);
    CHECK(v <= prev);
    CHECK(v >= 300.0);
    prev = v;
  }
}

TEST_CASE("ey_second_derivative", "[ckptmath]") {
  const JobProfile p(300.0);
  const auto plan = SegmentPlan::split(p, 6);
  CHECK(ey_second_derivative(FaultModel(0.003), p, plan, CheckpointCost(6.0)) ==
        Approx(1.45229280341035390327).epsilon(1e-12));
  CHECK(ey_second_derivative(FaultModel(0.0), p, plan, CheckpointCost(6.0)) == 0.0);

  Rng rng(9);
  for (int i = 0; i < 500; ++i) {
    const JobProfile q(rng.uniform(1.0, 3600.0));
    const auto pl = SegmentPlan::split(q, 1 + static_cast<std::int64_t>(rng.below(500)));
    CHECK(ey_second_derivative(FaultModel(rng.uniform(1e-6, 0.05)), q, pl, CheckpointCost(1.0)) >
          0.0);
  }
  // Agrees with a central finite difference of E_Y in N.
  const double h = 1e-3;
  auto ey_real = [](double n) { return n * std::expm1(0.003 * 300.0 / n) / 0.003 + (n - 1) * 6.0; };
  const double fd = (ey_real(6 + h) - 2 * ey_real(6) + ey_real(6 - h)) / (h * h);
  CHECK(fd == Approx(1.45229280341035390327).epsilon(1e-4));
}

TEST_CASE("E_Y is discretely convex", "[ckptmath][property]") {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const double mu = rng.uniform(1e-5, 0.05);
    const double t = rng.uniform(10.0, 3600.0);
    const double c = rng.uniform(0.0, 60.0);
    for (std::int64_t n = 2; n <= 60; ++n) {
      CHECK(ey(mu, t, n + 1, c) - 2 * ey(mu, t, n, c) + ey(mu, t, n - 1, c) >= -1e-9);
    }
  }
}

TEST_CASE("optimal_segments", "[ckptmath]") {
  const JobProfile p(300.0);
  auto plan = optimal_segments(FaultModel(0.0), p, CheckpointCost(6.0));
  CHECK(plan.segments == 1);
  CHECK(plan.checkpoints == 0);

  plan = optimal_segments(FaultModel(1e-15), p, CheckpointCost(6.0));
  CHECK(plan.segments == 1);

  plan = optimal_segments(FaultModel(0.003), p, CheckpointCost(1e9));
  CHECK(plan.segments == 1);

  plan = optimal_segments(FaultModel(0.003), p, CheckpointCost(6.0));
  CHECK(plan.segments == 5);
  CHECK(plan.checkpoints == 4);
  CHECK(plan.interval_s == 60.0);
  CHECK(expected_time_with_checkpoints(FaultModel(0.003), p, plan, CheckpointCost(6.0)) ==
        Approx(352.6956052030169).epsilon(1e-12));
  CHECK_FALSE(plan.capped);

  plan = optimal_segments(FaultModel(0.003), p, CheckpointCost(0.0));
  CHECK(plan.capped);
  CHECK(plan.segments == kMaxSegments);
}

TEST_CASE("optimal_segments equals exhaustive argmin", "[ckptmath][property]") {
  Rng rng(2024);
  for (int i = 0; i < 200; ++i) {
    const double mu = rng.uniform(1e-5, 0.05);
    const double t = rng.uniform(10.0, 3600.0);
    const double c = rng.uniform(0.0, 60.0);
    const auto plan = optimal_segments(FaultModel(mu), JobProfile(t), CheckpointCost(c));
    INFO("mu=" << mu << " T=" << t << " C=" << c);
    CHECK(plan.segments == brute_argmin(mu, t, c));
  }
}

TEST_CASE("monte_carlo_exec_time", "[ckptmath][mc]") {
  const auto est = monte_carlo_exec_time(FaultModel(0.003), JobProfile(300.0), 200000, 42);
  CHECK(std::abs(est.mean_s - 486.534370385649887933) <= 0.02 * 486.534370385649887933);
  CHECK(std::abs(est.mean_s - 486.534370385649887933) <= 3.0 * est.stderr_s);
  CHECK(est.trials == 200000);
  CHECK(est.seed == 42);

  const auto zero = monte_carlo_exec_time(FaultModel(0.0), JobProfile(300.0), 1000, 1);
  CHECK(zero.mean_s == 300.0);
  CHECK(zero.stderr_s == 0.0);

  const auto a = monte_carlo_exec_time(FaultModel(0.01), JobProfile(100.0), 5000, 99);
  const auto b = monte_carlo_exec_time(FaultModel(0.01), JobProfile(100.0), 5000, 99);
  CHECK(a.mean_s == b.mean_s);
  CHECK(a.stderr_s == b.stderr_s);
}

TEST_CASE("monte_carlo_checkpointed_time", "[ckptmath][mc]") {
  const JobProfile p(300.0);
  const auto est = monte_carlo_checkpointed_time(FaultModel(0.003), p, SegmentPlan::split(p, 6),
                                                 CheckpointCost(6.0), 200000, 7);
  CHECK(std::abs(est.mean_s - 353.668485456566245233) <= 0.02 * 353.668485456566245233);

  // One segment walks the same random stream as the restart model.
  const auto one = monte_carlo_checkpointed_time(FaultModel(0.003), p, SegmentPlan::split(p, 1),
                                                 CheckpointCost(6.0), 10000, 5);
  const auto ref = monte_carlo_exec_time(FaultModel(0.003), p, 10000, 5);
  CHECK(one.mean_s == ref.mean_s);
  CHECK(one.stderr_s == ref.stderr_s);

  const JobProfile q(100.0);
  const auto none = monte_carlo_checkpointed_time(FaultModel(0.0), q, SegmentPlan::split(q, 6),
                                                  CheckpointCost(6.0), 100, 3);
  CHECK(none.mean_s == 130.0);
  CHECK(none.stderr_s == 0.0);
}

TEST_CASE("Monte Carlo agrees with closed forms on a grid", "[ckptmath][mc][property]") {
  std::uint64_t seed = 100;
  for (double mu : {0.001, 0.003, 0.01}) {
    for (double t : {100.0, 300.0}) {
      for (std::int64_t n : {1, 2, 6, 16}) {
        for (double c : {0.0, 6.0}) {
          const JobProfile p(t);
          const auto plan = SegmentPlan::split(p, n);
          const auto est = monte_carlo_checkpointed_time(FaultModel(mu), p, plan,
                                                         CheckpointCost(c), 20000, ++seed);
          const double exact =
              expected_time_with_checkpoints(FaultModel(mu), p, plan, CheckpointCost(c));
          INFO("mu=" << mu << " T=" << t << " N=" << n << " C=" << c);
          CHECK(std::abs(est.mean_s - exact) <= 3.0 * est.stderr_s + 1e-9);
        }
      }
    }
  }
}

TEST_CASE("domain errors", "[ckptmath]") {
  CHECK_THROWS_AS(FaultModel(-1.0), Error);
  CHECK_THROWS_AS(FaultModel(NAN), Error);
  CHECK_THROWS_AS(JobProfile(0.0), Error);
  CHECK_THROWS_AS(CheckpointCost(-0.5), Error);
  CHECK_THROWS_AS(SegmentPlan::split(JobProfile(1.0), 0), Error);
}
