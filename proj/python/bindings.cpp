// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// JSON documents cross the boundary as strings; the package wrapper turns
// them into Python objects.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>

#include "offload/ckptmath.hpp"
#include "offload/envelope.hpp"
#include "offload/errors.hpp"
#include "offload/simlab.hpp"

namespace py = pybind11;
using namespace offload;
namespace cm = offload::ckptmath;
namespace sl = offload::simlab;

namespace {

json plan_json(const cm::SegmentPlan& p) {
  return {{"segments", p.segments}, {"checkpoints", p.checkpoints}, {"interval_s", p.interval_s},
          {"capped", p.capped}};
}

json nullable(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

json run_json(const sl::RunRecord& r) {
  json nodes = json::array();
  for (const auto& n : r.nodes) {
    nodes.push_back({{"node", n.node}, {"t_total_s", n.t_total_s}, {"t_busy_s", n.t_busy_s},
                     {"energy_j", n.energy_j}});
  }
  return {{"run_id", r.run_id},
          {"config_hash", r.config_hash},
          {"seed", r.seed},
          {"mode", std::string(sl::to_string(r.mode))},
          {"mu", r.mu},
          {"T_s", r.T_s},
          {"segments", r.segments},
          {"checkpoints", r.checkpoints()},
          {"C_s", r.C_s},
          {"completed", r.completed},
          {"cutoff", r.cutoff},
          {"completion_s", nullable(r.completion_s)},
          {"faults", r.faults},
          {"scripted_kills", r.scripted_kills},
          {"checkpoints_taken", r.checkpoints_taken},
          {"exposure_s", r.exposure_s},
          {"reexecuted_s", r.reexecuted_s},
          {"result_digest", r.result_digest},
          {"expected_digest", r.expected_digest},
          {"result_ready_received", r.result_ready_received},
          {"result_ready_delivered", r.result_ready_delivered},
          {"final_status", r.final_status},
          {"nodes", nodes},
          {"energy_total_j", r.energy_total_j}};
}

json arm_json(const sl::ArmSummary& a) {
  return {{"experiment", a.experiment},     {"arm", a.arm},
          {"mode", std::string(sl::to_string(a.mode))},
          {"mu", a.mu},                     {"T_s", a.T_s},
          {"segments", a.segments},         {"C_s", a.C_s},
          {"trials", a.trials},             {"completed", a.completed},
          {"mean_completion_s", nullable(a.mean_completion_s)},
          {"stderr_s", nullable(a.stderr_s)},
          {"closed_form_s", a.closed_form_s},
          {"mean_energy_j", a.mean_energy_j}};
}

std::string experiment_json(const sl::ExperimentResult& r) {
  json runs = json::array(), arms = json::array();
  for (const auto& run : r.runs) runs.push_back(run_json(run));
  for (const auto& a : r.arms) arms.push_back(arm_json(a));
  return json{{"name", r.name}, {"arms", arms}, {"runs", runs}, {"runs_csv", sl::runs_csv(r.runs)}}
      .dump();
}

cm::SegmentPlan plan(double T, std::int64_t segments) {
  return cm::SegmentPlan::split(cm::JobProfile(T), segments);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "offload native core";

  py::exception<Error>(m, "OffloadError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object cls = py::module_::import("offload._core").attr("OffloadError");
      py::object inst = cls(e.what());
      inst.attr("code") = std::string(to_string(e.code()));
      inst.attr("exit_code") = exit_code(e.code());
      PyErr_SetObject(cls.ptr(), inst.ptr());
    }
  });

  m.def("fault_pdf", [](double mu, double t) { return cm::fault_pdf(cm::FaultModel(mu), t); });
  m.def("p_fault_before",
        [](double mu, double h) { return cm::p_fault_before(cm::FaultModel(mu), h); });
  m.def("expected_fault_time",
        [](double mu, double h) { return cm::expected_fault_time(cm::FaultModel(mu), h); });
  m.def("expected_exec_time", [](double mu, double T) {
    return cm::expected_exec_time(cm::FaultModel(mu), cm::JobProfile(T));
  });
  m.def("expected_time_with_checkpoints", [](double mu, double T, std::int64_t segments, double C) {
    return cm::expected_time_with_checkpoints(cm::FaultModel(mu), cm::JobProfile(T), plan(T, segments),
                                              cm::CheckpointCost(C));
  });
  m.def("ey_second_derivative", [](double mu, double T, std::int64_t segments, double C) {
    return cm::ey_second_derivative(cm::FaultModel(mu), cm::JobProfile(T), plan(T, segments),
                                    cm::CheckpointCost(C));
  });
  m.def("optimal_segments", [](double mu, double T, double C) {
    return plan_json(cm::optimal_segments(cm::FaultModel(mu), cm::JobProfile(T), cm::CheckpointCost(C)))
        .dump();
  });
  m.def("expected_time_table", [](double mu, double T, double C, std::int64_t max_segments) {
    return cm::expected_time_table(cm::FaultModel(mu), cm::JobProfile(T), cm::CheckpointCost(C),
                                   max_segments);
  });
  m.def(
      "monte_carlo",
      [](double mu, double T, std::uint64_t trials, std::uint64_t seed, std::int64_t segments, double C) {
        const auto e = cm::monte_carlo_checkpointed_time(cm::FaultModel(mu), cm::JobProfile(T),
                                                         plan(T, segments), cm::CheckpointCost(C),
                                                         trials, seed);
        return py::make_tuple(e.mean_s, e.stderr_s);
      },
      py::arg("mu"), py::arg("T"), py::arg("trials"), py::arg("seed"), py::arg("segments") = 1,
      py::arg("C") = 0.0);

  m.def("run_simulation", [](const std::string& config, const std::string& run_id) {
    const auto c = sl::SimConfig::from_json(json::parse(config));
    py::gil_scoped_release release;
    return run_json(sl::run_simulation(c, run_id)).dump();
  });
  m.def("run_trials", [](const std::string& config, std::uint64_t trials) {
    const auto c = sl::SimConfig::from_json(json::parse(config));
    py::gil_scoped_release release;
    return experiment_json(sl::run_trials(c, trials));
  });
  m.def("experiment_names", &sl::experiment_names);
  m.def("run_experiment", [](const std::string& name, std::uint64_t trials, std::uint64_t seed,
                             const std::string& mode) {
    sl::ExperimentOptions o;
    o.trials = trials;
    o.seed = seed;
    if (mode == "system") {
      o.mode = sl::Mode::system;
    } else if (mode != "model_faithful") {
      fail(ErrorCode::usage, "mode must be model_faithful or system");
    }
    py::gil_scoped_release release;
    return experiment_json(sl::run_experiment(name, o));
  });

  m.def("encode_envelope",
        [](const std::string& object) { return encode(envelope_from_json(json::parse(object))); });
  m.def("decode_envelope", [](const std::string& bytes) { return to_json(decode(bytes)).dump(); });
}
