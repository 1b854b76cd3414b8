// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "offload/blob.hpp"
#include "offload/ckptmath.hpp"
#include "offload/client.hpp"
#include "offload/codec.hpp"
#include "offload/orchestrator.hpp"
#include "offload/program.hpp"
#include "offload/worker.hpp"

namespace offload::simlab {

std::string_view to_string(Mode mode) {
  return mode == Mode::model_faithful ? "model_faithful" : "system";
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "NaN";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Config parsing ----------------------------------------------------------

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
  fail(ErrorCode::schema, path + ": " + what);
}

const json* field(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() || it->is_null() ? nullptr : &*it;
}

double number(const json& obj, const char* key, const std::string& path, double fallback) {
  const json* v = field(obj, key);
  if (v == nullptr) return fallback;
  if (!v->is_number()) schema_error(path + "." + key, "expected a number");
  return v->get<double>();
}

std::optional<double> opt_number(const json& obj, const char* key, const std::string& path) {
  if (field(obj, key) == nullptr) return std::nullopt;
  return number(obj, key, path, 0.0);
}

std::int64_t integer(const json& obj, const char* key, const std::string& path,
                     std::int64_t fallback) {
  const json* v = field(obj, key);
  if (v == nullptr) return fallback;
  if (!v->is_number_integer()) schema_error(path + "." + key, "expected an integer");
  return v->get<std::int64_t>();
}

std::string text(const json& obj, const char* key, const std::string& path,
                 const std::string& fallback) {
  const json* v = field(obj, key);
  if (v == nullptr) return fallback;
  if (!v->is_string()) schema_error(path + "." + key, "expected a string");
  return v->get<std::string>();
}

bool boolean(const json& obj, const char* key, const std::string& path, bool fallback) {
  const json* v = field(obj, key);
  if (v == nullptr) return fallback;
  if (!v->is_boolean()) schema_error(path + "." + key, "expected a boolean");
  return v->get<bool>();
}

void only_fields(const json& obj, const std::string& path, std::initializer_list<const char*> known) {
  if (!obj.is_object()) schema_error(path, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) ==
        known.end()) {
      schema_error(path + "." + key, "unknown field");
    }
  }
}

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) schema_error(path, what);
}

const std::vector<std::string>& script_actions() {
  static const std::vector<std::string> actions{"kill", "restart", "kill_primary",
                                                "kill_executing_worker", "kill_on_checkpoint"};
  return actions;
}

// Job derived from the config.
struct JobPlan {
  std::string spec;
  JobProgram program;
  double interval_s = 0.0;
};

JobPlan plan_job(const SimConfig& c) {
  JobPlan plan;
  if (c.program.empty()) {
    // A step length that divides the segment, close to 5 s, so that
    // checkpoints fall exactly on segment boundaries.
    const double segment = c.T_s / static_cast<double>(c.segments);
    const auto per_segment = static_cast<std::int64_t>(std::max(1.0, std::ceil(segment / 5.0 - 1e-9)));
    const double step = segment / static_cast<double>(per_segment);
    plan.spec = "busy_counter:steps=" + std::to_string(per_segment * c.segments) +
                ",step_cost=" + exact(step) + ",work=100";
  } else {
    plan.spec = c.program;
  }
  plan.program = JobProgram::parse(plan.spec);
  const double total = static_cast<double>(plan.program.total_steps) * plan.program.step_cost_s;
  if (c.segments > 1) plan.interval_s = total / static_cast<double>(c.segments);
  return plan;
}

}  // namespace

SimConfig SimConfig::from_json(const json& doc) {
  const std::string root = "$";
  only_fields(doc, root,
              {"seed", "mode", "mu", "T_s", "segments", "checkpoints", "C_s", "program",
               "orchestrators", "workers", "latency_s", "worker_heartbeat_s", "detection_timeout_s",
               "restart_delay_s", "restore_cost_s", "replica_heartbeat_s", "promotion_timeout_s",
               "max_time_s", "settle_s", "broker_journal", "energy", "script"});
  SimConfig c;
  const std::int64_t seed = integer(doc, "seed", root, 1);
  require(seed >= 0, "$.seed", "must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  const std::string mode = text(doc, "mode", root, "model_faithful");
  if (mode == "model_faithful") {
    c.mode = Mode::model_faithful;
  } else if (mode == "system") {
    c.mode = Mode::system;
  } else {
    schema_error("$.mode", "expected \"model_faithful\" or \"system\"");
  }
  c.mu = number(doc, "mu", root, c.mu);
  require(c.mu >= 0.0 && std::isfinite(c.mu), "$.mu", "must be a finite number >= 0");
  c.T_s = number(doc, "T_s", root, c.T_s);
  require(c.T_s > 0.0 && std::isfinite(c.T_s), "$.T_s", "must be > 0");
  if (field(doc, "segments") != nullptr && field(doc, "checkpoints") != nullptr) {
    schema_error("$.checkpoints", "give either segments or checkpoints");
  }
  c.segments = integer(doc, "segments", root, c.segments);
  if (field(doc, "checkpoints") != nullptr) {
    const std::int64_t k = integer(doc, "checkpoints", root, 0);
    require(k >= 0, "$.checkpoints", "must be >= 0");
    c.segments = k + 1;
  }
  require(c.segments >= 1, "$.segments", "must be >= 1");
  c.C_s = number(doc, "C_s", root, c.C_s);
  require(c.C_s >= 0.0, "$.C_s", "must be >= 0");
  c.program = text(doc, "program", root, "");
  if (!c.program.empty()) {
    try {
      JobProgram::parse(c.program);
    } catch (const Error& e) {
      schema_error("$.program", e.what());
    }
  }
  c.orchestrators = static_cast<int>(integer(doc, "orchestrators", root, c.orchestrators));
  require(c.orchestrators >= 1 && c.orchestrators <= 16, "$.orchestrators", "must be in 1..16");
  c.workers = static_cast<int>(integer(doc, "workers", root, c.workers));
  require(c.workers >= 1 && c.workers <= 64, "$.workers", "must be in 1..64");
  c.latency_s = opt_number(doc, "latency_s", root);
  c.worker_heartbeat_s = number(doc, "worker_heartbeat_s", root, c.worker_heartbeat_s);
  require(c.worker_heartbeat_s > 0.0, "$.worker_heartbeat_s", "must be > 0");
  c.detection_timeout_s = opt_number(doc, "detection_timeout_s", root);
  c.restart_delay_s = opt_number(doc, "restart_delay_s", root);
  c.restore_cost_s = opt_number(doc, "restore_cost_s", root);
  for (const char* key : {"latency_s", "detection_timeout_s", "restart_delay_s", "restore_cost_s"}) {
    if (auto v = opt_number(doc, key, root)) require(*v >= 0.0, std::string("$.") + key, "must be >= 0");
  }
  c.replica_heartbeat_s = number(doc, "replica_heartbeat_s", root, c.replica_heartbeat_s);
  require(c.replica_heartbeat_s > 0.0, "$.replica_heartbeat_s", "must be > 0");
  c.promotion_timeout_s = number(doc, "promotion_timeout_s", root, c.promotion_timeout_s);
  require(c.promotion_timeout_s > c.replica_heartbeat_s, "$.promotion_timeout_s",
          "must exceed replica_heartbeat_s");
  c.max_time_s = opt_number(doc, "max_time_s", root);
  if (c.max_time_s) require(*c.max_time_s > 0.0, "$.max_time_s", "must be > 0");
  c.settle_s = number(doc, "settle_s", root, 0.0);
  require(c.settle_s >= 0.0, "$.settle_s", "must be >= 0");
  c.broker_journal = boolean(doc, "broker_journal", root, false);
  if (const json* e = field(doc, "energy")) {
    only_fields(*e, "$.energy", {"p_idle_w", "p_active_w"});
    c.energy.p_idle_w = number(*e, "p_idle_w", "$.energy", c.energy.p_idle_w);
    c.energy.p_active_w = number(*e, "p_active_w", "$.energy", c.energy.p_active_w);
    require(c.energy.p_idle_w >= 0.0, "$.energy.p_idle_w", "must be >= 0");
    require(c.energy.p_active_w >= c.energy.p_idle_w, "$.energy.p_active_w", "must be >= p_idle_w");
  }
  if (const json* s = field(doc, "script")) {
    if (!s->is_array()) schema_error("$.script", "expected an array");
    for (std::size_t i = 0; i < s->size(); ++i) {
      const std::string path = "$.script[" + std::to_string(i) + "]";
      const json& step = (*s)[i];
      only_fields(step, path, {"action", "node", "at_s", "seq", "restart"});
      ScriptStep st;
      st.action = text(step, "action", path, "");
      const auto& actions = script_actions();
      if (std::find(actions.begin(), actions.end(), st.action) == actions.end()) {
        schema_error(path + ".action", "unknown action '" + st.action + "'");
      }
      st.node = text(step, "node", path, "");
      if ((st.action == "kill" || st.action == "restart") && st.node.empty()) {
        schema_error(path + ".node", "required for " + st.action);
      }
      st.at_s = number(step, "at_s", path, 0.0);
      require(st.at_s >= 0.0, path + ".at_s", "must be >= 0");
      const std::int64_t seq = integer(step, "seq", path, 0);
      require(seq >= 0, path + ".seq", "must be >= 0");
      st.seq = static_cast<std::uint64_t>(seq);
      if (st.action == "kill_on_checkpoint") require(st.seq >= 1, path + ".seq", "must be >= 1");
      st.restart = boolean(step, "restart", path, true);
      c.script.push_back(st);
    }
  }
  return c;
}

json SimConfig::to_json() const {
  json j{{"seed", seed},
         {"mode", std::string(to_string(mode))},
         {"mu", mu},
         {"T_s", T_s},
         {"segments", segments},
         {"C_s", C_s},
         {"orchestrators", orchestrators},
         {"workers", workers},
         {"worker_heartbeat_s", worker_heartbeat_s},
         {"replica_heartbeat_s", replica_heartbeat_s},
         {"promotion_timeout_s", promotion_timeout_s},
         {"settle_s", settle_s},
         {"broker_journal", broker_journal},
         {"energy", {{"p_idle_w", energy.p_idle_w}, {"p_active_w", energy.p_active_w}}}};
  if (!program.empty()) j["program"] = program;
  if (latency_s) j["latency_s"] = *latency_s;
  if (detection_timeout_s) j["detection_timeout_s"] = *detection_timeout_s;
  if (restart_delay_s) j["restart_delay_s"] = *restart_delay_s;
  if (restore_cost_s) j["restore_cost_s"] = *restore_cost_s;
  if (max_time_s) j["max_time_s"] = *max_time_s;
  json s = json::array();
  for (const auto& st : script) {
    s.push_back({{"action", st.action}, {"node", st.node}, {"at_s", st.at_s}, {"seq", st.seq},
                 {"restart", st.restart}});
  }
  j["script"] = s;
  return j;
}

std::string SimConfig::hash() const {
  json j = to_json();
  j.erase("seed");
  return sha256_hex(j.dump()).substr(0, 16);
}

double SimConfig::latency() const {
  if (latency_s) return *latency_s;
  return mode == Mode::model_faithful ? 0.0 : 0.001;
}

double SimConfig::detection_timeout() const {
  if (mode == Mode::model_faithful) return 0.0;
  return detection_timeout_s.value_or(3.0 * worker_heartbeat_s);
}

double SimConfig::restart_delay() const {
  if (mode == Mode::model_faithful) return 0.0;
  return restart_delay_s.value_or(10.0);
}

double SimConfig::restore_cost() const {
  if (mode == Mode::model_faithful) return 0.0;
  return restore_cost_s.value_or(1.0);
}

double SimConfig::max_time() const { return max_time_s.value_or(100.0 * T_s); }

double node_energy(double t_total_s, double t_busy_s, const EnergyModel& model) {
  return model.p_idle_w * t_total_s + (model.p_active_w - model.p_idle_w) * t_busy_s;
}

void apply_energy(RunRecord& record, const EnergyModel& model) {
  record.energy_total_j = 0.0;
  for (auto& n : record.nodes) {
    n.energy_j = node_energy(n.t_total_s, n.t_busy_s, model);
    record.energy_total_j += n.energy_j;
  }
}

// World -------------------------------------------------------------------

namespace {

constexpr std::uint64_t kStreamOrchestrator = 0x100;
constexpr std::uint64_t kStreamWorker = 0x200;
constexpr std::uint64_t kStreamFault = 0x300;
constexpr std::uint64_t kStreamClient = 0x400;
constexpr std::uint64_t kStreamBroker = 0x500;
constexpr double kWarmupLimit = 120.0;

class World {
 public:
  World(const SimConfig& config, std::string run_id);
  RunRecord run();

 private:
  struct OrchIncarnation {
    std::unique_ptr<BlobStore> store;
    std::unique_ptr<sim::BrokerHost::Channel> channel;
    std::unique_ptr<sim::SimBlobClient> blobs;
    std::unique_ptr<Rng> rng;
    std::unique_ptr<Orchestrator> orch;
  };
  struct OrchNode {
    std::string name;
    std::string endpoint;
    std::size_t index = 0;
    std::unique_ptr<sim::NodeExecutor> exec;
    std::vector<OrchIncarnation> lives;  // dead incarnations stay allocated
    bool up = false;
    Orchestrator* current() { return up ? lives.back().orch.get() : nullptr; }
  };

  struct WorkerNode;
  struct WorkerIncarnation {
    std::unique_ptr<sim::BrokerHost::Channel> channel;
    std::unique_ptr<sim::SimBlobClient> blobs;
    std::unique_ptr<Rng> rng;
    std::unique_ptr<Worker> worker;
  };

  struct WorkerNode final : ExecutionObserver {
    World* world = nullptr;
    std::size_t index = 0;
    std::string name;
    std::string saved_id;
    std::unique_ptr<sim::NodeExecutor> exec;
    std::vector<WorkerIncarnation> lives;
    bool up = false;
    std::unique_ptr<Rng> fault_rng;
    double budget = INFINITY;
    double exec_since = -1.0;
    TimerId fault_timer = 0;
    double busy_since = -1.0;
    double busy_total = 0.0;

    Worker* current() { return up ? lives.back().worker.get() : nullptr; }

    void exec_started(const std::string&) override;
    void exec_stopped(const std::string&) override;
    void step_done(const std::string&, std::int64_t) override { ++world->steps_done_; }
    void checkpoint_started(const std::string&, std::uint64_t seq) override;
    void checkpoint_sent(const std::string&, const CheckpointManifest&) override {
      ++world->checkpoints_taken_;
    }
    void busy(bool on) override;
    void result_sent(const std::string&, const std::string& digest) override {
      world->result_digest_ = digest;
    }
    void stop_exposure();
  };

  void start_orchestrator(OrchNode& node, bool initial);
  void kill_orchestrator(OrchNode& node);
  void start_worker(WorkerNode& node);
  void kill_worker(WorkerNode& node, bool poisson);
  void fault(WorkerNode& node);
  void connect_client();
  void submit();
  void schedule_script();
  void run_step(const ScriptStep& step);
  void restart_later(const std::string& node);
  Orchestrator* primary();
  bool ready();

  SimConfig config_;
  std::string run_id_;
  JobPlan plan_;
  sim::EventQueue queue_;
  sim::BrokerHost broker_;
  sim::BlobNetwork blob_net_;
  std::vector<std::unique_ptr<OrchNode>> orchs_;
  std::vector<std::unique_ptr<WorkerNode>> workers_;

  std::unique_ptr<sim::NodeExecutor> client_exec_;
  std::unique_ptr<sim::BrokerHost::Channel> client_channel_;
  std::unique_ptr<sim::SimBlobClient> client_blobs_;
  std::unique_ptr<Rng> client_rng_;
  std::set<std::size_t> armed_steps_;
  std::unique_ptr<ClientSession> client_;

  bool faults_enabled_ = false;
  double t0_ = 0.0;
  bool submitted_ = false;
  std::string job_id_;
  std::optional<double> completed_at_;
  std::uint64_t faults_ = 0;
  std::uint64_t scripted_kills_ = 0;
  std::uint64_t checkpoints_taken_ = 0;
  std::int64_t steps_done_ = 0;
  double exposure_ = 0.0;
  std::string result_digest_;
  std::uint64_t restarts_ = 0;
};

World::World(const SimConfig& config, std::string run_id)
    : config_(config),
      run_id_(std::move(run_id)),
      plan_(plan_job(config)),
      broker_(queue_, derive_seed(config.seed, kStreamBroker)),
      blob_net_(queue_) {
  broker_.set_latency(config_.latency(), 0.0);
  blob_net_.set_latency(config_.latency());
  if (config_.broker_journal) broker_.enable_journal();
}

void World::WorkerNode::exec_started(const std::string&) {
  exec_since = world->queue_.now();
  if (!world->faults_enabled_ || !std::isfinite(budget)) return;
  fault_timer = world->queue_.schedule_at(exec_since + budget, [this] { world->fault(*this); });
}

void World::WorkerNode::stop_exposure() {
  if (exec_since < 0.0) return;
  const double ran = world->queue_.now() - exec_since;
  exec_since = -1.0;
  if (world->faults_enabled_) {
    world->exposure_ += ran;
    budget -= ran;
  }
  if (fault_timer != 0) {
    world->queue_.cancel(fault_timer);
    fault_timer = 0;
  }
}

void World::WorkerNode::exec_stopped(const std::string&) { stop_exposure(); }

void World::WorkerNode::checkpoint_started(const std::string&, std::uint64_t seq) {
  const auto& script = world->config_.script;
  for (std::size_t i = 0; i < script.size(); ++i) {
    const ScriptStep& st = script[i];
    if (st.action != "kill_on_checkpoint" || st.seq != seq) continue;
    if (!st.node.empty() && st.node != name) continue;
    if (!world->armed_steps_.insert(i).second) continue;  // each step fires once
    // Dies while the state is on its way to the blob store.
    const double at = world->config_.C_s + 1.5 * world->config_.latency();
    world->queue_.schedule_at(world->queue_.now() + at, [this, restart = st.restart] {
      if (!up) return;
      ++world->scripted_kills_;
      world->kill_worker(*this, false);
      if (restart) world->restart_later(name);
    });
  }
}

void World::WorkerNode::busy(bool on) {
  const double now = world->queue_.now();
  if (on && busy_since < 0.0) {
    busy_since = now;
  } else if (!on && busy_since >= 0.0) {
    busy_total += now - std::max(busy_since, world->t0_);
    busy_since = -1.0;
  }
}

void World::start_orchestrator(OrchNode& node, bool initial) {
  node.exec->revive();
  OrchIncarnation life;
  life.store = std::make_unique<BlobStore>();
  blob_net_.attach(node.endpoint, life.store.get());
  blob_net_.set_alive(node.endpoint, true);
  life.channel = broker_.open(*node.exec);
  life.blobs = std::make_unique<sim::SimBlobClient>(blob_net_, *node.exec);
  life.rng = std::make_unique<Rng>(
      derive_seed(config_.seed, kStreamOrchestrator + node.lives.size() * 64 + node.index));
  OrchestratorOptions o;
  o.name = node.name;
  o.blob_endpoint = node.endpoint;
  o.heartbeat_interval_s = config_.replica_heartbeat_s;
  o.promotion_timeout_s = config_.promotion_timeout_s;
  o.detection_timeout_s = config_.detection_timeout();
  o.worker_heartbeat_interval_s = config_.worker_heartbeat_s;
  if (initial) {
    for (const auto& other : orchs_) o.initial_members.push_back(other->name);
    o.prefer_primary = node.name == orchs_.front()->name;
  }
  life.orch = std::make_unique<Orchestrator>(*node.exec, *life.channel, *life.blobs, *life.store,
                                             *life.rng, o);
  node.lives.push_back(std::move(life));
  node.up = true;
  try {
    node.lives.back().orch->start();
  } catch (const Error&) {
    // Broker unreachable; try again shortly.
    kill_orchestrator(node);
    restart_later(node.name);
  }
}

void World::kill_orchestrator(OrchNode& node) {
  if (!node.up) return;
  node.up = false;
  node.exec->kill();
  node.lives.back().channel->close();
  blob_net_.set_alive(node.endpoint, false);
}

void World::start_worker(WorkerNode& node) {
  node.exec->revive();
  WorkerIncarnation life;
  life.channel = broker_.open(*node.exec);
  life.blobs = std::make_unique<sim::SimBlobClient>(blob_net_, *node.exec);
  life.rng = std::make_unique<Rng>(
      derive_seed(config_.seed, kStreamWorker + node.lives.size() * 64 + node.index));
  WorkerOptions o;
  o.name = node.name;
  o.worker_id = node.saved_id;
  o.heartbeat_interval_s = config_.worker_heartbeat_s;
  o.checkpoint_interval_s = plan_.interval_s;
  o.checkpoint_cost_s = config_.C_s;
  o.restore_cost_s = config_.restore_cost();
  life.worker = std::make_unique<Worker>(*node.exec, *life.channel, *life.blobs, *life.rng, o, &node);
  life.worker->on_identity = [&node](const std::string& id) { node.saved_id = id; };
  node.lives.push_back(std::move(life));
  node.up = true;
  node.budget = faults_enabled_ ? node.fault_rng->exponential(config_.mu) : INFINITY;
  node.lives.back().worker->start();
}

void World::kill_worker(WorkerNode& node, bool poisson) {
  if (!node.up) return;
  node.stop_exposure();
  node.busy(false);
  node.up = false;
  node.exec->kill();
  node.lives.back().channel->close();
  if (poisson) ++faults_;
  if (config_.mode == Mode::model_faithful && !node.saved_id.empty()) {
    if (Orchestrator* p = primary()) p->notify_worker_failed(node.saved_id);
  }
}

void World::fault(WorkerNode& node) {
  node.fault_timer = 0;
  kill_worker(node, true);
  restart_later(node.name);
}

void World::restart_later(const std::string& name) {
  ++restarts_;
  queue_.schedule_at(queue_.now() + config_.restart_delay(), [this, name] {
    if (name == "broker") {
      broker_.restart();
      return;
    }
    for (auto& o : orchs_) {
      if (o->name == name && !o->up) start_orchestrator(*o, false);
    }
    for (auto& w : workers_) {
      if (w->name == name && !w->up) start_worker(*w);
    }
  });
}

Orchestrator* World::primary() {
  for (auto& o : orchs_) {
    if (Orchestrator* orch = o->current(); orch != nullptr && orch->is_primary()) return orch;
  }
  return nullptr;
}

void World::connect_client() {
  client_->connect([this](std::optional<Error> err) {
    if (err) client_exec_->call_after(1.0, [this] { connect_client(); });
  });
}

bool World::ready() {
  Orchestrator* p = primary();
  if (p == nullptr || !client_->connected()) return false;
  std::size_t idle = 0;
  for (const auto& [id, w] : p->store().workers()) {
    if (w.status == "idle") ++idle;
  }
  return idle == workers_.size();
}

void World::submit() {
  t0_ = queue_.now();
  submitted_ = true;
  faults_enabled_ = config_.mu > 0.0;
  for (auto& w : workers_) w->budget = w->fault_rng->exponential(config_.mu);
  client_->submit(plan_.spec, "sim", [this](std::optional<json> job, std::optional<Error>) {
    if (job) job_id_ = job->value("job_id", "");
  });
  schedule_script();
}

void World::schedule_script() {
  for (const auto& st : config_.script) {
    if (st.action == "kill_on_checkpoint") continue;  // armed by the worker observer
    queue_.schedule_at(t0_ + st.at_s, [this, st] { run_step(st); });
  }
}

void World::run_step(const ScriptStep& st) {
  std::string target = st.node;
  if (st.action == "kill_primary") {
    target.clear();
    for (auto& o : orchs_) {
      if (o->current() != nullptr && o->current()->is_primary()) target = o->name;
    }
  } else if (st.action == "kill_executing_worker") {
    target.clear();
    for (auto& w : workers_) {
      if (w->current() != nullptr && !w->current()->current_job().empty()) target = w->name;
    }
  }
  if (target.empty()) return;
  const bool kill = st.action != "restart";
  if (kill) ++scripted_kills_;
  if (target == "broker") {
    if (kill) {
      broker_.crash();
      if (st.restart) restart_later("broker");
    } else {
      broker_.restart();
    }
    return;
  }
  for (auto& o : orchs_) {
    if (o->name != target) continue;
    if (kill) {
      kill_orchestrator(*o);
      if (st.restart) restart_later(o->name);
    } else if (!o->up) {
      start_orchestrator(*o, false);
    }
  }
  for (auto& w : workers_) {
    if (w->name != target) continue;
    if (kill) {
      kill_worker(*w, false);
      if (st.restart) restart_later(w->name);
    } else if (!w->up) {
      start_worker(*w);
    }
  }
}

RunRecord World::run() {
  for (int i = 0; i < config_.orchestrators; ++i) {
    auto node = std::make_unique<OrchNode>();
    node->name = "o" + std::to_string(i + 1);
    node->endpoint = "sim://" + node->name;
    node->index = static_cast<std::size_t>(i);
    node->exec = std::make_unique<sim::NodeExecutor>(queue_);
    orchs_.push_back(std::move(node));
  }
  for (auto& o : orchs_) start_orchestrator(*o, true);
  for (int i = 0; i < config_.workers; ++i) {
    auto node = std::make_unique<WorkerNode>();
    node->world = this;
    node->index = static_cast<std::size_t>(i);
    node->name = "w" + std::to_string(i + 1);
    node->exec = std::make_unique<sim::NodeExecutor>(queue_);
    node->fault_rng = std::make_unique<Rng>(derive_seed(config_.seed, kStreamFault + node->index));
    workers_.push_back(std::move(node));
  }
  for (auto& w : workers_) start_worker(*w);

  client_exec_ = std::make_unique<sim::NodeExecutor>(queue_);
  client_channel_ = broker_.open(*client_exec_);
  client_blobs_ = std::make_unique<sim::SimBlobClient>(blob_net_, *client_exec_);
  client_rng_ = std::make_unique<Rng>(derive_seed(config_.seed, kStreamClient));
  ClientOptions co;
  co.name = "c1";
  co.username = "sim";
  client_ = std::make_unique<ClientSession>(*client_exec_, *client_channel_, *client_blobs_,
                                            *client_rng_, co);
  client_->on_result = [this](const json& n) {
    if (n.value("job_id", "") == job_id_ && !completed_at_) completed_at_ = queue_.now();
  };
  connect_client();

  RunRecord r;
  r.run_id = run_id_;
  r.config_hash = config_.hash();
  r.seed = config_.seed;
  r.mode = config_.mode;
  r.mu = config_.mu;
  r.segments = config_.segments;
  r.C_s = config_.C_s;
  r.step_cost_s = plan_.program.step_cost_s;
  r.total_steps = plan_.program.total_steps;
  r.T_s = static_cast<double>(r.total_steps) * r.step_cost_s;
  r.expected_digest = sha256_hex(run_to_completion(plan_.program));

  queue_.run(kWarmupLimit, [this] { return ready(); });
  if (!ready()) fail(ErrorCode::timeout, "simulation: system did not come up within warmup");
  submit();

  const double deadline = t0_ + config_.max_time();
  queue_.run(deadline, [this] { return completed_at_.has_value() && !job_id_.empty(); });
  if (completed_at_ && config_.settle_s > 0.0) {
    queue_.run(std::min(deadline, *completed_at_ + config_.settle_s), nullptr);
  }

  const double end = completed_at_ ? *completed_at_ : deadline;
  r.completed = completed_at_.has_value();
  r.cutoff = !r.completed;
  r.completion_s = r.completed ? *completed_at_ - t0_ : NAN;
  r.faults = faults_;
  r.scripted_kills = scripted_kills_;
  r.checkpoints_taken = checkpoints_taken_;
  for (auto& w : workers_) {
    // Close open exposure and busy intervals at the end of the window.
    if (w->exec_since >= 0.0 && faults_enabled_) exposure_ += end - w->exec_since;
    if (w->busy_since >= 0.0) w->busy_total += end - std::max(w->busy_since, t0_);
    w->busy_since = -1.0;
  }
  r.exposure_s = exposure_;
  r.reexecuted_s = static_cast<double>(std::max<std::int64_t>(0, steps_done_ - r.total_steps)) *
                   r.step_cost_s;
  r.result_digest = result_digest_;
  r.result_ready_received = client_->result_ready_received();
  r.result_ready_delivered = client_->results_ready().size();
  if (Orchestrator* p = primary(); p != nullptr && !job_id_.empty()) {
    if (const JobRecord* job = p->store().job(job_id_)) r.final_status = job->status;
  }
  r.events = queue_.executed();
  const double window = end - t0_;
  for (auto& o : orchs_) r.nodes.push_back(NodeUsage{o->name, window, 0.0, 0.0});
  for (auto& w : workers_) r.nodes.push_back(NodeUsage{w->name, window, w->busy_total, 0.0});
  apply_energy(r, config_.energy);
  return r;
}

}  // namespace

RunRecord run_simulation(const SimConfig& config, const std::string& run_id) {
  World world(config, run_id);
  return world.run();
}

// Experiments -------------------------------------------------------------

namespace {

struct Arm {
  std::string name;
  SimConfig config;
  std::uint64_t trials;
};

ArmSummary summarize(const std::string& experiment, const Arm& arm,
                     const std::vector<RunRecord>& runs) {
  ArmSummary s;
  s.experiment = experiment;
  s.arm = arm.name;
  s.mode = arm.config.mode;
  s.mu = arm.config.mu;
  s.T_s = runs.empty() ? arm.config.T_s : runs.front().T_s;
  s.segments = arm.config.segments;
  s.C_s = arm.config.C_s;
  s.trials = runs.size();
  double sum = 0.0, sum2 = 0.0, energy = 0.0;
  for (const auto& r : runs) {
    energy += r.energy_total_j;
    if (!r.completed) continue;
    ++s.completed;
    sum += r.completion_s;
    sum2 += r.completion_s * r.completion_s;
  }
  if (s.completed > 0) {
    const auto n = static_cast<double>(s.completed);
    s.mean_completion_s = sum / n;
    const double var = s.completed > 1 ? std::max(0.0, (sum2 - sum * sum / n) / (n - 1.0)) : 0.0;
    s.stderr_s = std::sqrt(var / n);
  } else {
    s.mean_completion_s = NAN;
  }
  if (!runs.empty()) s.mean_energy_j = energy / static_cast<double>(runs.size());
  s.closed_form_s = ckptmath::expected_time_with_checkpoints(
      ckptmath::FaultModel(s.mu), ckptmath::JobProfile(s.T_s),
      ckptmath::SegmentPlan::split(ckptmath::JobProfile(s.T_s), s.segments),
      ckptmath::CheckpointCost(s.C_s));
  return s;
}

void run_arm(const std::string& experiment, const Arm& arm, const ExperimentOptions& options,
             ExperimentResult& out) {
  std::vector<RunRecord> runs;
  auto extend = [&](std::uint64_t upto) {
    for (std::uint64_t i = runs.size(); i < upto; ++i) {
      SimConfig c = arm.config;
      c.seed = derive_seed(arm.config.seed, i);
      runs.push_back(run_simulation(c, experiment + "-" + arm.name + "-" + std::to_string(i)));
    }
  };
  extend(arm.trials);
  // Sequential sizing: keep sampling while the mean is not yet pinned down.
  while (options.target_rel_stderr > 0.0 && arm.config.mu > 0.0 && runs.size() < options.max_trials) {
    const ArmSummary s = summarize(experiment, arm, runs);
    if (s.completed != runs.size() || s.completed < 2) break;
    const double rel = s.stderr_s / s.mean_completion_s;
    if (rel <= options.target_rel_stderr) break;
    const double grow = (rel / options.target_rel_stderr) * (rel / options.target_rel_stderr);
    const auto want = static_cast<std::uint64_t>(std::ceil(static_cast<double>(runs.size()) * grow * 1.05));
    extend(std::min(options.max_trials, std::max<std::uint64_t>(want, runs.size() + 1)));
  }
  out.arms.push_back(summarize(experiment, arm, runs));
  for (auto& r : runs) out.runs.push_back(std::move(r));
}

SimConfig base_config(const ExperimentOptions& options, double mu, std::int64_t segments) {
  SimConfig c;
  c.mode = options.mode;
  c.mu = mu;
  c.T_s = 300.0;
  c.C_s = 6.0;
  c.segments = segments;
  // No orchestrator fails in these arms; slow replica heartbeats only cut
  // simulation cost.
  c.replica_heartbeat_s = 10.0;
  c.promotion_timeout_s = 30.0;
  return c;
}

}  // namespace

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"checkpoint_overhead", "mu_sweep",
                                              "optimal_frequency"};
  return names;
}

ExperimentResult run_experiment(const std::string& name, const ExperimentOptions& options) {
  ExperimentResult out;
  out.name = name;
  std::vector<Arm> arms;
  auto arm = [&](std::string arm_name, double mu, std::int64_t segments, std::uint64_t trials,
                 std::uint64_t stream) {
    SimConfig c = base_config(options, mu, segments);
    c.seed = derive_seed(options.seed, stream);
    arms.push_back(Arm{std::move(arm_name), c, options.trials > 0 ? options.trials : trials});
  };
  if (name == "checkpoint_overhead") {
    arm("0_checkpoints", 0.0, 1, 1, 0);
    arm("15_checkpoints", 0.0, 16, 1, 1);
  } else if (name == "mu_sweep") {
    const double mus[] = {0.0, 0.001, 0.003, 0.01, 0.03, 0.131};
    std::uint64_t stream = 0;
    for (double mu : mus) arm("mu_" + fmt(mu), mu, 1, mu == 0.0 ? 1 : 20, stream++);
  } else if (name == "optimal_frequency") {
    arm("0_checkpoints", 0.003, 1, 2000, 0);
    arm("5_checkpoints_every_50s", 0.003, 6, 2000, 1);
    arm("15_checkpoints", 0.003, 16, 2000, 2);
  } else {
    std::string known;
    for (const auto& n : experiment_names()) known += (known.empty() ? "" : ", ") + n;
    fail(ErrorCode::usage, "unknown experiment '" + name + "' (registered: " + known + ")");
  }
  ExperimentOptions opts = options;
  if (name == "mu_sweep") opts.target_rel_stderr = 0.0;  // divergent arms never settle
  for (const auto& a : arms) run_arm(name, a, opts, out);
  return out;
}

ExperimentResult run_trials(const SimConfig& config, std::uint64_t trials) {
  ExperimentResult out;
  out.name = "run";
  ExperimentOptions opts;
  opts.target_rel_stderr = 0.0;
  run_arm("run", Arm{"config", config, std::max<std::uint64_t>(1, trials)}, opts, out);
  return out;
}

// Output ------------------------------------------------------------------

std::string runs_csv(const std::vector<RunRecord>& runs) {
  std::ostringstream out;
  out << "run_id,mode,mu,T_s,segments,checkpoints,C_s,completion_s,faults,checkpoints_taken,"
         "energy_total_j,seed\n";
  for (const auto& r : runs) {
    out << r.run_id << ',' << to_string(r.mode) << ',' << fmt(r.mu) << ',' << fmt(r.T_s) << ','
        << r.segments << ',' << r.checkpoints() << ',' << fmt(r.C_s) << ','
        << fmt(r.completed ? r.completion_s : NAN) << ',' << r.faults << ','
        << r.checkpoints_taken << ',' << fmt(r.energy_total_j) << ',' << r.seed << '\n';
  }
  return out.str();
}

std::string summary_csv(const std::vector<ArmSummary>& arms) {
  std::ostringstream out;
  out << "experiment,arm,mode,mu,T_s,segments,checkpoints,C_s,trials,completed,mean_completion_s,"
         "stderr_s,closed_form_s,mean_energy_j\n";
  for (const auto& a : arms) {
    out << a.experiment << ',' << a.arm << ',' << to_string(a.mode) << ',' << fmt(a.mu) << ','
        << fmt(a.T_s) << ',' << a.segments << ',' << a.segments - 1 << ',' << fmt(a.C_s) << ','
        << a.trials << ',' << a.completed << ',' << fmt(a.mean_completion_s) << ','
        << fmt(a.stderr_s) << ',' << fmt(a.closed_form_s) << ',' << fmt(a.mean_energy_j) << '\n';
  }
  return out.str();
}

std::string summary_dat(const std::vector<ArmSummary>& arms) {
  std::ostringstream out;
  out << "# index arm mu segments checkpoints trials completed mean_completion_s stderr_s "
         "closed_form_s mean_energy_j\n";
  for (std::size_t i = 0; i < arms.size(); ++i) {
    const auto& a = arms[i];
    out << i << " \"" << a.arm << "\" " << fmt(a.mu) << ' ' << a.segments << ' ' << a.segments - 1
        << ' ' << a.trials << ' ' << a.completed << ' ' << fmt(a.mean_completion_s) << ' '
        << fmt(a.stderr_s) << ' ' << fmt(a.closed_form_s) << ' ' << fmt(a.mean_energy_j) << '\n';
  }
  return out.str();
}

std::string plot_script(const std::string& name) {
  std::ostringstream out;
  out << "# gnuplot -p " << name << ".gp\n"
      << "set terminal pngcairo size 900,600\n"
      << "set output '" << name << ".png'\n"
      << "set datafile missing 'NaN'\n"
      << "set style fill solid 0.4\n"
      << "set boxwidth 0.6\n"
      << "set ylabel 'completion time (s)'\n"
      << "set title '" << name << "'\n";
  if (name == "mu_sweep") {
    out << "set xlabel 'arm'\nset logscale y\n";
  }
  out << "plot '" << name << ".dat' using 1:8:xtic(2) with boxes title 'simulated mean', \\\n"
      << "     '' using 1:8:9 with yerrorbars notitle, \\\n"
      << "     '' using 1:10 with points pt 7 ps 1.5 title 'closed form'\n";
  return out.str();
}

void write_outputs(const ExperimentResult& result, const std::string& dir, bool with_plot) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create '" + dir + "': " + ec.message());
  auto write = [&](const std::string& file, const std::string& data) {
    const fs::path path = fs::path(dir) / file;
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorCode::io, "cannot write '" + path.string() + "'");
    f << data;
  };
  write(result.name + ".csv", runs_csv(result.runs));
  write(result.name + "_summary.csv", summary_csv(result.arms));
  write(result.name + ".dat", summary_dat(result.arms));
  if (with_plot) write(result.name + ".gp", plot_script(result.name));
}

}  // namespace offload::simlab
