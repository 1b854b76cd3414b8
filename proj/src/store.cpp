// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/store.hpp"

#include <algorithm>

#include "offload/codec.hpp"
#include "offload/program.hpp"

namespace offload {

namespace {

ApplyResult rejected(ErrorCode code, std::string message) {
  ApplyResult r;
  r.ok = false;
  r.code = code;
  r.message = std::move(message);
  return r;
}

ApplyResult accepted(json data = json::object()) {
  ApplyResult r;
  r.data = std::move(data);
  return r;
}

std::string str(const json& m, const char* key) {
  auto it = m.find(key);
  if (it == m.end() || !it->is_string()) {
    fail(ErrorCode::schema, std::string("mutation field '") + key + "' missing or not a string");
  }
  return it->get<std::string>();
}

ErrorCode code_from_string(std::string_view s) {
  for (ErrorCode c : {ErrorCode::domain, ErrorCode::usage, ErrorCode::not_found, ErrorCode::conflict,
                      ErrorCode::protocol, ErrorCode::parse, ErrorCode::schema, ErrorCode::session,
                      ErrorCode::authorization, ErrorCode::invalid_state, ErrorCode::timeout,
                      ErrorCode::io}) {
    if (to_string(c) == s) return c;
  }
  return ErrorCode::invalid_state;
}

}  // namespace

bool transition_allowed(std::string_view from, std::string_view to) {
  using namespace job_status;
  if (from == uploading) return to == queued || to == failed;
  if (from == queued) return to == running || to == canceled;
  if (from == running) return to == queued || to == completed || to == canceled || to == failed;
  return false;
}

json CheckpointManifest::to_json() const {
  return {{"job_id", job_id},       {"worker_id", worker_id},
          {"seq", seq},             {"created_at", created_at},
          {"step_counter", step_counter}, {"state_ref", state_ref},
          {"digest", digest}};
}

CheckpointManifest CheckpointManifest::from_json(const json& j) {
  try {
    CheckpointManifest m;
    m.job_id = j.at("job_id").get<std::string>();
    m.worker_id = j.at("worker_id").get<std::string>();
    m.seq = j.at("seq").get<std::uint64_t>();
    m.created_at = j.at("created_at").get<double>();
    m.step_counter = j.at("step_counter").get<std::int64_t>();
    m.state_ref = j.at("state_ref").get<std::string>();
    m.digest = j.at("digest").get<std::string>();
    return m;
  } catch (const json::exception& e) {
    fail(ErrorCode::schema, std::string("checkpoint manifest: ") + e.what());
  }
}

json JobRecord::to_json() const {
  return {{"job_id", job_id},
          {"owner", owner},
          {"name", name},
          {"program", program},
          {"total_steps", total_steps},
          {"status", status},
          {"assigned_worker", assigned_worker},
          {"result_ref", result_ref},
          {"input_ref", input_ref},
          {"queued_at", queued_at},
          {"assignments", assignments},
          {"notified", notified}};
}

json ApplyResult::to_json() const {
  json j = {{"ok", ok}, {"data", data}};
  if (!ok) {
    j["code"] = std::string(to_string(code));
    j["message"] = message;
  }
  return j;
}

ApplyResult ApplyResult::from_json(const json& j) {
  ApplyResult r;
  r.ok = j.at("ok").get<bool>();
  r.data = j.at("data");
  if (!r.ok) {
    r.code = code_from_string(j.at("code").get<std::string>());
    r.message = j.at("message").get<std::string>();
  }
  return r;
}

ApplyResult Store::apply(const json& mutation) {
  ++applied_;
  if (!mutation.is_object()) return rejected(ErrorCode::schema, "mutation is not an object");
  std::string request_id;
  if (auto it = mutation.find("request_id"); it != mutation.end() && it->is_string()) {
    request_id = it->get<std::string>();
    if (auto seen = requests_.find(request_id); seen != requests_.end()) {
      return ApplyResult::from_json(seen->second);
    }
  }
  ApplyResult r;
  try {
    r = apply_op(str(mutation, "op"), mutation);
  } catch (const Error& e) {
    r = rejected(e.code(), e.what());
  }
  if (!request_id.empty()) requests_[request_id] = r.to_json();
  return r;
}

JobRecord& Store::job_or_throw(const std::string& id) {
  auto it = jobs_.find(id);
  if (it == jobs_.end()) fail(ErrorCode::not_found, "unknown job '" + id + "'");
  return it->second;
}

void Store::requeue(JobRecord& job) {
  job.status = std::string(job_status::queued);
  job.assigned_worker.clear();
  job.queued_at = applied_;
}

ApplyResult Store::apply_op(const std::string& op, const json& m) {
  using namespace job_status;
  if (op == "register_client") {
    const std::string username = str(m, "username");
    if (auto it = usernames_.find(username); it != usernames_.end()) {
      return accepted({{"client_id", it->second}, {"existing", true}});
    }
    const std::string id = str(m, "client_id");
    if (clients_.contains(id)) return rejected(ErrorCode::conflict, "client id already taken");
    clients_[id] = username;
    usernames_[username] = id;
    return accepted({{"client_id", id}, {"existing", false}});
  }
  if (op == "register_worker") {
    const std::string id = str(m, "worker_id");
    if (!workers_.contains(id)) workers_[id] = WorkerRecord{"registered", "", 0, 0};
    return accepted({{"worker_id", id}});
  }
  if (op == "worker_connect") {
    const std::string id = str(m, "worker_id");
    WorkerRecord& w = workers_[id];
    json data = {{"worker_id", id}};
    if (w.status == "busy" && !w.job.empty()) {
      auto it = jobs_.find(w.job);
      if (it != jobs_.end() && it->second.status == running && it->second.assigned_worker == id) {
        requeue(it->second);
        data["requeued"] = w.job;
      }
    }
    w.status = "idle";
    w.job.clear();
    w.idle_since = applied_;
    ++w.epoch;
    data["epoch"] = w.epoch;
    return accepted(std::move(data));
  }
  if (op == "worker_failed") {
    const std::string id = str(m, "worker_id");
    auto it = workers_.find(id);
    if (it == workers_.end()) return rejected(ErrorCode::not_found, "unknown worker '" + id + "'");
    WorkerRecord& w = it->second;
    if (w.status == "dead" || w.epoch != m.at("epoch").get<std::uint64_t>()) {
      return rejected(ErrorCode::invalid_state, "stale failure report for worker '" + id + "'");
    }
    json data = {{"worker_id", id}};
    if (w.status == "busy" && !w.job.empty()) {
      auto job = jobs_.find(w.job);
      if (job != jobs_.end() && job->second.status == running && job->second.assigned_worker == id) {
        requeue(job->second);
        data["requeued"] = w.job;
      }
    }
    w.status = "dead";
    w.job.clear();
    return accepted(std::move(data));
  }
  if (op == "create_job") {
    const std::string owner = str(m, "owner");
    if (!clients_.contains(owner)) return rejected(ErrorCode::session, "unknown client '" + owner + "'");
    const std::string id = str(m, "job_id");
    if (jobs_.contains(id)) return rejected(ErrorCode::conflict, "job id already taken");
    JobRecord job;
    job.job_id = id;
    job.owner = owner;
    job.name = str(m, "name");
    job.status = std::string(uploading);
    jobs_[id] = std::move(job);
    return accepted({{"job_id", id}});
  }
  if (op == "upload_completed") {
    JobRecord& job = job_or_throw(str(m, "job_id"));
    if (job.status != uploading) return accepted({{"job_id", job.job_id}, {"status", job.status}});
    try {
      const JobProgram program = JobProgram::parse(str(m, "program"));
      job.program = program.spec();
      job.total_steps = program.total_steps;
      job.input_ref = str(m, "input_ref");
      requeue(job);
    } catch (const Error& e) {
      job.status = std::string(failed);
      return rejected(e.code(), e.what());
    }
    return accepted({{"job_id", job.job_id}, {"status", job.status}});
  }
  if (op == "assign") {
    JobRecord& job = job_or_throw(str(m, "job_id"));
    const std::string wid = str(m, "worker_id");
    auto w = workers_.find(wid);
    if (job.status != queued || w == workers_.end() || w->second.status != "idle") {
      return rejected(ErrorCode::invalid_state, "assignment no longer possible");
    }
    job.status = std::string(running);
    job.assigned_worker = wid;
    ++job.assignments;
    w->second.status = "busy";
    w->second.job = job.job_id;
    return accepted({{"job_id", job.job_id}, {"worker_id", wid}, {"attempt", job.assignments}});
  }
  if (op == "checkpoint") {
    const CheckpointManifest cm = CheckpointManifest::from_json(m.at("manifest"));
    JobRecord& job = job_or_throw(cm.job_id);
    if (job.status != running || job.assigned_worker != cm.worker_id) {
      return rejected(ErrorCode::invalid_state, "stale checkpoint for job '" + cm.job_id + "'");
    }
    auto& list = manifests_[cm.job_id];
    if (!list.empty() && (cm.seq <= list.back().seq || cm.step_counter < list.back().step_counter)) {
      return rejected(ErrorCode::invalid_state, "checkpoint seq not increasing");
    }
    list.push_back(cm);
    json evicted = json::array();
    while (list.size() > kRetainedCheckpoints) {
      evicted.push_back(list.front().state_ref);
      list.erase(list.begin());
    }
    return accepted({{"seq", cm.seq}, {"evicted", evicted}});
  }
  if (op == "job_result") {
    JobRecord& job = job_or_throw(str(m, "job_id"));
    const std::string wid = str(m, "worker_id");
    auto release = [&](const std::string& id) {
      auto w = workers_.find(id);
      if (w != workers_.end() && w->second.status == "busy" && w->second.job == job.job_id) {
        w->second.status = "idle";
        w->second.job.clear();
        w->second.idle_since = applied_;
      }
    };
    if (job.status == completed) return accepted({{"duplicate", true}});
    if (job.status == canceled) {
      orphans_[job.job_id] = str(m, "result_ref");
      release(wid);
      return accepted({{"orphan", true}});
    }
    if (job.status != running) {
      return rejected(ErrorCode::invalid_state, "result for job in status " + job.status);
    }
    release(job.assigned_worker);
    release(wid);
    job.status = std::string(completed);
    job.result_ref = str(m, "result_ref");
    job.assigned_worker.clear();
    manifests_.erase(job.job_id);
    return accepted({{"completed", true}});
  }
  if (op == "job_failed") {
    JobRecord& job = job_or_throw(str(m, "job_id"));
    const std::string wid = str(m, "worker_id");
    if (job.status != running || job.assigned_worker != wid) {
      return rejected(ErrorCode::invalid_state, "failure report for job not running on worker");
    }
    manifests_.erase(job.job_id);
    requeue(job);
    auto w = workers_.find(wid);
    if (w != workers_.end() && w->second.status == "busy") {
      w->second.status = "idle";
      w->second.job.clear();
      w->second.idle_since = applied_;
    }
    return accepted({{"restart_from_zero", true}});
  }
  if (op == "requeue") {
    JobRecord& job = job_or_throw(str(m, "job_id"));
    const std::string wid = str(m, "worker_id");
    if (job.status != running || job.assigned_worker != wid) {
      return rejected(ErrorCode::invalid_state, "job not running on worker");
    }
    requeue(job);
    auto w = workers_.find(wid);
    if (w != workers_.end() && w->second.job == job.job_id) {
      w->second.status = "idle";
      w->second.job.clear();
      w->second.idle_since = applied_;
    }
    return accepted({{"requeued", job.job_id}});
  }
  if (op == "cancel") {
    JobRecord& job = job_or_throw(str(m, "job_id"));
    if (job.owner != str(m, "client_id")) {
      return rejected(ErrorCode::authorization, "job '" + job.job_id + "' belongs to another client");
    }
    if (job.status != queued && job.status != running) {
      return rejected(ErrorCode::invalid_state, "job '" + job.job_id + "' is " + job.status);
    }
    json data = {{"job_id", job.job_id}};
    if (job.status == running) {
      data["worker_id"] = job.assigned_worker;
      auto w = workers_.find(job.assigned_worker);
      if (w != workers_.end() && w->second.job == job.job_id) {
        w->second.status = "idle";
        w->second.job.clear();
        w->second.idle_since = applied_;
      }
    }
    job.status = std::string(canceled);
    job.assigned_worker.clear();
    manifests_.erase(job.job_id);
    return accepted(std::move(data));
  }
  if (op == "promote") {
    const std::string name = str(m, "name");
    if (primary_ != str(m, "previous")) {
      return rejected(ErrorCode::conflict, "primary already changed to '" + primary_ + "'");
    }
    primary_ = name;
    return accepted({{"primary", name}});
  }
  if (op == "mark_notified") {
    job_or_throw(str(m, "job_id")).notified = true;
    return accepted();
  }
  if (op == "join") {
    const std::string name = str(m, "name");
    if (std::find(members_.begin(), members_.end(), name) == members_.end()) members_.push_back(name);
    return accepted();
  }
  return rejected(ErrorCode::schema, "unknown mutation op '" + op + "'");
}

std::optional<std::string> Store::client_by_username(const std::string& username) const {
  auto it = usernames_.find(username);
  if (it == usernames_.end()) return std::nullopt;
  return it->second;
}

const JobRecord* Store::job(const std::string& id) const {
  auto it = jobs_.find(id);
  return it == jobs_.end() ? nullptr : &it->second;
}

const WorkerRecord* Store::worker(const std::string& id) const {
  auto it = workers_.find(id);
  return it == workers_.end() ? nullptr : &it->second;
}

const std::vector<CheckpointManifest>& Store::manifests(const std::string& job_id) const {
  static const std::vector<CheckpointManifest> none;
  auto it = manifests_.find(job_id);
  return it == manifests_.end() ? none : it->second;
}

std::optional<std::pair<std::string, std::string>> Store::next_assignment() const {
  const JobRecord* job = nullptr;
  for (const auto& [id, j] : jobs_) {
    if (j.status == job_status::queued && (job == nullptr || j.queued_at < job->queued_at)) job = &j;
  }
  if (job == nullptr) return std::nullopt;
  const std::string* worker = nullptr;
  std::uint64_t since = 0;
  for (const auto& [id, w] : workers_) {
    if (w.status == "idle" && (worker == nullptr || w.idle_since < since)) {
      worker = &id;
      since = w.idle_since;
    }
  }
  if (worker == nullptr) return std::nullopt;
  return std::make_pair(job->job_id, *worker);
}

std::vector<std::string> Store::jobs_with_status(std::string_view status) const {
  std::vector<const JobRecord*> found;
  for (const auto& [id, j] : jobs_) {
    if (j.status == status) found.push_back(&j);
  }
  std::stable_sort(found.begin(), found.end(),
                   [](const JobRecord* a, const JobRecord* b) { return a->queued_at < b->queued_at; });
  std::vector<std::string> ids;
  for (const JobRecord* j : found) ids.push_back(j->job_id);
  return ids;
}

json Store::to_json() const {
  json jobs = json::object();
  for (const auto& [id, j] : jobs_) jobs[id] = j.to_json();
  json workers = json::object();
  for (const auto& [id, w] : workers_) {
    workers[id] = {{"status", w.status}, {"job", w.job}, {"idle_since", w.idle_since}, {"epoch", w.epoch}};
  }
  json manifests = json::object();
  for (const auto& [id, list] : manifests_) {
    json a = json::array();
    for (const auto& cm : list) a.push_back(cm.to_json());
    manifests[id] = std::move(a);
  }
  return {{"applied", applied_},     {"primary", primary_},   {"clients", clients_},
          {"workers", workers},      {"jobs", jobs},          {"manifests", manifests},
          {"orphans", orphans_},     {"requests", requests_}, {"members", members_}};
}

Store Store::from_json(const json& j) {
  Store s;
  try {
    s.applied_ = j.at("applied").get<std::uint64_t>();
    s.primary_ = j.at("primary").get<std::string>();
    s.clients_ = j.at("clients").get<std::map<std::string, std::string>>();
    for (const auto& [id, name] : s.clients_) s.usernames_[name] = id;
    for (const auto& [id, w] : j.at("workers").items()) {
      s.workers_[id] = WorkerRecord{w.at("status").get<std::string>(), w.at("job").get<std::string>(),
                                    w.at("idle_since").get<std::uint64_t>(),
                                    w.at("epoch").get<std::uint64_t>()};
    }
    for (const auto& [id, r] : j.at("jobs").items()) {
      JobRecord job;
      job.job_id = r.at("job_id").get<std::string>();
      job.owner = r.at("owner").get<std::string>();
      job.name = r.at("name").get<std::string>();
      job.program = r.at("program").get<std::string>();
      job.total_steps = r.at("total_steps").get<std::int64_t>();
      job.status = r.at("status").get<std::string>();
      job.assigned_worker = r.at("assigned_worker").get<std::string>();
      job.result_ref = r.at("result_ref").get<std::string>();
      job.input_ref = r.at("input_ref").get<std::string>();
      job.queued_at = r.at("queued_at").get<std::uint64_t>();
      job.assignments = r.at("assignments").get<std::uint64_t>();
      job.notified = r.at("notified").get<bool>();
      s.jobs_[id] = std::move(job);
    }
    for (const auto& [id, list] : j.at("manifests").items()) {
      for (const auto& cm : list) s.manifests_[id].push_back(CheckpointManifest::from_json(cm));
    }
    s.orphans_ = j.at("orphans").get<std::map<std::string, std::string>>();
    s.requests_ = j.at("requests").get<std::map<std::string, json>>();
    s.members_ = j.at("members").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::schema, std::string("store snapshot: ") + e.what());
  }
  return s;
}

std::string Store::digest() const { return sha256_hex(to_json().dump()); }

}  // namespace offload
