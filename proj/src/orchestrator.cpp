// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/orchestrator.hpp"

#include <memory>

#include "offload/codec.hpp"
#include "offload/program.hpp"
#include "offload/protocol.hpp"

namespace offload {

namespace {

const char* const kRegisterQueue = "orch.register";

std::string control_queue(const std::string& name) { return "orch." + name; }

std::string body_str(const Envelope& e, const char* key) {
  auto it = e.body.find(key);
  if (it == e.body.end() || !it->is_string()) {
    fail(ErrorCode::schema, std::string(e.msg_type) + ": field '" + key + "' missing");
  }
  return it->get<std::string>();
}

}  // namespace

Orchestrator::Orchestrator(Executor& exec, BrokerChannel& channel, BlobClient& blobs,
                           BlobStore& local, Rng& rng, OrchestratorOptions options)
    : exec_(exec),
      channel_(channel),
      blobs_(blobs),
      local_(local),
      rng_(rng),
      options_(options),
      replica_(exec, channel, rng,
               ReplicaOptions{options.name, options.blob_endpoint, options.heartbeat_interval_s,
                              options.promotion_timeout_s, options.lock_timeout_s,
                              options.initial_members, options.bootstrap, options.prefer_primary},
               ReplicaManager::Hooks{
                   [this](const Change& c, const ApplyResult& r) { on_applied(c, r); },
                   nullptr}) {}

void Orchestrator::start() {
  declare_topology(channel_);
  const std::string orch(exchange::orchestrator);
  channel_.declare_queue(kRegisterQueue);
  channel_.bind(kRegisterQueue, orch, keys::client_register());
  channel_.bind(kRegisterQueue, orch, keys::worker_register());
  channel_.declare_queue(control_queue(options_.name));
  channel_.bind(control_queue(options_.name), orch, options_.name + ".#");
  replica_.start();
  if (options_.detection_timeout_s > 0.0) {
    exec_.call_after(options_.worker_heartbeat_interval_s, [this] { detect_failures(); });
  }
}

void Orchestrator::on_applied(const Change& change, const ApplyResult& result) {
  const json& m = change.mutation;
  const std::string op = m.value("op", "");
  if (op == "checkpoint" && result.ok) {
    for (const auto& ref : result.data.at("evicted")) local_.erase(ref.get<std::string>());
  } else if (op == "promote" && result.ok && m.value("name", "") == options_.name) {
    become_primary(m.value("previous", ""));
  }
}

void Orchestrator::become_primary(const std::string& previous) {
  serving_ = true;
  // Workers get a full detection window under the new primary.
  for (const auto& [id, w] : store().workers()) last_seen_[id] = exec_.now();
  consume_control(kRegisterQueue);
  consume_control(control_queue(options_.name));
  if (!previous.empty() && previous != options_.name) {
    consume_control(control_queue(previous));
    json body = {{"orchestrator", options_.name}, {"blob_endpoint", options_.blob_endpoint}};
    for (const auto& [id, username] : store().clients()) {
      reply_client(id, msg::promote_backup, body);
    }
    for (const auto& [id, w] : store().workers()) {
      if (w.status != "dead") send_worker(id, msg::promote_backup, body);
    }
  }
  for (const auto& id : store().jobs_with_status(job_status::completed)) {
    if (!store().job(id)->notified) notify_result(id);
  }
  try_assign();
}

void Orchestrator::consume_control(const std::string& queue) {
  if (consumed_.contains(queue)) return;
  consumed_.insert(queue);
  channel_.declare_queue(queue);
  channel_.consume(queue, [this](const Delivery& d) { on_control(d); });
}

void Orchestrator::finish(const Delivery& d) {
  auto it = control_since_.find(d.tag);
  if (it != control_since_.end()) {
    if (exec_.now() - it->second > options_.worker_heartbeat_interval_s) {
      // Heartbeats were stuck behind this delivery; do not hold that against
      // the workers.
      for (auto& [id, t] : last_seen_) t = std::max(t, exec_.now());
    }
    control_since_.erase(it);
  }
  channel_.ack(d);
}

void Orchestrator::on_control(const Delivery& d) {
  const Envelope& e = *d.envelope;
  control_since_[d.tag] = exec_.now();
  try {
    const std::string& t = e.msg_type;
    if (t == msg::client_register) return handle_register(d, false);
    if (t == msg::worker_register) return handle_register(d, true);
    if (t == msg::worker_connect) return handle_worker_connect(d);
    if (t == msg::start_new_task) return handle_start_new_task(d);
    if (t == msg::task_upload_completed) return handle_upload_completed(d);
    if (t == msg::checkpoint_manifest) return handle_checkpoint(d);
    if (t == msg::heartbeat) return handle_heartbeat(d);
    if (t == msg::job_result) return handle_job_result(d);
    if (t == msg::cancel_job) return handle_cancel(d);
    if (t == msg::job_status_request) return handle_status(d);
  } catch (const std::exception&) {
    // Malformed control message: drop it.
  }
  finish(d);
}

void Orchestrator::reply_client(const std::string& client_id, std::string_view type, json body) {
  channel_.publish(std::string(exchange::client), keys::to_principal(client_id),
                   protocol::make_envelope(rng_, type, options_.name, std::move(body)));
}

void Orchestrator::reply_error(const std::string& client_id, const std::string& request_id,
                               ErrorCode code, const std::string& message) {
  reply_client(client_id, msg::job_status_reply,
               {{"request_id", request_id},
                {"error", {{"code", to_string(code)}, {"message", message}}}});
}

void Orchestrator::send_worker(const std::string& worker_id, std::string_view type, json body) {
  channel_.publish(std::string(exchange::worker), keys::to_principal(worker_id),
                   protocol::make_envelope(rng_, type, options_.name, std::move(body)));
}

void Orchestrator::handle_register(const Delivery& d, bool worker) {
  const Envelope& e = *d.envelope;
  if (!e.reply_to) return finish(d);
  const std::string reply_to = *e.reply_to;
  auto grant = [this, d, reply_to, worker](const std::string& id) {
    channel_.publish(protocol::principal_exchange(worker ? protocol::Principal::worker
                                                         : protocol::Principal::client),
                     reply_to,
                     protocol::make_envelope(rng_, msg::session_grant, options_.name,
                                             {{"principal_id", id},
                                              {"orchestrator", options_.name},
                                              {"blob_endpoint", options_.blob_endpoint}}));
    finish(d);
  };
  if (!worker) {
    const std::string username = body_str(e, "username");
    if (auto id = store().client_by_username(username)) return grant(*id);
    replica_.request_change({{"op", "register_client"},
                             {"username", username},
                             {"client_id", make_guid(rng_)},
                             {"request_id", e.msg_id}},
                            [grant, d, this](const ApplyResult& r) {
                              if (!r.ok) return finish(d);
                              grant(r.data.at("client_id").get<std::string>());
                            });
    return;
  }
  std::string id = e.body.value("worker_id", "");
  if (!id.empty() && store().worker(id) != nullptr) return grant(id);
  if (id.empty()) id = make_guid(rng_);
  replica_.request_change({{"op", "register_worker"}, {"worker_id", id}, {"request_id", e.msg_id}},
                          [grant, d, this](const ApplyResult& r) {
                            if (!r.ok) return finish(d);
                            grant(r.data.at("worker_id").get<std::string>());
                          });
}

void Orchestrator::handle_worker_connect(const Delivery& d) {
  const std::string id = body_str(*d.envelope, "worker_id");
  replica_.request_change({{"op", "worker_connect"}, {"worker_id", id}},
                          [this, d, id](const ApplyResult&) {
                            last_seen_[id] = exec_.now();
                            failure_in_flight_.erase(id);
                            finish(d);
                            try_assign();
                          });
}

void Orchestrator::handle_start_new_task(const Delivery& d) {
  const Envelope& e = *d.envelope;
  const std::string client = body_str(e, "client_id");
  const std::string job_id = make_guid(rng_);
  replica_.request_change(
      {{"op", "create_job"},
       {"job_id", job_id},
       {"owner", client},
       {"name", e.body.value("name", "")},
       {"request_id", e.msg_id}},
      [this, d, client, request_id = e.msg_id](const ApplyResult& r) {
        if (!r.ok) {
          reply_error(client, request_id, r.code, r.message);
        } else {
          const std::string id = r.data.at("job_id").get<std::string>();
          reply_client(client, msg::new_task_ack,
                       {{"request_id", request_id},
                        {"job_id", id},
                        {"upload_ref", "input/" + id},
                        {"blob_endpoint", options_.blob_endpoint}});
        }
        finish(d);
      });
}

void Orchestrator::handle_upload_completed(const Delivery& d) {
  const Envelope& e = *d.envelope;
  const std::string client = body_str(e, "client_id");
  const std::string job_id = body_str(e, "job_id");
  const JobRecord* job = store().job(job_id);
  if (job == nullptr) {
    reply_error(client, e.msg_id, ErrorCode::not_found, "unknown job '" + job_id + "'");
    return finish(d);
  }
  if (job->owner != client) {
    reply_error(client, e.msg_id, ErrorCode::authorization, "job belongs to another client");
    return finish(d);
  }
  const std::string input_ref = "input/" + job_id;
  auto program = local_.get(input_ref);
  if (!program) {
    reply_error(client, e.msg_id, ErrorCode::not_found, "no upload found for job '" + job_id + "'");
    return finish(d);
  }
  push_blob(input_ref, [this, d, client, job_id, input_ref, program = *program,
                        request_id = e.msg_id] {
    replica_.request_change({{"op", "upload_completed"},
                             {"job_id", job_id},
                             {"program", program},
                             {"input_ref", input_ref},
                             {"request_id", request_id}},
                            [this, d, client, job_id, request_id](const ApplyResult& r) {
                              if (!r.ok) {
                                reply_error(client, request_id, r.code, r.message);
                              } else {
                                reply_client(client, msg::job_status_reply,
                                             {{"request_id", request_id},
                                              {"job", store().job(job_id)->to_json()}});
                              }
                              finish(d);
                              try_assign();
                            });
  });
}

void Orchestrator::handle_checkpoint(const Delivery& d) {
  const json manifest = d.envelope->body.at("manifest");
  const CheckpointManifest cm = CheckpointManifest::from_json(manifest);
  if (!local_.contains(cm.state_ref)) return finish(d);
  push_blob(cm.state_ref, [] {});  // asynchronous replication of the state
  replica_.request_change({{"op", "checkpoint"}, {"manifest", manifest}},
                          [this, d, cm](const ApplyResult& r) {
                            if (!r.ok) {
                              const JobRecord* job = store().job(cm.job_id);
                              if (job == nullptr || job->status != job_status::running ||
                                  job->assigned_worker != cm.worker_id) {
                                send_worker(cm.worker_id, msg::cancel_job, {{"job_id", cm.job_id}});
                              }
                            }
                            finish(d);
                          });
}

void Orchestrator::handle_heartbeat(const Delivery& d) {
  const Envelope& e = *d.envelope;
  const std::string id = body_str(e, "worker_id");
  const std::string job = e.body.value("job_id", "");
  last_seen_[id] = exec_.now();
  const WorkerRecord* w = store().worker(id);
  if (w != nullptr && !job.empty()) {
    const JobRecord* j = store().job(job);
    if (j == nullptr || j->status != job_status::running || j->assigned_worker != id) {
      send_worker(id, msg::cancel_job, {{"job_id", job}});
    }
  }
  if (w != nullptr && w->status == "dead") {
    // Declared dead too early; take it back.
    replica_.request_change({{"op", "worker_connect"}, {"worker_id", id}},
                            [this, d, id](const ApplyResult&) {
                              failure_in_flight_.erase(id);
                              finish(d);
                              try_assign();
                            });
    return;
  }
  finish(d);
}

void Orchestrator::handle_job_result(const Delivery& d) {
  const Envelope& e = *d.envelope;
  const std::string job_id = body_str(e, "job_id");
  const std::string worker = body_str(e, "worker_id");
  if (e.body.value("status", "ok") == "failed") {
    replica_.request_change(
        {{"op", "job_failed"}, {"job_id", job_id}, {"worker_id", worker},
         {"reason", e.body.value("reason", "")}},
        [this, d](const ApplyResult&) {
          finish(d);
          try_assign();
        });
    return;
  }
  const std::string ref = body_str(e, "result_ref");
  if (!local_.contains(ref)) {
    // The upload went to a replica that died before handing it over.
    replica_.request_change({{"op", "requeue"}, {"job_id", job_id}, {"worker_id", worker}},
                            [this, d](const ApplyResult&) {
                              finish(d);
                              try_assign();
                            });
    return;
  }
  push_blob(ref, [this, d, job_id, worker, ref] {
    replica_.request_change({{"op", "job_result"},
                             {"job_id", job_id},
                             {"worker_id", worker},
                             {"result_ref", ref}},
                            [this, d, job_id](const ApplyResult& r) {
                              if (r.ok && r.data.value("completed", false)) notify_result(job_id);
                              finish(d);
                              try_assign();
                            });
  });
}

void Orchestrator::notify_result(const std::string& job_id) {
  const JobRecord* job = store().job(job_id);
  if (job == nullptr) return;
  // A fixed msg_id lets the client recognize a repeat sent by a successor.
  channel_.publish(std::string(exchange::client), keys::to_principal(job->owner),
                   Envelope{derived_guid("resultReady/" + job_id), std::string(msg::result_ready),
                            options_.name, std::nullopt,
                            {{"job_id", job_id},
                             {"download_ref", job->result_ref},
                             {"blob_endpoint", options_.blob_endpoint}}});
  ++stats_.result_notifications;
  replica_.request_change({{"op", "mark_notified"}, {"job_id", job_id}});
}

void Orchestrator::handle_cancel(const Delivery& d) {
  const Envelope& e = *d.envelope;
  const std::string client = body_str(e, "client_id");
  const std::string job_id = body_str(e, "job_id");
  replica_.request_change(
      {{"op", "cancel"}, {"job_id", job_id}, {"client_id", client}, {"request_id", e.msg_id}},
      [this, d, client, job_id, request_id = e.msg_id](const ApplyResult& r) {
        if (!r.ok) {
          reply_error(client, request_id, r.code, r.message);
        } else {
          if (r.data.contains("worker_id")) {
            send_worker(r.data.at("worker_id").get<std::string>(), msg::cancel_job,
                        {{"job_id", job_id}});
          }
          reply_client(client, msg::job_status_reply,
                       {{"request_id", request_id}, {"job", store().job(job_id)->to_json()}});
        }
        finish(d);
        try_assign();
      });
}

void Orchestrator::handle_status(const Delivery& d) {
  const Envelope& e = *d.envelope;
  const std::string client = body_str(e, "client_id");
  if (!store().clients().contains(client)) {
    reply_error(client, e.msg_id, ErrorCode::session, "unknown client '" + client + "'");
    return finish(d);
  }
  if (e.body.contains("job_id")) {
    const std::string job_id = body_str(e, "job_id");
    const JobRecord* job = store().job(job_id);
    if (job == nullptr) {
      reply_error(client, e.msg_id, ErrorCode::not_found, "unknown job '" + job_id + "'");
    } else if (job->owner != client) {
      reply_error(client, e.msg_id, ErrorCode::authorization, "job belongs to another client");
    } else {
      reply_client(client, msg::job_status_reply, {{"request_id", e.msg_id}, {"job", job->to_json()}});
    }
    return finish(d);
  }
  const std::string filter = e.body.value("filter", "all");
  json jobs = json::array();
  for (const auto& [id, job] : store().jobs()) {
    if (job.owner == client && (filter == "all" || job.status == filter)) jobs.push_back(job.to_json());
  }
  reply_client(client, msg::job_status_reply, {{"request_id", e.msg_id}, {"jobs", jobs}});
  finish(d);
}

void Orchestrator::try_assign() {
  if (!is_primary() || assign_in_flight_) return;
  auto next = store().next_assignment();
  if (!next) return;
  assign_in_flight_ = true;
  const auto [job_id, worker_id] = *next;
  replica_.request_change(
      {{"op", "assign"}, {"job_id", job_id}, {"worker_id", worker_id}},
      [this, job_id, worker_id](const ApplyResult& r) {
        assign_in_flight_ = false;
        if (r.ok && is_primary()) {
          const JobRecord* job = store().job(job_id);
          json resume = nullptr;
          const auto& ms = store().manifests(job_id);
          for (auto it = ms.rbegin(); it != ms.rend(); ++it) {
            if (local_.contains(it->state_ref)) {
              resume = it->to_json();
              break;
            }
          }
          ++stats_.assignments;
          last_seen_.try_emplace(worker_id, exec_.now());
          send_worker(worker_id, msg::job_assignment,
                      {{"job_id", job_id},
                       {"program", job->program},
                       {"attempt", r.data.at("attempt")},
                       {"resume", resume},
                       {"blob_endpoint", options_.blob_endpoint}});
        }
        try_assign();
      });
}

void Orchestrator::notify_worker_failed(const std::string& worker_id) {
  if (is_primary()) report_failure(worker_id);
}

void Orchestrator::report_failure(const std::string& worker_id) {
  const WorkerRecord* w = store().worker(worker_id);
  if (w == nullptr || w->status == "dead" || failure_in_flight_.contains(worker_id)) return;
  failure_in_flight_.insert(worker_id);
  ++stats_.failures_detected;
  replica_.request_change({{"op", "worker_failed"}, {"worker_id", worker_id}, {"epoch", w->epoch}},
                          [this, worker_id](const ApplyResult&) {
                            failure_in_flight_.erase(worker_id);
                            try_assign();
                          });
}

void Orchestrator::detect_failures() {
  exec_.call_after(options_.worker_heartbeat_interval_s, [this] { detect_failures(); });
  if (!is_primary()) return;
  for (const auto& [tag, since] : control_since_) {
    if (exec_.now() - since > options_.worker_heartbeat_interval_s) return;  // stalled
  }
  for (const auto& [id, w] : store().workers()) {
    if (w.status != "idle" && w.status != "busy") continue;
    auto seen = last_seen_.try_emplace(id, exec_.now()).first->second;
    if (exec_.now() - seen > options_.detection_timeout_s) report_failure(id);
  }
}

void Orchestrator::push_blob(const std::string& key, std::function<void()> done) {
  auto data = local_.get(key);
  const auto peers = replica_.peer_endpoints();
  if (!data || peers.empty()) return done();
  struct State {
    std::size_t outstanding;
    bool fired = false;
    std::function<void()> done;
  };
  auto st = std::make_shared<State>(State{peers.size(), false, std::move(done)});
  auto fire = [st] {
    if (st->fired) return;
    st->fired = true;
    st->done();
  };
  const TimerId timer = exec_.call_after(options_.blob_push_timeout_s, fire);
  for (const auto& [name, endpoint] : peers) {
    blobs_.put(endpoint, key, *data, [this, st, fire, timer](bool) {
      if (--st->outstanding == 0) {
        exec_.cancel(timer);
        fire();
      }
    });
  }
}

}  // namespace offload
