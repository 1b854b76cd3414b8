// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/worker.hpp"

#include <cmath>

#include "offload/codec.hpp"

namespace offload {

namespace {
// Relative slack when comparing accumulated execution time with checkpoint
// deadlines, so that 4 * 4.6875 counts as reaching 18.75.
constexpr double kDueSlack = 1e-9;
}  // namespace

Worker::Worker(Executor& exec, BrokerChannel& channel, BlobClient& blobs, Rng& rng,
               WorkerOptions options, ExecutionObserver* observer)
    : exec_(exec),
      channel_(channel),
      blobs_(blobs),
      rng_(rng),
      options_(std::move(options)),
      observer_(observer) {}

void Worker::start() {
  connect();
  exec_.call_after(options_.heartbeat_interval_s, [this] { heartbeat(); });
}

void Worker::connect() {
  protocol::ConnectOptions opts;
  opts.kind = protocol::Principal::worker;
  opts.identity = options_.worker_id;
  opts.sender = options_.name;
  opts.timeout_s = options_.session_timeout_s;
  opts.purge = true;
  protocol::connect(exec_, channel_, rng_, opts,
                    [this](std::optional<protocol::SessionGrant> grant, std::optional<Error>) {
                      if (!grant) {
                        exec_.call_after(options_.retry_interval_s, [this] { connect(); });
                        return;
                      }
                      options_.worker_id = grant->principal_id;
                      orchestrator_ = grant->orchestrator;
                      blob_endpoint_ = grant->blob_endpoint;
                      connected_ = true;
                      if (on_identity) on_identity(options_.worker_id);
                      channel_.consume(protocol::principal_queue(protocol::Principal::worker,
                                                                 options_.worker_id),
                                       [this](const broker::Delivery& d) { on_message(d); });
                    });
}

void Worker::publish(std::string_view type, json body) {
  if (!connected_) return;
  channel_.publish(std::string(exchange::orchestrator),
                   keys::to_orchestrator(orchestrator_, options_.worker_id),
                   protocol::make_envelope(rng_, type, options_.name, std::move(body)));
}

void Worker::heartbeat() {
  publish(msg::heartbeat,
          {{"worker_id", options_.worker_id}, {"job_id", job_id_}, {"step_counter", step_}});
  exec_.call_after(options_.heartbeat_interval_s, [this] { heartbeat(); });
}

void Worker::on_message(const broker::Delivery& d) {
  const Envelope& e = *d.envelope;
  channel_.ack(d);
  try {
    if (e.msg_type == msg::job_assignment) {
      on_assignment(e.body);
    } else if (e.msg_type == msg::cancel_job) {
      const std::string job = e.body.at("job_id").get<std::string>();
      if (job == job_id_) cancel_requested_ = true;
      if (queued_assignment_ && queued_assignment_->value("job_id", "") == job) {
        queued_assignment_.reset();
      }
    } else if (e.msg_type == msg::promote_backup) {
      orchestrator_ = e.body.at("orchestrator").get<std::string>();
      blob_endpoint_ = e.body.value("blob_endpoint", blob_endpoint_);
    }
  } catch (const std::exception&) {
  }
}

void Worker::on_assignment(const json& body) {
  const std::string job = body.at("job_id").get<std::string>();
  if (job == job_id_) return;  // duplicate delivery
  if (!job_id_.empty()) {
    queued_assignment_ = body;
    return;
  }
  begin(body);
}

void Worker::begin(const json& a) {
  job_id_ = a.at("job_id").get<std::string>();
  cancel_requested_ = false;
  blob_endpoint_ = a.value("blob_endpoint", blob_endpoint_);
  if (observer_) observer_->busy(true);
  try {
    program_ = JobProgram::parse(a.at("program").get<std::string>());
  } catch (const Error& e) {
    report_failure(job_id_, e.what());
    return;
  }
  const json& resume = a.at("resume");
  if (resume.is_null()) {
    state_ = program_->initial_state();
    step_ = 0;
    next_seq_ = 1;
    resume_execution();
    return;
  }
  const CheckpointManifest cm = CheckpointManifest::from_json(resume);
  const std::string job = job_id_;
  const std::string endpoint = a.value("blob_endpoint", blob_endpoint_);
  blobs_.get(endpoint, cm.state_ref, [this, cm, job](std::optional<std::string> blob) {
    if (job != job_id_) return;
    std::optional<ExecutionState> restored;
    if (blob && sha256_hex(*blob) == cm.digest) {
      try {
        restored = ExecutionState::deserialize(*blob);
      } catch (const Error&) {
      }
    }
    if (!restored || restored->job_id != job || restored->step_counter != cm.step_counter) {
      report_failure(job, "unusable checkpoint " + cm.state_ref);
      return;
    }
    state_ = restored->state;
    step_ = restored->step_counter;
    next_seq_ = cm.seq + 1;
    exec_.call_after(options_.restore_cost_s, [this, job] {
      if (job == job_id_) resume_execution();
    });
  });
}

bool Worker::checkpoint_due() const {
  if (options_.checkpoint_interval_s <= 0.0) return false;
  const double exec_s = static_cast<double>(step_) * program_->step_cost_s;
  const double due = static_cast<double>(next_checkpoint_) * options_.checkpoint_interval_s;
  return exec_s >= due * (1.0 - kDueSlack);
}

void Worker::resume_execution() {
  if (cancel_requested_) return drop_job();
  if (options_.checkpoint_interval_s > 0.0) {
    const double exec_s = static_cast<double>(step_) * program_->step_cost_s;
    next_checkpoint_ =
        static_cast<std::int64_t>(std::floor(exec_s / options_.checkpoint_interval_s * (1.0 + kDueSlack))) + 1;
  }
  if (step_ >= program_->total_steps) return upload_result();
  executing_ = true;
  if (observer_) observer_->exec_started(job_id_);
  exec_.call_after(program_->step_cost_s, [this] { run_step(); });
}

void Worker::run_step() {
  state_ = program_->step(state_, step_);
  ++step_;
  if (observer_) observer_->step_done(job_id_, step_);
  if (cancel_requested_ || step_ >= program_->total_steps || checkpoint_due()) {
    executing_ = false;
    if (observer_) observer_->exec_stopped(job_id_);
    if (cancel_requested_) return drop_job();
    if (step_ >= program_->total_steps) return upload_result();
    return take_checkpoint();
  }
  exec_.call_after(program_->step_cost_s, [this] { run_step(); });
}

void Worker::take_checkpoint() {
  const std::string job = job_id_;
  const std::uint64_t seq = next_seq_++;
  if (observer_) observer_->checkpoint_started(job, seq);
  exec_.call_after(options_.checkpoint_cost_s, [this, job, seq] {
    if (job != job_id_) return;
    ExecutionState snapshot{job, step_, static_cast<double>(step_) * program_->step_cost_s, state_};
    auto blob = std::make_shared<std::string>(snapshot.serialize());
    CheckpointManifest cm{job, options_.worker_id, seq, exec_.now(), step_,
                          "ckpt/" + job + "/" + std::to_string(seq), sha256_hex(*blob)};
    auto sent = [this, job, cm](bool ok) {
      if (job != job_id_) return;
      if (ok) {
        publish(msg::checkpoint_manifest, {{"manifest", cm.to_json()}});
        if (observer_) observer_->checkpoint_sent(job, cm);
      }
      resume_execution();
    };
    blobs_.put(blob_endpoint_, cm.state_ref, *blob, [this, job, cm, blob, sent](bool ok) {
      if (ok || job != job_id_) return sent(ok);
      blobs_.put(blob_endpoint_, cm.state_ref, *blob, sent);  // one retry
    });
  });
}

void Worker::upload_result() {
  const std::string job = job_id_;
  auto bytes = std::make_shared<std::string>(encode_result(*program_, state_));
  const std::string ref = "result/" + job;
  blobs_.put(blob_endpoint_, ref, *bytes, [this, job, ref, bytes](bool ok) {
    if (job != job_id_) return;
    if (!ok) {
      exec_.call_after(options_.retry_interval_s, [this, job] {
        if (job == job_id_) upload_result();
      });
      return;
    }
    const std::string digest = sha256_hex(*bytes);
    publish(msg::job_result, {{"job_id", job},
                              {"worker_id", options_.worker_id},
                              {"result_ref", ref},
                              {"digest", digest},
                              {"status", "ok"}});
    if (observer_) observer_->result_sent(job, digest);
    drop_job();
  });
}

void Worker::report_failure(const std::string& job_id, const std::string& reason) {
  publish(msg::job_result, {{"job_id", job_id},
                            {"worker_id", options_.worker_id},
                            {"status", "failed"},
                            {"reason", reason}});
  drop_job();
}

void Worker::drop_job() {
  if (executing_) {
    executing_ = false;
    if (observer_) observer_->exec_stopped(job_id_);
  }
  job_id_.clear();
  program_.reset();
  state_ = nullptr;
  step_ = 0;
  cancel_requested_ = false;
  if (observer_) observer_->busy(false);
  if (queued_assignment_) {
    json next = std::move(*queued_assignment_);
    queued_assignment_.reset();
    begin(next);
  }
}

}  // namespace offload
