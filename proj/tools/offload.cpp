// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// offload: client commands, node processes, the checkpoint optimizer and the
// simulation harness.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "offload/blob.hpp"
#include "offload/ckptmath.hpp"
#include "offload/client.hpp"
#include "offload/codec.hpp"
#include "offload/orchestrator.hpp"
#include "offload/simlab.hpp"
#include "offload/tcp_broker.hpp"
#include "offload/worker.hpp"

namespace fs = std::filesystem;
using namespace offload;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

struct Globals {
  std::string broker = "127.0.0.1:" + std::to_string(kDefaultBrokerPort);
  std::string identity;
  std::string format = "table";
  double timeout_s = 10.0;
};

std::string default_identity_path() {
  if (const char* home = std::getenv("HOME"); home != nullptr && *home != '\0') {
    return (fs::path(home) / ".offload" / "identity.json").string();
  }
  return ".offload-identity.json";
}

json load_identity(const std::string& path) {
  std::ifstream f(path);
  if (!f) return json::object();
  try {
    json j = json::parse(f);
    if (!j.is_object()) fail(ErrorCode::schema, "identity file '" + path + "' is not an object");
    return j;
  } catch (const json::parse_error& e) {
    fail(ErrorCode::parse, "identity file '" + path + "': " + e.what());
  }
}

void save_identity(const std::string& path, const json& identity) {
  const fs::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(ErrorCode::io, "cannot write identity file '" + path + "'");
  f << identity.dump(2) << '\n';
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::io, "cannot read '" + path + "'");
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

/// Polls the signal flag so serve loops stop cleanly.
void watch_signals(RealtimeLoop& loop) {
  loop.call_after(0.2, [&loop] {
    if (g_interrupted) {
      loop.stop();
      return;
    }
    watch_signals(loop);
  });
}

// Client commands ------------------------------------------------------------

class ClientRun {
 public:
  explicit ClientRun(const Globals& g) : g_(g), rng_(std::random_device{}()) {
    json identity = load_identity(g.identity);
    std::string username = identity.value("username", "");
    if (username.empty()) {
      const char* user = std::getenv("USER");
      username = (user != nullptr && *user != '\0') ? user : "user";
      identity["username"] = username;
      save_identity(g.identity, identity);
    }
    channel_ = std::make_unique<TcpBrokerChannel>(loop_, g.broker, g.timeout_s);
    blobs_ = std::make_unique<TcpBlobClient>(loop_, g.timeout_s);
    ClientOptions o;
    o.name = "cli-" + username;
    o.username = username;
    o.request_timeout_s = g.timeout_s / 2.0;
    o.attempts = 3;
    session_ = std::make_unique<ClientSession>(loop_, *channel_, *blobs_, rng_, o);
  }

  ClientSession& session() { return *session_; }
  RealtimeLoop& loop() { return loop_; }

  /// Connects, runs `body`, and drives the loop until finish() is called.
  void run(const std::function<void()>& body, double timeout_s) {
    loop_.post([this, body] {
      session_->connect([this, body](std::optional<Error> err) {
        if (err) return finish(err);
        try {
          body();
        } catch (const Error& e) {
          finish(e);
        }
      });
    });
    loop_.call_after(timeout_s, [this] { finish(Error(ErrorCode::timeout, "command timed out")); });
    watch_signals(loop_);
    loop_.run();
    if (error_) throw *error_;
    if (g_interrupted) fail(ErrorCode::timeout, "interrupted");
  }

  void finish(std::optional<Error> err = std::nullopt) {
    if (done_) return;
    done_ = true;
    error_ = std::move(err);
    loop_.stop();
  }

 private:
  const Globals& g_;
  RealtimeLoop loop_;
  Rng rng_;
  std::unique_ptr<TcpBrokerChannel> channel_;
  std::unique_ptr<TcpBlobClient> blobs_;
  std::unique_ptr<ClientSession> session_;
  bool done_ = false;
  std::optional<Error> error_;
};

void print_jobs(const json& jobs, const std::string& format) {
  if (format == "json") {
    std::cout << jobs.dump() << '\n';
    return;
  }
  const char* cols[] = {"job_id", "name", "status", "assigned_worker", "program"};
  const char sep = format == "csv" ? ',' : '\t';
  for (std::size_t i = 0; i < 5; ++i) std::cout << (i ? std::string(1, sep) : "") << cols[i];
  std::cout << '\n';
  for (const auto& j : jobs) {
    for (std::size_t i = 0; i < 5; ++i) {
      const json v = j.value(cols[i], json(""));
      std::string s = v.is_string() ? v.get<std::string>() : v.dump();
      if (format == "csv" && s.find_first_of(",\"") != std::string::npos) {
        std::string q = "\"";
        for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
        s = q + "\"";
      }
      std::cout << (i ? std::string(1, sep) : "") << s;
    }
    std::cout << '\n';
  }
}

void print_job(const json& job, const std::string& format) {
  if (format == "json") {
    std::cout << job.dump() << '\n';
    return;
  }
  print_jobs(json::array({job}), format);
}

// Node processes ---------------------------------------------------------------

int serve_broker(std::uint16_t port, const std::string& journal) {
  std::unique_ptr<broker::Broker> b;
  std::unique_ptr<std::ofstream> journal_out;
  if (!journal.empty()) {
    if (std::ifstream in(journal); in) {
      b = broker::Broker::recover(in);
    }
    journal_out = std::make_unique<std::ofstream>(journal, std::ios::app);
    if (!*journal_out) fail(ErrorCode::io, "cannot open journal '" + journal + "'");
  }
  if (!b) b = std::make_unique<broker::Broker>();
  if (journal_out) b->attach_journal(journal_out.get());
  BrokerServer server(*b, port);
  std::cout << "broker listening on port " << server.port() << std::endl;
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(200));
  server.stop();
  return 0;
}

int serve_orchestrator(const Globals& g, const std::string& name, const std::string& role,
                       const std::string& blob_host, std::uint16_t blob_port, double heartbeat_s,
                       double detection_s, double worker_heartbeat_s) {
  BlobStore store;
  BlobServer blob_server(store, blob_port);
  const std::string endpoint = blob_host + ":" + std::to_string(blob_server.port());
  RealtimeLoop loop;
  TcpBrokerChannel channel(loop, g.broker, g.timeout_s);
  TcpBlobClient blobs(loop, g.timeout_s);
  Rng rng(std::random_device{}());
  OrchestratorOptions o;
  o.name = name;
  o.blob_endpoint = endpoint;
  o.heartbeat_interval_s = heartbeat_s;
  o.promotion_timeout_s = 3.0 * heartbeat_s;
  o.detection_timeout_s = detection_s;
  o.worker_heartbeat_interval_s = worker_heartbeat_s;
  o.bootstrap = role == "primary";
  o.prefer_primary = role == "primary";
  Orchestrator orch(loop, channel, blobs, store, rng, o);
  std::optional<Error> failure;
  channel.on_disconnect = [&] {
    failure = Error(ErrorCode::io, "lost connection to broker");
    loop.stop();
  };
  orch.start();  // throws conflict for a duplicate name
  std::cout << "orchestrator " << name << " (" << role << ") blob endpoint " << endpoint << std::endl;
  watch_signals(loop);
  loop.run();
  blob_server.stop();
  if (failure) throw *failure;
  return 0;
}

int serve_worker(const Globals& g, const std::string& name, double interval_s, double cost_s,
                 double heartbeat_s) {
  json identity = load_identity(g.identity);
  RealtimeLoop loop;
  TcpBrokerChannel channel(loop, g.broker, g.timeout_s);
  TcpBlobClient blobs(loop, g.timeout_s);
  Rng rng(std::random_device{}());
  WorkerOptions o;
  o.name = name;
  o.worker_id = identity.value("worker_id", "");
  o.heartbeat_interval_s = heartbeat_s;
  o.checkpoint_interval_s = interval_s;
  o.checkpoint_cost_s = cost_s;
  o.restore_cost_s = 0.0;
  Worker worker(loop, channel, blobs, rng, o);
  worker.on_identity = [&](const std::string& id) {
    if (identity.value("worker_id", "") != id) {
      identity["worker_id"] = id;
      save_identity(g.identity, identity);
    }
    std::cout << "worker " << name << " registered as " << id << std::endl;
  };
  std::optional<Error> failure;
  channel.on_disconnect = [&] {
    failure = Error(ErrorCode::io, "lost connection to broker");
    loop.stop();
  };
  worker.start();
  watch_signals(loop);
  loop.run();
  if (failure) throw *failure;
  return 0;
}

// Optimizer ------------------------------------------------------------------------

int optimize(double mu, double T, double C, std::int64_t table_max_n, const std::string& format) {
  if (!(mu >= 0.0) || !(T > 0.0) || !(C >= 0.0) || !std::isfinite(mu) || !std::isfinite(T) ||
      !std::isfinite(C)) {
    fail(ErrorCode::usage, "--mu and --C must be >= 0 and --T > 0");
  }
  if (table_max_n < 0) fail(ErrorCode::usage, "--table-max-n must be >= 0");
  const ckptmath::FaultModel fm(mu);
  const ckptmath::JobProfile job(T);
  const ckptmath::CheckpointCost cost(C);
  const auto plan = ckptmath::optimal_segments(fm, job, cost);
  const double expected = ckptmath::expected_time_with_checkpoints(fm, job, plan, cost);
  std::vector<double> table;
  if (table_max_n > 0) table = ckptmath::expected_time_table(fm, job, cost, table_max_n);
  if (format == "json") {
    json j{{"mu", mu},          {"T_s", T},
           {"C_s", C},          {"segments", plan.segments},
           {"checkpoints", plan.checkpoints}, {"interval_s", plan.interval_s},
           {"expected_s", expected}, {"capped", plan.capped}};
    if (!table.empty()) j["table"] = table;
    std::cout << j.dump() << '\n';
    return 0;
  }
  std::printf("segments     %lld\n", static_cast<long long>(plan.segments));
  std::printf("checkpoints  %lld\n", static_cast<long long>(plan.checkpoints));
  std::printf("interval_s   %.6g\n", plan.interval_s);
  std::printf("expected_s   %.6f\n", expected);
  if (plan.capped) std::printf("note         search capped at %lld segments\n",
                               static_cast<long long>(ckptmath::kMaxSegments));
  if (!table.empty()) {
    std::printf("\n%s\n", format == "csv" ? "segments,checkpoints,expected_s" : "N\tcheckpoints\tE_Y_s");
    for (std::size_t i = 0; i < table.size(); ++i) {
      std::printf(format == "csv" ? "%zu,%zu,%.6f\n" : "%zu\t%zu\t%.6f\n", i + 1, i, table[i]);
    }
  }
  return 0;
}

// Simulation ----------------------------------------------------------------------

void print_summary(const simlab::ExperimentResult& r, const std::string& format) {
  if (format == "csv") {
    std::cout << simlab::summary_csv(r.arms);
    return;
  }
  if (format == "json") {
    json arr = json::array();
    for (const auto& a : r.arms) {
      arr.push_back({{"arm", a.arm},
                     {"mu", a.mu},
                     {"segments", a.segments},
                     {"trials", a.trials},
                     {"completed", a.completed},
                     {"mean_completion_s", std::isnan(a.mean_completion_s) ? json(nullptr) : json(a.mean_completion_s)},
                     {"stderr_s", a.stderr_s},
                     {"closed_form_s", a.closed_form_s},
                     {"mean_energy_j", a.mean_energy_j}});
    }
    std::cout << json{{"experiment", r.name}, {"arms", arr}}.dump() << '\n';
    return;
  }
  std::printf("%-26s %9s %8s %10s %12s %9s %12s\n", "arm", "mu", "trials", "completed",
              "mean_s", "stderr_s", "closed_form_s");
  for (const auto& a : r.arms) {
    std::printf("%-26s %9.4g %8llu %10llu %12.3f %9.3f %12.3f\n", a.arm.c_str(), a.mu,
                static_cast<unsigned long long>(a.trials),
                static_cast<unsigned long long>(a.completed), a.mean_completion_s, a.stderr_s,
                a.closed_form_s);
  }
}

int sim_run(const std::string& config_path, std::uint64_t trials, std::optional<std::uint64_t> seed,
            const std::string& out, bool plot, const std::string& format) {
  json doc;
  try {
    doc = json::parse(read_file(config_path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::parse, "config '" + config_path + "': " + e.what());
  }
  simlab::SimConfig config = simlab::SimConfig::from_json(doc);
  if (seed) config.seed = *seed;
  simlab::ExperimentResult r = simlab::run_trials(config, trials);
  r.name = fs::path(config_path).stem().string();
  simlab::write_outputs(r, out, plot);
  print_summary(r, format);
  return 0;
}

int sim_experiment(const std::string& name, std::uint64_t trials, std::uint64_t seed,
                   const std::string& mode, const std::string& out, bool plot,
                   const std::string& format) {
  simlab::ExperimentOptions o;
  o.trials = trials;
  o.seed = seed;
  if (mode == "system") {
    o.mode = simlab::Mode::system;
  } else if (mode != "model_faithful") {
    fail(ErrorCode::usage, "--mode must be model_faithful or system");
  }
  const simlab::ExperimentResult r = simlab::run_experiment(name, o);
  simlab::write_outputs(r, out, plot);
  print_summary(r, format);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::signal(SIGPIPE, SIG_IGN);

  Globals g;
  if (const char* env = std::getenv("OFFLOAD_BROKER"); env != nullptr && *env != '\0') g.broker = env;
  g.identity = default_identity_path();

  CLI::App app{"offload: checkpointed job offloading between edge nodes"};
  app.require_subcommand(1);
  app.add_option("--broker", g.broker, "broker address host:port (env OFFLOAD_BROKER)");
  app.add_option("--identity", g.identity, "identity file (username / worker id)");
  app.add_option("--format", g.format, "output format")->check(CLI::IsMember({"table", "json", "csv"}));
  app.add_option("--timeout", g.timeout_s, "seconds to wait for the broker and orchestrator");

  std::function<int()> action;

  // Client.
  auto* submit = app.add_subcommand("submit", "submit a job program, e.g. busy_counter:steps=20");
  std::string job_name, program;
  bool wait = false;
  std::string wait_dest;
  submit->add_option("--name", job_name, "job name");
  submit->add_option("program", program, "program spec kind:param=value,...")->required();
  submit->add_flag("--wait", wait, "wait for the result");
  submit->add_option("--download", wait_dest, "with --wait, write the result here");
  submit->callback([&] {
    action = [&] {
      if (!wait_dest.empty()) wait = true;
      JobProgram::parse(program);  // fail fast on a bad spec
      ClientRun run(g);
      json job;
      auto on_ready = [&](const std::string& endpoint) {
        if (wait_dest.empty()) return run.finish();
        run.session().download(job.at("job_id").get<std::string>(), endpoint,
                               [&](std::optional<std::string> data, std::optional<Error> err) {
                                 if (!data) return run.finish(err);
                                 std::ofstream f(wait_dest, std::ios::binary);
                                 if (!f) return run.finish(Error(ErrorCode::io, "cannot write '" + wait_dest + "'"));
                                 f << *data;
                                 run.finish();
                               });
      };
      run.session().on_result = [&](const json& n) {
        if (!wait || job.is_null() || n.value("job_id", "") != job.value("job_id", "")) return;
        on_ready(n.value("blob_endpoint", ""));
      };
      run.run(
          [&] {
            run.session().submit(program, job_name, [&](std::optional<json> j, std::optional<Error> err) {
              if (!j) return run.finish(err);
              job = *j;
              if (!wait) return run.finish();
              // The notification may have overtaken the reply.
              if (run.session().results_ready().contains(job.value("job_id", ""))) on_ready("");
            });
          },
          wait ? 24 * 3600.0 : g.timeout_s * 3);
      print_job(job, g.format);
      return 0;
    };
  });

  auto* status = app.add_subcommand("status", "show one job");
  std::string job_id;
  status->add_option("job_id", job_id)->required();
  status->callback([&] {
    action = [&] {
      ClientRun run(g);
      json job;
      run.run([&] {
        run.session().status(job_id, [&](std::optional<json> j, std::optional<Error> err) {
          if (j) job = *j;
          run.finish(err);
        });
      }, g.timeout_s * 3);
      print_job(job, g.format);
      return 0;
    };
  });

  auto* list = app.add_subcommand("list", "list my jobs");
  std::string filter = "all";
  list->add_option("--filter", filter, "all or a status")
      ->check(CLI::IsMember({"all", "uploading", "queued", "running", "completed", "canceled", "failed"}));
  list->callback([&] {
    action = [&] {
      ClientRun run(g);
      json jobs = json::array();
      run.run([&] {
        run.session().list(filter, [&](std::optional<json> j, std::optional<Error> err) {
          if (j) jobs = *j;
          run.finish(err);
        });
      }, g.timeout_s * 3);
      print_jobs(jobs, g.format);
      return 0;
    };
  });

  auto* cancel = app.add_subcommand("cancel", "cancel a job");
  cancel->add_option("job_id", job_id)->required();
  cancel->callback([&] {
    action = [&] {
      ClientRun run(g);
      json job;
      run.run([&] {
        run.session().cancel(job_id, [&](std::optional<json> j, std::optional<Error> err) {
          if (j) job = *j;
          run.finish(err);
        });
      }, g.timeout_s * 3);
      print_job(job, g.format);
      return 0;
    };
  });

  auto* download = app.add_subcommand("download", "write a completed job's result to a file");
  std::string dest;
  download->add_option("job_id", job_id)->required();
  download->add_option("dest", dest)->required();
  download->callback([&] {
    action = [&] {
      ClientRun run(g);
      run.run([&] {
        run.session().status(job_id, [&](std::optional<json> j, std::optional<Error> err) {
          if (!j) return run.finish(err);
          if (j->value("status", "") != job_status::completed) {
            return run.finish(Error(ErrorCode::invalid_state,
                                    "job is " + j->value("status", std::string("?")) + ", not completed"));
          }
          run.session().download(job_id, "", [&](std::optional<std::string> data, std::optional<Error> e) {
            if (!data) return run.finish(e);
            std::ofstream f(dest, std::ios::binary);
            if (!f) return run.finish(Error(ErrorCode::io, "cannot write '" + dest + "'"));
            f << *data;
            run.finish();
          });
        });
      }, g.timeout_s * 3);
      return 0;
    };
  });

  // Nodes.
  auto* broker_cmd = app.add_subcommand("broker", "message broker");
  auto* broker_serve = broker_cmd->add_subcommand("serve", "run the broker");
  broker_cmd->require_subcommand(1);
  std::uint16_t port = kDefaultBrokerPort;
  std::string journal;
  broker_serve->add_option("--port", port);
  broker_serve->add_option("--journal", journal, "durable journal file (replayed on start)");
  broker_serve->callback([&] { action = [&] { return serve_broker(port, journal); }; });

  auto* orch_cmd = app.add_subcommand("orchestrator", "orchestrator replica");
  orch_cmd->require_subcommand(1);
  auto* orch_serve = orch_cmd->add_subcommand("serve", "run an orchestrator replica");
  std::string orch_name, role = "backup", blob_host = "127.0.0.1";
  std::uint16_t blob_port = 0;
  double orch_heartbeat = 1.0, detection = 30.0, worker_heartbeat = 10.0;
  orch_serve->add_option("--name", orch_name)->required();
  orch_serve->add_option("--role", role, "primary starts the group; backup joins it")
      ->check(CLI::IsMember({"primary", "backup"}));
  orch_serve->add_option("--blob-host", blob_host);
  orch_serve->add_option("--blob-port", blob_port, "0 picks a free port");
  orch_serve->add_option("--heartbeat", orch_heartbeat, "replica heartbeat seconds");
  orch_serve->add_option("--detection-timeout", detection, "worker failure timeout seconds");
  orch_serve->add_option("--worker-heartbeat", worker_heartbeat);
  orch_serve->callback([&] {
    action = [&] {
      return serve_orchestrator(g, orch_name, role, blob_host, blob_port, orch_heartbeat, detection,
                                worker_heartbeat);
    };
  });

  auto* worker_cmd = app.add_subcommand("worker", "worker node");
  worker_cmd->require_subcommand(1);
  auto* worker_serve = worker_cmd->add_subcommand("serve", "run a worker");
  std::string worker_name = "worker";
  double interval = 0.0, ckpt_cost = 0.0, heartbeat = 10.0;
  worker_serve->add_option("--name", worker_name);
  worker_serve->add_option("--checkpoint-interval", interval, "execution seconds; 0 disables");
  worker_serve->add_option("--checkpoint-cost", ckpt_cost, "extra pause per checkpoint");
  worker_serve->add_option("--heartbeat", heartbeat);
  worker_serve->callback([&] {
    action = [&] { return serve_worker(g, worker_name, interval, ckpt_cost, heartbeat); };
  });

  // Optimizer.
  auto* opt = app.add_subcommand("optimize", "optimal checkpoint count for a job");
  double mu = 0.0, T = 0.0, C = 0.0;
  std::int64_t table_max_n = 0;
  opt->add_option("--mu", mu, "fault rate per second")->required();
  opt->add_option("--T", T, "fault-free execution seconds")->required();
  opt->add_option("--C", C, "checkpoint cost seconds")->required();
  opt->add_option("--table-max-n", table_max_n, "also print E_Y for N = 1..n");
  opt->callback([&] { action = [&] { return optimize(mu, T, C, table_max_n, g.format); }; });

  // Simulation.
  auto* sim = app.add_subcommand("sim", "discrete-event simulation");
  sim->require_subcommand(1);
  auto* sim_run_cmd = sim->add_subcommand("run", "simulate a JSON config");
  std::string config_path, out = "sim-out";
  std::uint64_t trials = 1, seed_value = 1;
  bool plot = false;
  sim_run_cmd->add_option("--config", config_path)->required();
  sim_run_cmd->add_option("--trials", trials);
  auto* seed_opt = sim_run_cmd->add_option("--seed", seed_value);
  sim_run_cmd->add_option("--out", out);
  sim_run_cmd->add_flag("--plot-script", plot);
  sim_run_cmd->callback([&] {
    action = [&] {
      std::optional<std::uint64_t> seed;
      if (seed_opt->count() > 0) seed = seed_value;
      return sim_run(config_path, trials, seed, out, plot, g.format);
    };
  });
  auto* sim_exp = sim->add_subcommand("experiment", "run a registered experiment");
  std::string exp_name, sim_mode = "model_faithful";
  std::uint64_t exp_trials = 0;
  sim_exp->add_option("name", exp_name)->required();
  sim_exp->add_option("--trials", exp_trials, "per arm; 0 uses the experiment default");
  sim_exp->add_option("--seed", seed_value);
  sim_exp->add_option("--mode", sim_mode);
  sim_exp->add_option("--out", out);
  sim_exp->add_flag("--plot-script", plot);
  sim_exp->callback([&] {
    action = [&] { return sim_experiment(exp_name, exp_trials, seed_value, sim_mode, out, plot, g.format); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_code(ErrorCode::usage);
  }
  try {
    return action ? action() : exit_code(ErrorCode::usage);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
