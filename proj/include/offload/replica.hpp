// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// Passive replication of the orchestrator Store over the broker.
//
// Every replica consumes "repl.{name}", bound to the replication fanout (one
// total order for all replicas) and to the direct "replica" exchange under
// its own name (point-to-point lock acknowledgements and state transfer).
//
// A change goes through the lock procedure:
//   1. the requester multicasts lockRequest{guid, origin};
//   2-3. each replica records the hold and answers lockAck{guid, from};
//   4. once acks cover every live member the requester multicasts
//      changePublish{guid, origin, mutation};
//   5-6. every replica applies changes in fanout order, skipping guids it has
//      already applied, and drops the hold.
// A requester that does not collect its acks in time re-evaluates membership
// and re-sends with the same guid. Membership is derived from replica
// heartbeats on the fanout.
//
// A replica that starts after others have applied changes joins through a
// `join` change; the smallest-named synced peer answers with a snapshot taken
// right after applying it, and the joiner discards fanout traffic up to its
// own join.

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "offload/rng.hpp"
#include "offload/runtime.hpp"
#include "offload/store.hpp"

namespace offload {

struct ReplicaOptions {
  std::string name;
  std::string blob_endpoint;
  double heartbeat_interval_s = 1.0;
  double promotion_timeout_s = 3.0;
  double lock_timeout_s = 1.0;
  /// Replicas started together with empty stores; they skip the join.
  std::vector<std::string> initial_members;
  /// Start synced with an empty store even without initial members (the
  /// first replica of a group).
  bool bootstrap = false;
  /// Promote at once if the group has no primary yet.
  bool prefer_primary = false;
};

struct Change {
  std::string guid;
  std::string origin;
  json mutation;
};

class ReplicaManager {
 public:
  using Done = std::function<void(const ApplyResult&)>;
  struct Hooks {
    std::function<void(const Change&, const ApplyResult&)> applied;
    std::function<void()> synced;
  };

  ReplicaManager(Executor& exec, BrokerChannel& channel, Rng& rng, ReplicaOptions options,
                 Hooks hooks);
  ReplicaManager(const ReplicaManager&) = delete;
  ReplicaManager& operator=(const ReplicaManager&) = delete;

  void start();

  /// Runs the lock procedure for `mutation`; `done` fires after the local
  /// replica applied it. Requests made before the replica is synced wait.
  void request_change(json mutation, Done done = nullptr);

  const Store& store() const { return store_; }
  const std::string& name() const { return options_.name; }
  bool synced() const { return synced_; }
  bool is_primary() const { return synced_ && store_.primary() == options_.name; }
  /// Sorted, includes this replica.
  std::vector<std::string> live_members() const;
  bool alive(const std::string& peer) const;
  /// Blob endpoints advertised by live peers (excluding this replica).
  std::map<std::string, std::string> peer_endpoints() const;
  const std::vector<std::string>& applied_log() const { return applied_log_; }
  /// "free" or "held(<guid>,...)".
  std::string lock_state() const;
  std::size_t pending_requests() const { return pending_.size(); }

 private:
  struct Peer {
    double last_seen = 0.0;
    std::string blob_endpoint;
    bool synced = false;
  };
  struct Pending {
    json mutation;
    Done done;
    std::set<std::string> acks;
    bool published = false;
    TimerId timer = 0;
  };

  void on_delivery(const broker::Delivery& d);
  void on_lock_request(const json& body);
  void on_lock_ack(const json& body);
  void on_change(const json& body);
  void on_snapshot(const json& body);
  void apply(const Change& change);
  void maybe_publish(const std::string& guid);
  void arm_lock_timer(const std::string& guid);
  void on_lock_timeout(const std::string& guid);
  void send_lock_request(const std::string& guid);
  void heartbeat();
  void check_primary();
  void become_synced();
  void publish(std::string_view type, const std::string& exchange, const std::string& key, json body);

  Executor& exec_;
  BrokerChannel& channel_;
  Rng& rng_;
  ReplicaOptions options_;
  Hooks hooks_;
  std::string queue_;
  double started_at_ = 0.0;

  Store store_;
  bool synced_ = false;
  std::string join_guid_;
  std::vector<Change> buffered_;  // fanout changes seen before the snapshot
  std::vector<std::pair<json, Done>> deferred_;
  std::vector<std::string> applied_log_;
  std::set<std::string> applied_set_;
  std::map<std::string, std::string> holds_;  // guid -> origin
  std::map<std::string, Pending> pending_;
  std::map<std::string, Peer> peers_;
  std::string promoting_;  // guid of our own promote request in flight
};

}  // namespace offload
