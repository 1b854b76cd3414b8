// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/replica.hpp"

#include <algorithm>

#include "offload/codec.hpp"

namespace offload {

ReplicaManager::ReplicaManager(Executor& exec, BrokerChannel& channel, Rng& rng,
                               ReplicaOptions options, Hooks hooks)
    : exec_(exec),
      channel_(channel),
      rng_(rng),
      options_(std::move(options)),
      hooks_(std::move(hooks)),
      queue_("repl." + options_.name) {}

void ReplicaManager::start() {
  started_at_ = exec_.now();
  channel_.declare_queue(queue_);
  channel_.bind(queue_, std::string(exchange::replication), "");
  channel_.bind(queue_, std::string(exchange::replica), options_.name);
  // Exclusive: a second replica under the same name fails here.
  channel_.consume(queue_, [this](const broker::Delivery& d) { on_delivery(d); }, true);
  for (const auto& m : options_.initial_members) {
    if (m != options_.name) peers_[m] = Peer{started_at_, "", true};
  }
  if (!options_.initial_members.empty() || options_.bootstrap) {
    synced_ = true;
  } else {
    // Learn the group from its heartbeats before asking to join.
    exec_.call_after(options_.heartbeat_interval_s * 1.5, [this] {
      if (!synced_) request_change({{"op", "join"}, {"name", options_.name}});
    });
  }
  heartbeat();
}

void ReplicaManager::publish(std::string_view type, const std::string& exchange,
                             const std::string& key, json body) {
  channel_.publish(exchange, key,
                   Envelope{make_guid(rng_), std::string(type), options_.name, std::nullopt,
                            std::move(body)});
}

std::vector<std::string> ReplicaManager::live_members() const {
  std::vector<std::string> live{options_.name};
  for (const auto& [name, peer] : peers_) {
    if (alive(name)) live.push_back(name);
  }
  std::sort(live.begin(), live.end());
  return live;
}

bool ReplicaManager::alive(const std::string& peer) const {
  if (peer == options_.name) return true;
  auto it = peers_.find(peer);
  return it != peers_.end() && exec_.now() - it->second.last_seen <= options_.promotion_timeout_s;
}

std::map<std::string, std::string> ReplicaManager::peer_endpoints() const {
  std::map<std::string, std::string> out;
  for (const auto& [name, peer] : peers_) {
    if (alive(name) && !peer.blob_endpoint.empty()) out[name] = peer.blob_endpoint;
  }
  return out;
}

std::string ReplicaManager::lock_state() const {
  if (holds_.empty()) return "free";
  std::string s = "held(";
  for (auto it = holds_.begin(); it != holds_.end(); ++it) {
    if (it != holds_.begin()) s += ",";
    s += it->first;
  }
  return s + ")";
}

void ReplicaManager::request_change(json mutation, Done done) {
  const bool join = mutation.value("op", "") == "join";
  if (!synced_ && !join) {
    deferred_.emplace_back(std::move(mutation), std::move(done));
    return;
  }
  const std::string guid = make_guid(rng_);
  if (join) join_guid_ = guid;
  if (mutation.value("op", "") == "promote") promoting_ = guid;
  pending_[guid] = Pending{std::move(mutation), std::move(done), {}, false, 0};
  send_lock_request(guid);
  arm_lock_timer(guid);
}

void ReplicaManager::send_lock_request(const std::string& guid) {
  publish(msg::lock_request, std::string(exchange::replication), "",
          {{"guid", guid}, {"origin", options_.name}});
}

void ReplicaManager::arm_lock_timer(const std::string& guid) {
  auto it = pending_.find(guid);
  if (it == pending_.end()) return;
  it->second.timer = exec_.call_after(options_.lock_timeout_s, [this, guid] { on_lock_timeout(guid); });
}

void ReplicaManager::on_lock_timeout(const std::string& guid) {
  auto it = pending_.find(guid);
  if (it == pending_.end()) return;
  Pending& p = it->second;
  if (p.published) {
    // The change may have been lost with a broker restart; duplicates are
    // skipped by guid.
    publish(msg::change_publish, std::string(exchange::replication), "",
            {{"guid", guid}, {"origin", options_.name}, {"mutation", p.mutation}});
  } else {
    maybe_publish(guid);
    if (pending_.contains(guid) && !pending_[guid].published) send_lock_request(guid);
  }
  if (p.mutation.value("op", "") == "join" && !synced_ && p.published) {
    // Nobody answered with a snapshot; try again under a fresh guid.
    Done done = std::move(p.done);
    pending_.erase(it);
    request_change({{"op", "join"}, {"name", options_.name}}, std::move(done));
    return;
  }
  arm_lock_timer(guid);
}

void ReplicaManager::maybe_publish(const std::string& guid) {
  auto it = pending_.find(guid);
  if (it == pending_.end() || it->second.published) return;
  for (const auto& m : live_members()) {
    if (!it->second.acks.contains(m)) return;
  }
  it->second.published = true;
  publish(msg::change_publish, std::string(exchange::replication), "",
          {{"guid", guid}, {"origin", options_.name}, {"mutation", it->second.mutation}});
}

void ReplicaManager::on_delivery(const broker::Delivery& d) {
  const Envelope& e = *d.envelope;
  try {
    if (e.msg_type == msg::heartbeat) {
      const std::string peer = e.body.at("replica").get<std::string>();
      if (peer != options_.name) {
        Peer& p = peers_[peer];
        p.last_seen = exec_.now();
        p.blob_endpoint = e.body.value("blob_endpoint", "");
        p.synced = e.body.value("synced", false);
      }
    } else if (e.msg_type == msg::lock_request) {
      on_lock_request(e.body);
    } else if (e.msg_type == msg::lock_ack) {
      on_lock_ack(e.body);
    } else if (e.msg_type == msg::change_publish) {
      if (e.body.contains("snapshot")) {
        on_snapshot(e.body);
      } else {
        on_change(e.body);
      }
    }
  } catch (const std::exception&) {
    // Malformed replication traffic is dropped; acking it keeps the queue
    // moving.
  }
  channel_.ack(d);
}

void ReplicaManager::on_lock_request(const json& body) {
  const std::string guid = body.at("guid").get<std::string>();
  const std::string origin = body.at("origin").get<std::string>();
  if (!applied_set_.contains(guid)) holds_[guid] = origin;
  publish(msg::lock_ack, std::string(exchange::replica), origin,
          {{"guid", guid}, {"from", options_.name}});
}

void ReplicaManager::on_lock_ack(const json& body) {
  const std::string guid = body.at("guid").get<std::string>();
  auto it = pending_.find(guid);
  if (it == pending_.end()) return;
  it->second.acks.insert(body.at("from").get<std::string>());
  maybe_publish(guid);
}

void ReplicaManager::on_change(const json& body) {
  Change c{body.at("guid").get<std::string>(), body.at("origin").get<std::string>(),
           body.at("mutation")};
  if (!synced_) {
    buffered_.push_back(std::move(c));
    return;
  }
  apply(c);
}

void ReplicaManager::on_snapshot(const json& body) {
  if (synced_) return;
  const std::string join = body.at("join_guid").get<std::string>();
  auto pos = std::find_if(buffered_.begin(), buffered_.end(),
                          [&](const Change& c) { return c.guid == join; });
  if (pos == buffered_.end()) return;
  store_ = Store::from_json(body.at("snapshot"));
  applied_log_ = body.at("log").get<std::vector<std::string>>();
  applied_set_ = std::set<std::string>(applied_log_.begin(), applied_log_.end());
  std::vector<Change> rest(pos + 1, buffered_.end());
  buffered_.clear();
  for (auto& [guid, p] : pending_) {
    if (p.mutation.value("op", "") == "join") {
      exec_.cancel(p.timer);
      if (p.done) p.done(ApplyResult{});
    }
  }
  std::erase_if(pending_, [](const auto& kv) { return kv.second.mutation.value("op", "") == "join"; });
  become_synced();
  for (const auto& c : rest) apply(c);
}

void ReplicaManager::become_synced() {
  synced_ = true;
  if (hooks_.synced) hooks_.synced();
  auto deferred = std::move(deferred_);
  deferred_.clear();
  for (auto& [m, done] : deferred) request_change(std::move(m), std::move(done));
}

void ReplicaManager::apply(const Change& change) {
  holds_.erase(change.guid);
  if (applied_set_.contains(change.guid) || !is_guid(change.guid)) return;
  const ApplyResult result = store_.apply(change.mutation);
  applied_log_.push_back(change.guid);
  applied_set_.insert(change.guid);

  if (change.mutation.value("op", "") == "join") {
    const std::string joiner = change.mutation.value("name", "");
    if (joiner != options_.name) {
      std::string sender;
      for (const auto& m : live_members()) {
        if (m == joiner) continue;
        if (m == options_.name || peers_[m].synced) {
          sender = m;
          break;
        }
      }
      if (sender == options_.name) {
        publish(msg::change_publish, std::string(exchange::replica), joiner,
                {{"snapshot", store_.to_json()}, {"log", applied_log_}, {"join_guid", change.guid}});
      }
    }
  }

  Done done;
  if (auto it = pending_.find(change.guid); it != pending_.end()) {
    exec_.cancel(it->second.timer);
    done = std::move(it->second.done);
    pending_.erase(it);
  }
  if (change.guid == promoting_) promoting_.clear();
  if (hooks_.applied) hooks_.applied(change, result);
  if (done) done(result);
}

void ReplicaManager::heartbeat() {
  publish(msg::heartbeat, std::string(exchange::replication), "",
          {{"replica", options_.name},
           {"blob_endpoint", options_.blob_endpoint},
           {"synced", synced_},
           {"applied", store_.applied()}});
  // Holds of replicas that died mid-procedure would never be released.
  std::erase_if(holds_, [this](const auto& kv) { return !alive(kv.second); });
  check_primary();
  exec_.call_after(options_.heartbeat_interval_s, [this] { heartbeat(); });
}

void ReplicaManager::check_primary() {
  if (!synced_ || !promoting_.empty()) return;
  const std::string primary = store_.primary();
  if (primary == options_.name) return;
  if (!primary.empty() && alive(primary)) return;
  if (primary.empty() && options_.prefer_primary) {
    request_change({{"op", "promote"}, {"name", options_.name}, {"previous", primary}});
    return;
  }
  if (primary.empty() &&
      exec_.now() - started_at_ < options_.promotion_timeout_s) {
    return;
  }
  for (const auto& m : live_members()) {
    if (m == primary) continue;
    if (m != options_.name && !peers_[m].synced) continue;
    if (m != options_.name) return;  // a smaller-named backup takes over
    request_change({{"op", "promote"}, {"name", options_.name}, {"previous", primary}});
    return;
  }
}

}  // namespace offload
