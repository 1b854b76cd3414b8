// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/blob.hpp"

#include "offload/codec.hpp"
#include "offload/errors.hpp"

namespace offload {

void BlobStore::put(const std::string& key, std::string data) {
  std::lock_guard lock(mu_);
  blobs_[key] = std::move(data);
}

std::optional<std::string> BlobStore::get(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = blobs_.find(key);
  if (it == blobs_.end()) return std::nullopt;
  return it->second;
}

bool BlobStore::contains(const std::string& key) const {
  std::lock_guard lock(mu_);
  return blobs_.contains(key);
}

void BlobStore::erase(const std::string& key) {
  std::lock_guard lock(mu_);
  blobs_.erase(key);
}

std::size_t BlobStore::size() const {
  std::lock_guard lock(mu_);
  return blobs_.size();
}

namespace sim {

void BlobNetwork::attach(const std::string& endpoint, BlobStore* store) {
  endpoints_[endpoint] = {store, true};
}

void BlobNetwork::set_alive(const std::string& endpoint, bool alive) {
  auto it = endpoints_.find(endpoint);
  if (it != endpoints_.end()) it->second.second = alive;
}

BlobStore* BlobNetwork::lookup(const std::string& endpoint) const {
  auto it = endpoints_.find(endpoint);
  if (it == endpoints_.end() || !it->second.second) return nullptr;
  return it->second.first;
}

void SimBlobClient::put(const std::string& endpoint, const std::string& key, std::string data,
                        PutDone done) {
  const double lat = net_.latency();
  EventQueue& q = node_.queue();
  // The request reaches the server even if the sender dies meanwhile; only
  // the reply is bound to the sender's incarnation.
  q.schedule_at(q.now() + lat, [net = &net_, &q, life = node_.lifetime(), endpoint, key,
                                data = std::move(data), done = std::move(done), lat]() mutable {
    BlobStore* store = net->lookup(endpoint);
    const bool ok = store != nullptr;
    if (ok) store->put(key, std::move(data));
    q.schedule_at(q.now() + lat, [life, done = std::move(done), ok] {
      if (*life) done(ok);
    });
  });
}

void SimBlobClient::get(const std::string& endpoint, const std::string& key, GetDone done) {
  const double lat = net_.latency();
  EventQueue& q = node_.queue();
  q.schedule_at(q.now() + lat, [net = &net_, &q, life = node_.lifetime(), endpoint, key,
                                done = std::move(done), lat]() mutable {
    BlobStore* store = net->lookup(endpoint);
    std::optional<std::string> data;
    if (store != nullptr) data = store->get(key);
    q.schedule_at(q.now() + lat, [life, done = std::move(done), data = std::move(data)]() mutable {
      if (*life) done(std::move(data));
    });
  });
}

}  // namespace sim

namespace {

json blob_call(const std::string& endpoint, const json& request, double timeout_s) {
  const auto [host, port] = net::parse_endpoint(endpoint);
  net::Socket s = net::connect_tcp(host, port, timeout_s);
  net::set_recv_timeout(s, timeout_s);
  net::write_frame(s, request.dump());
  auto frame = net::read_frame(s);
  if (!frame) fail(ErrorCode::io, "blob server closed the connection");
  json reply = json::parse(*frame, nullptr, false);
  if (reply.is_discarded() || !reply.is_object()) fail(ErrorCode::protocol, "malformed blob reply");
  if (!reply.value("ok", false)) {
    const json err = reply.value("error", json::object());
    const std::string code = err.value("code", "");
    fail(code == "not_found" ? ErrorCode::not_found : ErrorCode::io,
         "blob server: " + err.value("message", std::string("request failed")));
  }
  return reply;
}

}  // namespace

void TcpBlobClient::put_sync(const std::string& endpoint, const std::string& key,
                             const std::string& data, double timeout_s) {
  blob_call(endpoint, {{"op", "put"}, {"key", key}, {"data", base64_encode(data)}}, timeout_s);
}

std::string TcpBlobClient::get_sync(const std::string& endpoint, const std::string& key,
                                    double timeout_s) {
  const json reply = blob_call(endpoint, {{"op", "get"}, {"key", key}}, timeout_s);
  return base64_decode(reply.at("data").get<std::string>());
}

void TcpBlobClient::put(const std::string& endpoint, const std::string& key, std::string data,
                        PutDone done) {
  bool ok = true;
  try {
    put_sync(endpoint, key, data, timeout_s_);
  } catch (const Error&) {
    ok = false;
  }
  exec_.post([done = std::move(done), ok] { done(ok); });
}

void TcpBlobClient::get(const std::string& endpoint, const std::string& key, GetDone done) {
  std::optional<std::string> data;
  try {
    data = get_sync(endpoint, key, timeout_s_);
  } catch (const Error&) {
  }
  exec_.post([done = std::move(done), data = std::move(data)]() mutable { done(std::move(data)); });
}

BlobServer::BlobServer(BlobStore& store, std::uint16_t port)
    : store_(store), listener_(net::listen_tcp(port)), port_(net::local_port(listener_)) {
  acceptor_ = std::thread([this] {
    while (!stopping_) {
      net::Socket conn = net::accept_tcp(listener_);
      if (!conn.valid()) break;
      auto shared = std::make_shared<net::Socket>(std::move(conn));
      std::lock_guard lock(mu_);
      if (stopping_) break;
      conns_.push_back(shared);
      workers_.emplace_back([this, shared] { serve(shared); });
    }
  });
}

BlobServer::~BlobServer() { stop(); }

void BlobServer::stop() {
  if (stopping_.exchange(true)) return;
  listener_.shutdown();
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    for (auto& c : conns_) c->shutdown();
    workers = std::move(workers_);
  }
  for (auto& t : workers) t.join();
}

void BlobServer::serve(std::shared_ptr<net::Socket> conn) {
  try {
    while (auto frame = net::read_frame(*conn)) {
      json reply;
      json req = json::parse(*frame, nullptr, false);
      try {
        if (req.is_discarded() || !req.is_object()) fail(ErrorCode::parse, "malformed request");
        const std::string op = req.at("op").get<std::string>();
        const std::string key = req.at("key").get<std::string>();
        if (op == "put") {
          store_.put(key, base64_decode(req.at("data").get<std::string>()));
          reply = {{"ok", true}};
        } else if (op == "get") {
          auto data = store_.get(key);
          if (!data) fail(ErrorCode::not_found, "no blob '" + key + "'");
          reply = {{"ok", true}, {"data", base64_encode(*data)}};
        } else {
          fail(ErrorCode::protocol, "unknown op '" + op + "'");
        }
      } catch (const Error& e) {
        reply = {{"ok", false}, {"error", {{"code", to_string(e.code())}, {"message", e.what()}}}};
      } catch (const json::exception& e) {
        reply = {{"ok", false}, {"error", {{"code", "schema"}, {"message", e.what()}}}};
      }
      net::write_frame(*conn, reply.dump());
    }
  } catch (const Error&) {
    // Connection dropped.
  }
}

}  // namespace offload
