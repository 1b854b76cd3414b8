// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// Blob channel: opaque byte strings keyed by string, served by each
// orchestrator. Job inputs, checkpoint states and results travel here.
//
// Live endpoints are "host:port" and speak broker-style frames:
//   request  {"op":"put","key":K,"data":<base64>} | {"op":"get","key":K}
//   response {"ok":true} | {"ok":true,"data":<base64>} |
//            {"ok":false,"error":{"code":C,"message":M}}
// Simulated endpoints are plain names resolved through a BlobNetwork.

#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "offload/net.hpp"
#include "offload/runtime.hpp"

namespace offload {

/// Thread-safe in-memory blob map.
class BlobStore {
 public:
  void put(const std::string& key, std::string data);
  std::optional<std::string> get(const std::string& key) const;
  bool contains(const std::string& key) const;
  void erase(const std::string& key);
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::string> blobs_;
};

/// Asynchronous client; callbacks run on the caller's executor.
class BlobClient {
 public:
  using PutDone = std::function<void(bool ok)>;
  using GetDone = std::function<void(std::optional<std::string>)>;
  virtual ~BlobClient() = default;
  virtual void put(const std::string& endpoint, const std::string& key, std::string data,
                   PutDone done) = 0;
  virtual void get(const std::string& endpoint, const std::string& key, GetDone done) = 0;
};

namespace sim {

/// Maps endpoint names to stores; a dead endpoint refuses requests.
class BlobNetwork {
 public:
  explicit BlobNetwork(EventQueue& queue) : queue_(queue) {}
  void attach(const std::string& endpoint, BlobStore* store);
  void set_alive(const std::string& endpoint, bool alive);
  void set_latency(double latency_s) { latency_ = latency_s; }
  double latency() const { return latency_; }
  /// nullptr when unknown or dead.
  BlobStore* lookup(const std::string& endpoint) const;

 private:
  EventQueue& queue_;
  double latency_ = 0.0;
  std::map<std::string, std::pair<BlobStore*, bool>> endpoints_;
};

/// Request and response each take one network latency.
class SimBlobClient final : public BlobClient {
 public:
  SimBlobClient(BlobNetwork& net, NodeExecutor& node) : net_(net), node_(node) {}
  void put(const std::string& endpoint, const std::string& key, std::string data,
           PutDone done) override;
  void get(const std::string& endpoint, const std::string& key, GetDone done) override;

 private:
  BlobNetwork& net_;
  NodeExecutor& node_;
};

}  // namespace sim

/// Blocking TCP client; the callback is posted to `exec`.
class TcpBlobClient final : public BlobClient {
 public:
  explicit TcpBlobClient(Executor& exec, double timeout_s = 5.0) : exec_(exec), timeout_s_(timeout_s) {}
  void put(const std::string& endpoint, const std::string& key, std::string data,
           PutDone done) override;
  void get(const std::string& endpoint, const std::string& key, GetDone done) override;

  /// Synchronous forms used by the CLI. Throw Error on failure.
  static void put_sync(const std::string& endpoint, const std::string& key, const std::string& data,
                       double timeout_s = 5.0);
  static std::string get_sync(const std::string& endpoint, const std::string& key,
                              double timeout_s = 5.0);

 private:
  Executor& exec_;
  double timeout_s_;
};

/// Serves a BlobStore on a TCP port, one thread per connection.
class BlobServer {
 public:
  BlobServer(BlobStore& store, std::uint16_t port);
  ~BlobServer();
  std::uint16_t port() const { return port_; }
  void stop();

 private:
  void serve(std::shared_ptr<net::Socket> conn);

  BlobStore& store_;
  net::Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::shared_ptr<net::Socket>> conns_;
  std::vector<std::thread> workers_;
};

}  // namespace offload
