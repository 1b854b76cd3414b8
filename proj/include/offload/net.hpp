// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

// TCP helpers shared by the broker backend and the blob channel.
//
// Frame: 4-byte big-endian unsigned payload length, then the payload (a
// UTF-8 JSON object). Payloads above kMaxFrame are rejected.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

namespace offload::net {

inline constexpr std::uint32_t kMaxFrame = 64u << 20;

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { close(); }
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close();
  /// Wakes up a thread blocked in read/accept on this socket.
  void shutdown();

 private:
  int fd_ = -1;
};

/// Listens on 0.0.0.0:`port` (0 picks a free port). Error(io) if the port is
/// taken.
Socket listen_tcp(std::uint16_t port);
std::uint16_t local_port(const Socket& s);
/// Blocks; returns an invalid socket once the listener is shut down.
Socket accept_tcp(const Socket& listener);
Socket connect_tcp(const std::string& host, std::uint16_t port, double timeout_s = 5.0);

/// Reads on `s` fail with Error(io) after `timeout_s` of silence.
void set_recv_timeout(const Socket& s, double timeout_s);

void write_frame(const Socket& s, std::string_view payload);
/// nullopt on orderly EOF. Error(io) on errors, Error(protocol) on oversized
/// frames.
std::optional<std::string> read_frame(const Socket& s);

/// "host:port" -> pair. Error(usage) when malformed.
std::pair<std::string, std::uint16_t> parse_endpoint(std::string_view endpoint);

}  // namespace offload::net
