// Copyright 2026 The offload Authors
// SPDX-License-Identifier: Apache-2.0

#include "offload/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

#include "offload/errors.hpp"

namespace offload::net {

namespace {

[[noreturn]] void io_fail(const std::string& what) {
  fail(ErrorCode::io, what + ": " + std::strerror(errno));
}

void write_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      io_fail("send");
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

// False on EOF before the first byte.
bool read_all(int fd, char* data, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, data + got, n - got, 0);
    if (r == 0) {
      if (got == 0) return false;
      fail(ErrorCode::io, "connection closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      io_fail("recv");
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

}  // namespace

void Socket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

Socket listen_tcp(std::uint16_t port) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) io_fail("socket");
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(port);
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    io_fail("bind port " + std::to_string(port));
  }
  if (::listen(s.fd(), 64) < 0) io_fail("listen");
  return s;
}

std::uint16_t local_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) < 0) io_fail("getsockname");
  return ntohs(addr.sin_port);
}

Socket accept_tcp(const Socket& listener) {
  for (;;) {
    const int fd = ::accept(listener.fd(), nullptr, nullptr);
    if (fd >= 0) {
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return Socket(fd);
    }
    if (errno == EINTR || errno == ECONNABORTED) continue;
    return Socket();
  }
}

Socket connect_tcp(const std::string& host, std::uint16_t port, double timeout_s) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0 || res == nullptr) {
    fail(ErrorCode::io, "cannot resolve host '" + host + "'");
  }
  Socket s(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
  if (!s.valid()) {
    ::freeaddrinfo(res);
    io_fail("socket");
  }
  timeval tv{};
  tv.tv_sec = static_cast<long>(timeout_s);
  tv.tv_usec = static_cast<long>((timeout_s - static_cast<double>(tv.tv_sec)) * 1e6);
  ::setsockopt(s.fd(), SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
  const int rc = ::connect(s.fd(), res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc < 0) io_fail("connect " + host + ":" + service);
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

void set_recv_timeout(const Socket& s, double timeout_s) {
  timeval tv{};
  tv.tv_sec = static_cast<long>(timeout_s);
  tv.tv_usec = static_cast<long>((timeout_s - static_cast<double>(tv.tv_sec)) * 1e6);
  ::setsockopt(s.fd(), SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
}

void write_frame(const Socket& s, std::string_view payload) {
  if (payload.size() > kMaxFrame) fail(ErrorCode::protocol, "frame too large");
  const auto n = static_cast<std::uint32_t>(payload.size());
  const unsigned char header[4] = {static_cast<unsigned char>(n >> 24),
                                   static_cast<unsigned char>(n >> 16),
                                   static_cast<unsigned char>(n >> 8), static_cast<unsigned char>(n)};
  std::string buf(reinterpret_cast<const char*>(header), 4);
  buf.append(payload);
  write_all(s.fd(), buf.data(), buf.size());
}

std::optional<std::string> read_frame(const Socket& s) {
  unsigned char header[4];
  if (!read_all(s.fd(), reinterpret_cast<char*>(header), 4)) return std::nullopt;
  const std::uint32_t n = (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
                          (std::uint32_t{header[2]} << 8) | std::uint32_t{header[3]};
  if (n > kMaxFrame) fail(ErrorCode::protocol, "frame of " + std::to_string(n) + " bytes exceeds limit");
  std::string payload(n, '\0');
  if (n > 0 && !read_all(s.fd(), payload.data(), n)) fail(ErrorCode::io, "connection closed mid-frame");
  return payload;
}

std::pair<std::string, std::uint16_t> parse_endpoint(std::string_view endpoint) {
  const auto colon = endpoint.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == endpoint.size()) {
    fail(ErrorCode::usage, "expected host:port, got '" + std::string(endpoint) + "'");
  }
  unsigned port = 0;
  const std::string_view digits = endpoint.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || port == 0 || port > 65535) {
    fail(ErrorCode::usage, "bad port in '" + std::string(endpoint) + "'");
  }
  return {std::string(endpoint.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

}  // namespace offload::net
