/*
 * Copyright 2026 The mmfhe Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MMFHE_NET_HPP_
#define MMFHE_NET_HPP_

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/evp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mmfhe/errors.hpp"

namespace mmfhe::net {

using Json = nlohmann::json;
using Millis = std::chrono::milliseconds;

inline constexpr int kWireVersion = 1;
inline constexpr std::uint32_t kMaxFrameBytes = 256u << 20;

// ---------------------------------------------------------------------------
// base64

inline std::string base64_encode(const std::uint8_t *data, std::size_t n) {
  std::string out(4 * ((n + 2) / 3), '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char *>(out.data()),
                                  data, static_cast<int>(n));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view s) {
  if (s.size() % 4 != 0) throw ProtocolError("base64: bad length");
  std::vector<std::uint8_t> out(3 * (s.size() / 4));
  const int len = EVP_DecodeBlock(out.data(),
                                  reinterpret_cast<const unsigned char *>(s.data()),
                                  static_cast<int>(s.size()));
  if (len < 0) throw ProtocolError("base64: invalid characters");
  std::size_t pad = 0;
  if (!s.empty() && s.back() == '=') ++pad;
  if (s.size() > 1 && s[s.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(len) - pad);
  return out;
}

// ---------------------------------------------------------------------------
// Framing: 4-byte big-endian length, then a UTF-8 JSON body.

inline std::string encode_frame(std::string_view body) {
  if (body.size() > kMaxFrameBytes) throw ProtocolError("frame too large");
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(body.size() + 4);
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out.append(body);
  return out;
}

inline std::uint32_t frame_length(std::string_view prefix) {
  if (prefix.size() != 4) throw ProtocolError("frame: short length prefix");
  const auto *p = reinterpret_cast<const unsigned char *>(prefix.data());
  const std::uint32_t n = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                          (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
  if (n > kMaxFrameBytes) throw ProtocolError("frame: length exceeds limit");
  return n;
}

/// Parses a frame body and checks the wire version.
inline Json parse_body(std::string_view body) {
  Json j = Json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ProtocolError("frame: malformed body");
  const auto v = j.find("v");
  if (v == j.end() || !v->is_number_integer() || v->get<int>() != kWireVersion) {
    throw ProtocolError("frame: unsupported version");
  }
  if (!j.contains("kind") || !j["kind"].is_string()) {
    throw ProtocolError("frame: missing kind");
  }
  return j;
}

/// Decodes exactly one complete frame.
inline Json decode_frame(std::string_view wire) {
  if (wire.size() < 4) throw ProtocolError("frame: truncated");
  const std::uint32_t n = frame_length(wire.substr(0, 4));
  if (wire.size() - 4 != n) throw ProtocolError("frame: length mismatch");
  return parse_body(wire.substr(4));
}

// ---------------------------------------------------------------------------
// Connections

/// Bidirectional byte stream carrying frames.
class Connection {
 public:
  virtual ~Connection() = default;

  virtual void write_bytes(std::string_view bytes) = 0;
  /// Exactly n bytes; throws ProtocolError on timeout or peer close.
  virtual std::string read_bytes(std::size_t n, Millis timeout) = 0;
  virtual void close() = 0;

  void send(const Json &msg) {
    Json m = msg;
    m["v"] = kWireVersion;
    write_bytes(encode_frame(m.dump()));
  }

  Json recv(Millis timeout) {
    const std::uint32_t n = frame_length(read_bytes(4, timeout));
    return parse_body(read_bytes(n, timeout));
  }
};

namespace detail {

struct PipeBuffer {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<char> data;
  bool closed = false;
};

class PipeEnd final : public Connection {
 public:
  PipeEnd(std::shared_ptr<PipeBuffer> in, std::shared_ptr<PipeBuffer> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  ~PipeEnd() override { close(); }

  void write_bytes(std::string_view bytes) override {
    std::lock_guard lk(out_->mu);
    if (out_->closed) throw ProtocolError("connection closed");
    out_->data.insert(out_->data.end(), bytes.begin(), bytes.end());
    out_->cv.notify_all();
  }

  std::string read_bytes(std::size_t n, Millis timeout) override {
    std::unique_lock lk(in_->mu);
    const bool ready = in_->cv.wait_for(lk, timeout, [&] {
      return in_->data.size() >= n || in_->closed;
    });
    if (in_->data.size() < n) {
      throw ProtocolError(ready ? "connection closed by peer" : "receive timed out");
    }
    std::string out(in_->data.begin(), in_->data.begin() + static_cast<long>(n));
    in_->data.erase(in_->data.begin(), in_->data.begin() + static_cast<long>(n));
    return out;
  }

  void close() override {
    for (auto *b : {in_.get(), out_.get()}) {
      std::lock_guard lk(b->mu);
      b->closed = true;
      b->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<PipeBuffer> in_;
  std::shared_ptr<PipeBuffer> out_;
};

}  // namespace detail

/// Connected pair of in-process endpoints.
inline std::pair<std::unique_ptr<Connection>, std::unique_ptr<Connection>>
make_pipe() {
  auto a = std::make_shared<detail::PipeBuffer>();
  auto b = std::make_shared<detail::PipeBuffer>();
  return {std::make_unique<detail::PipeEnd>(a, b),
          std::make_unique<detail::PipeEnd>(b, a)};
}

class TcpConnection final : public Connection {
 public:
  explicit TcpConnection(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  ~TcpConnection() override { close(); }
  TcpConnection(const TcpConnection &) = delete;
  TcpConnection &operator=(const TcpConnection &) = delete;

  void write_bytes(std::string_view bytes) override {
    std::size_t off = 0;
    while (off < bytes.size()) {
      const ssize_t w = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (w < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("send failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(w);
    }
  }

  std::string read_bytes(std::size_t n, Millis timeout) override {
    std::string out(n, '\0');
    std::size_t off = 0;
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (off < n) {
      const auto left = std::chrono::duration_cast<Millis>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw ProtocolError("receive timed out");
      pollfd p{fd_, POLLIN, 0};
      const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
      if (rc < 0 && errno == EINTR) continue;
      if (rc < 0) throw ProtocolError("poll failed");
      if (rc == 0) throw ProtocolError("receive timed out");
      const ssize_t r = ::recv(fd_, out.data() + off, n - off, 0);
      if (r < 0 && errno == EINTR) continue;
      if (r <= 0) throw ProtocolError("connection closed by peer");
      off += static_cast<std::size_t>(r);
    }
    return out;
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_;
};

/// "host:port" with a numeric port.
inline std::pair<std::string, std::uint16_t> parse_endpoint(const std::string &ep) {
  const auto colon = ep.rfind(':');
  if (colon == std::string::npos || colon + 1 == ep.size()) {
    throw InputError("endpoint must be host:port: " + ep);
  }
  const std::string host = ep.substr(0, colon);
  int port = -1;
  try {
    std::size_t pos = 0;
    port = std::stoi(ep.substr(colon + 1), &pos);
    if (pos != ep.size() - colon - 1) port = -1;
  } catch (const std::exception &) {
    port = -1;
  }
  if (port < 0 || port > 65535) throw InputError("bad port in endpoint: " + ep);
  return {host.empty() ? "127.0.0.1" : host, static_cast<std::uint16_t>(port)};
}

inline std::unique_ptr<Connection> tcp_connect(const std::string &endpoint) {
  const auto [host, port] = parse_endpoint(endpoint);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo *res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0) {
    throw ProtocolError("cannot resolve " + endpoint);
  }
  int fd = -1;
  for (addrinfo *ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw ProtocolError("cannot connect to " + endpoint);
  return std::make_unique<TcpConnection>(fd);
}

// ---------------------------------------------------------------------------
// Transports and servers

using Handler = std::function<void(Connection &)>;

/// Opens connections to named endpoints.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::unique_ptr<Connection> connect(const std::string &endpoint) = 0;
};

class TcpTransport final : public Transport {
 public:
  std::unique_ptr<Connection> connect(const std::string &endpoint) override {
    return tcp_connect(endpoint);
  }
};

namespace detail {

/// Counts detached handler threads so that owners can wait for them.
class ThreadGroup {
 public:
  ~ThreadGroup() { wait(); }

  void spawn(std::function<void()> fn) {
    {
      std::lock_guard lk(mu_);
      ++active_;
    }
    std::thread([this, fn = std::move(fn)] {
      fn();
      std::lock_guard lk(mu_);
      --active_;
      cv_.notify_all();
    }).detach();
  }

  void wait() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return active_ == 0; });
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int active_ = 0;
};

inline void serve_guarded(const Handler &h, Connection &c) {
  try {
    h(c);
  } catch (const std::exception &e) {
    try {
      c.send({{"kind", "Error"}, {"message", e.what()}});
    } catch (const std::exception &) {
    }
  }
  c.close();
}

}  // namespace detail

/// Endpoints are names registered in-process; each connection runs its
/// handler on a fresh thread. Frames are byte-identical to TCP.
class InProcessTransport final : public Transport {
 public:
  ~InProcessTransport() override { threads_.wait(); }

  void listen(const std::string &name, Handler h) {
    std::lock_guard lk(mu_);
    handlers_[name] = std::move(h);
  }

  std::unique_ptr<Connection> connect(const std::string &endpoint) override {
    Handler h;
    {
      std::lock_guard lk(mu_);
      const auto it = handlers_.find(endpoint);
      if (it == handlers_.end()) throw ProtocolError("no such endpoint: " + endpoint);
      h = it->second;
    }
    auto [client, server] = make_pipe();
    std::shared_ptr<Connection> srv(std::move(server));
    threads_.spawn([h = std::move(h), srv] { detail::serve_guarded(h, *srv); });
    return std::move(client);
  }

 private:
  std::mutex mu_;
  std::map<std::string, Handler> handlers_;
  detail::ThreadGroup threads_;
};

/// Accept loop on a TCP port (0 picks a free port); one thread per
/// connection.
class TcpServer {
 public:
  TcpServer(const std::string &host, std::uint16_t port, Handler h)
      : handler_(std::move(h)) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw ProtocolError("socket failed");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd_);
      throw InputError("listen address must be an IPv4 literal: " + host);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr *>(&addr), sizeof addr) != 0 ||
        ::listen(fd_, 64) != 0) {
      ::close(fd_);
      throw ProtocolError("cannot listen on " + host + ":" + std::to_string(port));
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr *>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  ~TcpServer() { stop(); }
  TcpServer(const TcpServer &) = delete;
  TcpServer &operator=(const TcpServer &) = delete;

  std::uint16_t port() const { return port_; }

  void stop() {
    if (stopping_.exchange(true)) return;
    if (acceptor_.joinable()) acceptor_.join();
    ::close(fd_);
    threads_.wait();
  }

  /// Blocks until stop() is called from another thread.
  void wait() {
    while (!stopping_) std::this_thread::sleep_for(Millis(200));
  }

 private:
  void accept_loop() {
    while (!stopping_) {
      pollfd p{fd_, POLLIN, 0};
      if (::poll(&p, 1, 100) <= 0) continue;
      const int c = ::accept(fd_, nullptr, nullptr);
      if (c < 0) continue;
      auto conn = std::make_shared<TcpConnection>(c);
      threads_.spawn([this, conn] { detail::serve_guarded(handler_, *conn); });
    }
  }

  Handler handler_;
  int fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  detail::ThreadGroup threads_;
};

}  // namespace mmfhe::net

#endif  // MMFHE_NET_HPP_
