/**
 * Copyright 2026 The Fedloom Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Thin POSIX TCP layer: RAII sockets, a threaded accept loop, and helpers
// to send one framed message per connection.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <functional>
#include <list>
#include <mutex>
#include <string>
#include <thread>
#include <utility>

#include "fedloom/errors.hpp"
#include "fedloom/protocol.hpp"
#include "fedloom/warehouse.hpp"

namespace fedloom {

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

  int fd() const noexcept { return fd_; }
  bool open() const noexcept { return fd_ >= 0; }

  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  void shutdown() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  void write_all(const void* data, std::size_t n) {
    const char* p = static_cast<const char*>(data);
    while (n > 0) {
      const ssize_t k = ::send(fd_, p, n, MSG_NOSIGNAL);
      if (k < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("send failed: ") + std::strerror(errno));
      }
      p += k;
      n -= static_cast<std::size_t>(k);
    }
  }
  void write_all(std::string_view s) { write_all(s.data(), s.size()); }

  /// Reads up to n bytes; 0 means the peer closed.
  std::size_t read_some(void* data, std::size_t n) {
    while (true) {
      const ssize_t k = ::recv(fd_, data, n, 0);
      if (k >= 0) return static_cast<std::size_t>(k);
      if (errno == EINTR) continue;
      throw TransportError(std::string("recv failed: ") + std::strerror(errno));
    }
  }

  /// Throws TransportError if the peer closes before n bytes arrive.
  void read_exact(void* data, std::size_t n) {
    char* p = static_cast<char*>(data);
    while (n > 0) {
      const std::size_t k = read_some(p, n);
      if (k == 0) throw TransportError("connection closed mid-message");
      p += k;
      n -= k;
    }
  }

  void set_timeout(double seconds) {
    timeval tv{};
    tv.tv_sec = static_cast<time_t>(seconds);
    tv.tv_usec = static_cast<suseconds_t>((seconds - static_cast<double>(tv.tv_sec)) * 1e6);
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
  }

 private:
  int fd_ = -1;
};

namespace detail {

inline sockaddr_in resolve(const Address& addr) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(addr.port);
  const std::string host = addr.host == "localhost" ? "127.0.0.1" : addr.host;
  if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) == 1) return sa;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw TransportError("cannot resolve host " + addr.host);
  }
  sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return sa;
}

}  // namespace detail

inline Socket connect_to(const Address& addr, double timeout_seconds = 5.0) {
  const sockaddr_in sa = detail::resolve(addr);
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.open()) throw TransportError(std::string("socket: ") + std::strerror(errno));
  s.set_timeout(timeout_seconds);
  if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&sa), sizeof sa) != 0) {
    throw TransportError("connect to " + addr.str() + " failed: " + std::strerror(errno));
  }
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

/// Binds and listens. Port 0 picks a free port. Throws PortInUse when taken.
inline Socket listen_on(const std::string& host, std::uint16_t port, int backlog = 64) {
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.open()) throw TransportError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in sa = detail::resolve(Address{host.empty() ? "0.0.0.0" : host, port});
  sa.sin_port = htons(port);
  if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&sa), sizeof sa) != 0) {
    if (errno == EADDRINUSE) throw PortInUse("port " + std::to_string(port) + " is already in use");
    throw TransportError("bind to port " + std::to_string(port) + " failed: " + std::strerror(errno));
  }
  if (::listen(s.fd(), backlog) != 0) throw TransportError(std::string("listen: ") + std::strerror(errno));
  return s;
}

inline std::uint16_t local_port(const Socket& s) {
  sockaddr_in sa{};
  socklen_t len = sizeof sa;
  ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&sa), &len);
  return ntohs(sa.sin_port);
}

/// Accepts connections on a background thread and runs `handler` for each on
/// its own thread. stop() (or destruction) closes everything and joins.
class Listener {
 public:
  using Handler = std::function<void(Socket&)>;

  Listener(const std::string& host, std::uint16_t port, Handler handler)
      : sock_(listen_on(host, port)), port_(local_port(sock_)), handler_(std::move(handler)) {
    thread_ = std::thread([this] { accept_loop(); });
  }

  ~Listener() { stop(); }
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  std::uint16_t port() const noexcept { return port_; }

  void stop() {
    if (stopping_.exchange(true)) return;
    sock_.shutdown();
    if (thread_.joinable()) thread_.join();
    std::list<Conn> conns;
    {
      std::lock_guard lock(mu_);
      for (auto& c : conns_) c.sock.shutdown();
      conns.splice(conns.end(), conns_);
    }
    for (auto& c : conns) {
      if (c.thread.joinable()) c.thread.join();
    }
    sock_.close();
  }

 private:
  struct Conn {
    Socket sock;
    std::thread thread;
    std::atomic<bool> done{false};
  };

  void accept_loop() {
    while (!stopping_) {
      pollfd pfd{sock_.fd(), POLLIN, 0};
      const int r = ::poll(&pfd, 1, 100);
      if (r <= 0) {
        reap();
        continue;
      }
      const int fd = ::accept4(sock_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) continue;
      std::lock_guard lock(mu_);
      if (stopping_) {
        ::close(fd);
        break;
      }
      auto& c = conns_.emplace_back();
      c.sock = Socket(fd);
      Conn* cp = &c;
      c.thread = std::thread([this, cp] {
        try {
          handler_(cp->sock);
        } catch (const std::exception&) {
          // A broken peer only costs its own connection.
        }
        cp->sock.shutdown();
        cp->done = true;
      });
    }
  }

  // Joins finished connection threads so a long-lived listener does not grow.
  void reap() {
    std::list<Conn> finished;
    {
      std::lock_guard lock(mu_);
      for (auto it = conns_.begin(); it != conns_.end();) {
        if (it->done) {
          auto next = std::next(it);
          finished.splice(finished.end(), conns_, it);
          it = next;
        } else {
          ++it;
        }
      }
    }
    for (auto& c : finished) c.thread.join();
  }

  Socket sock_;
  std::uint16_t port_;
  Handler handler_;
  std::atomic<bool> stopping_{false};
  std::thread thread_;
  std::mutex mu_;
  std::list<Conn> conns_;
};

// ---------------------------------------------------------------------------
// Framed messages over TCP, one frame per connection.

/// Observer invoked with the encoded bytes of every frame sent. Tests use it
/// to inspect traffic on the message channel.
inline std::function<void(const std::string&)>& frame_send_observer() {
  static std::function<void(const std::string&)> observer;
  return observer;
}

inline std::mutex& frame_send_observer_mutex() {
  static std::mutex mu;
  return mu;
}

inline void send_message(const Address& to, const Message& m, double timeout_seconds = 5.0) {
  const std::string bytes = encode_frame(m);
  {
    std::lock_guard lock(frame_send_observer_mutex());
    if (auto& obs = frame_send_observer()) obs(bytes);
  }
  Socket s = connect_to(to, timeout_seconds);
  s.write_all(bytes);
}

/// Reads frames from a connection until the peer closes. Bad frames are
/// reported to `on_error`; an unknown topic does not end the connection.
inline void read_frames(Socket& s, const std::function<void(const Message&)>& on_message,
                        const std::function<void(const std::exception&)>& on_error) {
  FrameDecoder decoder;
  char buf[16384];
  while (true) {
    const std::size_t n = s.read_some(buf, sizeof buf);
    if (n == 0) return;
    decoder.feed(buf, n);
    while (true) {
      std::optional<Frame> f;
      try {
        f = decoder.next();
      } catch (const MessageTooLarge& e) {
        on_error(e);
        return;
      } catch (const ProtocolError& e) {
        on_error(e);
        continue;
      }
      if (!f) break;
      try {
        on_message(decode_message(*f));
      } catch (const ProtocolError& e) {
        on_error(e);
      }
    }
  }
}

}  // namespace fedloom
