#pragma once

// Byte transports connecting N workers pairwise, plus the token bucket used
// to throttle a sender. Each directed pair (from, to) must have at most one
// sending and one receiving thread at a time.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <arpa/inet.h>
#include <cerrno>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include "mxcomm/error.hpp"

namespace mxcomm {

/// Releases `rate` bytes per second of send credit in whole 1 ms quanta, up
/// to `capacity` bytes of accumulated credit.
class TokenBucket {
 public:
  using Clock = std::chrono::steady_clock;
  static constexpr auto kQuantum = std::chrono::milliseconds(1);

  TokenBucket(double rate_bytes_per_s, double capacity_bytes)
      : per_quantum_(rate_bytes_per_s * 1e-3), capacity_(capacity_bytes), tokens_(capacity_bytes), last_(Clock::now()) {
    if (!(rate_bytes_per_s > 0.0) || !(capacity_bytes > 0.0)) {
      fail(ErrorCode::InvalidArgument, "token bucket rate and capacity must be positive");
    }
  }

  double capacity() const noexcept { return capacity_; }

  /// Blocks until `bytes` of credit are available, then consumes them.
  void acquire(std::size_t bytes) {
    const auto need = static_cast<double>(bytes);
    if (need > capacity_) {
      fail(ErrorCode::InvalidArgument, "request of " + std::to_string(bytes) + " bytes exceeds bucket capacity");
    }
    std::unique_lock lock(mu_);
    while (true) {
      refill(Clock::now());
      if (tokens_ >= need) {
        tokens_ -= need;
        return;
      }
      const auto wake = last_ + kQuantum;
      lock.unlock();
      std::this_thread::sleep_until(wake);
      lock.lock();
    }
  }

 private:
  void refill(Clock::time_point now) {
    const auto quanta = (now - last_) / kQuantum;
    if (quanta <= 0) return;
    tokens_ = std::min(capacity_, tokens_ + per_quantum_ * static_cast<double>(quanta));
    last_ += quanta * kQuantum;
  }

  std::mutex mu_;
  double per_quantum_;
  double capacity_;
  double tokens_;
  Clock::time_point last_;
};

enum class TransportKind { InProcess, Tcp };

inline std::string to_string(TransportKind k) { return k == TransportKind::InProcess ? "inproc" : "tcp"; }

inline TransportKind parse_transport(std::string_view s) {
  if (s == "inproc") return TransportKind::InProcess;
  if (s == "tcp") return TransportKind::Tcp;
  fail(ErrorCode::InvalidArgument, "unknown transport '" + std::string(s) + "' (expected inproc or tcp)");
}

class Transport {
 public:
  virtual ~Transport() = default;
  virtual int size() const = 0;
  virtual TransportKind kind() const = 0;
  /// Blocks until all of `data` has been handed to the channel from -> to.
  virtual void send(int from, int to, std::span<const std::uint8_t> data) = 0;
  /// Blocks until `data` is completely filled from the channel from -> at.
  virtual void recv(int at, int from, std::span<std::uint8_t> data) = 0;
  /// Wakes every blocked send/recv with TransportFailure. Irreversible.
  virtual void abort() = 0;
};

namespace detail {

// Bounded single-producer single-consumer byte ring.
class RingPipe {
 public:
  explicit RingPipe(std::size_t capacity) : buf_(capacity) {}

  void write(std::span<const std::uint8_t> data, const std::atomic<bool>& aborted) {
    std::size_t done = 0;
    while (done < data.size()) {
      std::unique_lock lock(mu_);
      not_full_.wait(lock, [&] { return aborted || written_ - read_ < buf_.size(); });
      if (aborted) fail(ErrorCode::TransportFailure, "transport aborted during send");
      const std::size_t pos = written_ % buf_.size();
      const std::size_t n = std::min({data.size() - done, buf_.size() - (written_ - read_), buf_.size() - pos});
      lock.unlock();
      // Only the producer touches [pos, pos + n) until written_ advances.
      std::memcpy(buf_.data() + pos, data.data() + done, n);
      lock.lock();
      written_ += n;
      done += n;
      not_empty_.notify_one();
    }
  }

  void read(std::span<std::uint8_t> data, const std::atomic<bool>& aborted) {
    std::size_t done = 0;
    while (done < data.size()) {
      std::unique_lock lock(mu_);
      not_empty_.wait(lock, [&] { return aborted || written_ > read_; });
      if (aborted) fail(ErrorCode::TransportFailure, "transport aborted during receive");
      const std::size_t pos = read_ % buf_.size();
      const std::size_t n = std::min({data.size() - done, static_cast<std::size_t>(written_ - read_), buf_.size() - pos});
      lock.unlock();
      std::memcpy(data.data() + done, buf_.data() + pos, n);
      lock.lock();
      read_ += n;
      done += n;
      not_full_.notify_one();
    }
  }

  void wake() {
    std::lock_guard lock(mu_);
    not_full_.notify_all();
    not_empty_.notify_all();
  }

 private:
  std::vector<std::uint8_t> buf_;
  std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::uint64_t written_ = 0;
  std::uint64_t read_ = 0;
};

}  // namespace detail

/// Shared-memory channels, one bounded ring per directed pair.
class InProcessTransport final : public Transport {
 public:
  explicit InProcessTransport(int n, std::size_t pipe_bytes = 1u << 20) : n_(n) {
    if (n < 2) fail(ErrorCode::MinimumDegreeTwo, "transport needs at least 2 workers");
    for (int i = 0; i < n * n; ++i) pipes_.push_back(std::make_unique<detail::RingPipe>(pipe_bytes));
  }

  int size() const override { return n_; }
  TransportKind kind() const override { return TransportKind::InProcess; }
  void send(int from, int to, std::span<const std::uint8_t> data) override { pipe(from, to).write(data, aborted_); }
  void recv(int at, int from, std::span<std::uint8_t> data) override { pipe(from, at).read(data, aborted_); }
  void abort() override {
    aborted_ = true;
    for (auto& p : pipes_) p->wake();
  }

 private:
  detail::RingPipe& pipe(int from, int to) {
    if (from < 0 || to < 0 || from >= n_ || to >= n_ || from == to) {
      fail(ErrorCode::InvalidArgument, "no channel " + std::to_string(from) + " -> " + std::to_string(to));
    }
    return *pipes_[static_cast<std::size_t>(from * n_ + to)];
  }

  int n_;
  std::vector<std::unique_ptr<detail::RingPipe>> pipes_;
  std::atomic<bool> aborted_{false};
};

/// Full mesh of TCP connections over 127.0.0.1; one socket per unordered pair.
class TcpTransport final : public Transport {
 public:
  explicit TcpTransport(int n) : n_(n), fds_(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), -1) {
    if (n < 2) fail(ErrorCode::MinimumDegreeTwo, "transport needs at least 2 workers");
    std::vector<int> listeners;
    std::vector<std::uint16_t> ports;
    try {
      for (int i = 0; i < n; ++i) {
        const int fd = check(::socket(AF_INET, SOCK_STREAM, 0), "socket");
        listeners.push_back(fd);
        sockaddr_in addr = loopback(0);
        check(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr), "bind");
        check(::listen(fd, n), "listen");
        socklen_t len = sizeof addr;
        check(::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len), "getsockname");
        ports.push_back(ntohs(addr.sin_port));
      }
      // Rank j dials every lower rank i; the kernel completes the handshake
      // into i's backlog, so accepting right after connecting cannot block.
      for (int j = 1; j < n; ++j) {
        for (int i = 0; i < j; ++i) {
          const int out = check(::socket(AF_INET, SOCK_STREAM, 0), "socket");
          fd(j, i) = out;
          sockaddr_in addr = loopback(ports[static_cast<std::size_t>(i)]);
          check(::connect(out, reinterpret_cast<sockaddr*>(&addr), sizeof addr), "connect");
          const int in = check(::accept(listeners[static_cast<std::size_t>(i)], nullptr, nullptr), "accept");
          fd(i, j) = in;
          for (int s : {in, out}) tune(s);
        }
      }
    } catch (...) {
      for (int l : listeners) ::close(l);
      close_all();
      throw;
    }
    for (int l : listeners) ::close(l);
  }

  ~TcpTransport() override { close_all(); }
  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

  int size() const override { return n_; }
  TransportKind kind() const override { return TransportKind::Tcp; }

  void send(int from, int to, std::span<const std::uint8_t> data) override {
    const int s = socket_for(from, to);
    std::size_t done = 0;
    while (done < data.size()) {
      const ssize_t k = ::send(s, data.data() + done, data.size() - done, MSG_NOSIGNAL);
      if (k < 0 && errno == EINTR) continue;
      if (k <= 0 || aborted_) fail(ErrorCode::TransportFailure, "send " + pair(from, to) + ": " + reason(k));
      done += static_cast<std::size_t>(k);
    }
  }

  void recv(int at, int from, std::span<std::uint8_t> data) override {
    const int s = socket_for(at, from);
    std::size_t done = 0;
    while (done < data.size()) {
      const ssize_t k = ::recv(s, data.data() + done, data.size() - done, 0);
      if (k < 0 && errno == EINTR) continue;
      if (k <= 0 || aborted_) fail(ErrorCode::TransportFailure, "recv " + pair(from, at) + ": " + reason(k));
      done += static_cast<std::size_t>(k);
    }
  }

  void abort() override {
    aborted_ = true;
    for (int s : fds_) {
      if (s >= 0) ::shutdown(s, SHUT_RDWR);
    }
  }

 private:
  static sockaddr_in loopback(std::uint16_t port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    return addr;
  }

  static int check(int rc, const char* what) {
    if (rc < 0) fail(ErrorCode::TransportFailure, std::string(what) + ": " + std::strerror(errno));
    return rc;
  }

  static void tune(int s) {
    const int one = 1;
    const int buf = 4 << 20;
    ::setsockopt(s, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    ::setsockopt(s, SOL_SOCKET, SO_SNDBUF, &buf, sizeof buf);
    ::setsockopt(s, SOL_SOCKET, SO_RCVBUF, &buf, sizeof buf);
  }

  static std::string pair(int from, int to) { return std::to_string(from) + " -> " + std::to_string(to); }
  static std::string reason(ssize_t k) { return k == 0 ? "peer closed" : std::strerror(errno); }

  int& fd(int self, int peer) { return fds_[static_cast<std::size_t>(self * n_ + peer)]; }

  int socket_for(int self, int peer) {
    if (self < 0 || peer < 0 || self >= n_ || peer >= n_ || self == peer) {
      fail(ErrorCode::InvalidArgument, "no channel " + pair(self, peer));
    }
    return fd(self, peer);
  }

  void close_all() {
    for (int& s : fds_) {
      if (s >= 0) ::close(s);
      s = -1;
    }
  }

  int n_;
  std::vector<int> fds_;
  std::atomic<bool> aborted_{false};
};

inline std::unique_ptr<Transport> make_transport(TransportKind kind, int n) {
  if (kind == TransportKind::Tcp) return std::make_unique<TcpTransport>(n);
  return std::make_unique<InProcessTransport>(n);
}

}  // namespace mxcomm
