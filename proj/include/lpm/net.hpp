#pragma once

// Loopback/TCP carriage of the line protocol: a threaded line server for the
// cloud and a reconnecting client link for edges.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>

#include "lpm/log.hpp"
#include "lpm/protocol.hpp"
#include "lpm/transport.hpp"

namespace lpm::net {

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Address {
  std::string host = "127.0.0.1";
  std::uint16_t port = 7700;

  static Address parse(const std::string& text) {
    auto colon = text.rfind(':');
    if (colon == std::string::npos) throw NetError("address must be host:port, got '" + text + "'");
    Address a;
    a.host = text.substr(0, colon);
    try {
      auto p = std::stoul(text.substr(colon + 1));
      if (p > 65535) throw NetError("port out of range");
      a.port = static_cast<std::uint16_t>(p);
    } catch (const std::logic_error&) {
      throw NetError("bad port in '" + text + "'");
    }
    return a;
  }
  std::string str() const { return host + ":" + std::to_string(port); }
};

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void shutdown() const {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_ = -1;
};

inline bool write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

inline Fd connect_tcp(const Address& addr) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(addr.host.c_str(), std::to_string(addr.port).c_str(), &hints, &res) != 0 || !res)
    throw NetError("cannot resolve " + addr.str());
  Fd fd(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
  const int rc = fd ? ::connect(fd.get(), res->ai_addr, res->ai_addrlen) : -1;
  ::freeaddrinfo(res);
  if (rc != 0) throw NetError("cannot connect to " + addr.str() + ": " + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return fd;
}

// Accepts connections and serves each on its own thread. Replies and pushes
// share one write mutex per connection so lines never interleave.
class LineServer {
 public:
  LineServer(transport::LineHandler& handler, std::uint16_t port, std::string bind = "127.0.0.1")
      : handler_(handler), bind_(std::move(bind)), port_(port) {}
  ~LineServer() { stop(); }

  void start() {
    listen_ = Fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (!listen_) throw NetError("socket() failed");
    int one = 1;
    ::setsockopt(listen_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port_);
    if (::inet_pton(AF_INET, bind_.c_str(), &sa.sin_addr) != 1) throw NetError("bad bind address " + bind_);
    if (::bind(listen_.get(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0)
      throw NetError("bind " + bind_ + ":" + std::to_string(port_) + ": " + std::strerror(errno));
    if (::listen(listen_.get(), 64) != 0) throw NetError("listen failed");
    socklen_t len = sizeof sa;
    ::getsockname(listen_.get(), reinterpret_cast<sockaddr*>(&sa), &len);
    port_ = ntohs(sa.sin_port);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  void stop() {
    if (!running_.exchange(false)) return;
    listen_.shutdown();
    if (acceptor_.joinable()) acceptor_.join();
    listen_.reset();
    std::list<Conn> conns;
    {
      std::lock_guard lock(mu_);
      for (auto& c : conns_) c.session->close();
      conns.splice(conns.end(), conns_);
    }
    for (auto& c : conns)
      if (c.thread.joinable()) c.thread.join();
  }

  std::uint16_t port() const noexcept { return port_; }

 private:
  class Session final : public transport::EdgeSession {
   public:
    explicit Session(Fd fd) : fd_(std::move(fd)) {}
    bool push(const std::string& line) override {
      std::lock_guard lock(write_mu_);
      if (!alive_) return false;
      if (!write_all(fd_.get(), line)) alive_ = false;
      return alive_;
    }
    bool alive() const override { return alive_.load(); }
    void close() {
      alive_ = false;
      fd_.shutdown();
    }
    int fd() const { return fd_.get(); }

   private:
    Fd fd_;
    std::mutex write_mu_;
    std::atomic<bool> alive_{true};
  };

  struct Conn {
    std::shared_ptr<Session> session;
    std::thread thread;
  };

  void accept_loop() {
    while (running_) {
      int c = ::accept(listen_.get(), nullptr, nullptr);
      if (c < 0) {
        if (errno == EINTR) continue;
        break;
      }
      int one = 1;
      ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      auto session = std::make_shared<Session>(Fd(c));
      std::lock_guard lock(mu_);
      if (!running_) {
        session->close();
        break;
      }
      conns_.push_back(Conn{session, {}});
      conns_.back().thread = std::thread([this, session] { serve(session); });
    }
  }

  void serve(const std::shared_ptr<Session>& session) {
    protocol::LineFramer framer;
    char buf[8192];
    while (session->alive()) {
      const auto n = ::recv(session->fd(), buf, sizeof buf, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      framer.feed(std::string_view(buf, static_cast<std::size_t>(n)), [&](std::string_view line) {
        std::shared_ptr<transport::EdgeSession> s = session;
        if (auto reply = handler_.handle_line(line, s)) session->push(*reply);
      });
    }
    session->close();
    handler_.on_disconnect(session);
  }

  transport::LineHandler& handler_;
  std::string bind_;
  std::uint16_t port_;
  Fd listen_;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::list<Conn> conns_;
};

// Edge-side client: synchronous request/ACK over a background reader that
// also collects cloud-initiated MODEL_UPDATE pushes. Reconnects lazily, at
// most once per `retry_interval`.
class TcpCloudLink final : public transport::CloudLink {
 public:
  explicit TcpCloudLink(Address addr, std::chrono::milliseconds timeout = std::chrono::seconds(5),
                        std::chrono::milliseconds retry_interval = std::chrono::milliseconds(500))
      : addr_(std::move(addr)), timeout_(timeout), retry_interval_(retry_interval) {}

  ~TcpCloudLink() override { disconnect(); }

  bool ensure_connected() override {
    std::unique_lock lock(mu_);
    if (connected_) return true;
    const auto now = std::chrono::steady_clock::now();
    if (attempted_ && now - last_attempt_ < retry_interval_) return false;
    attempted_ = true;
    last_attempt_ = now;
    lock.unlock();
    join_reader();
    Fd fd;
    try {
      fd = connect_tcp(addr_);
    } catch (const NetError& e) {
      log::debug("tcp-link", e.what());
      return false;
    }
    lock.lock();
    fd_ = std::move(fd);
    connected_ = true;
    ++epoch_;
    reader_ = std::thread([this, rfd = fd_.get()] { read_loop(rfd); });
    return true;
  }

  std::uint64_t connection_epoch() const override {
    std::lock_guard lock(mu_);
    return epoch_;
  }

  void disconnect() {
    {
      std::lock_guard lock(mu_);
      fd_.shutdown();
    }
    join_reader();
    std::lock_guard lock(mu_);
    fd_.reset();
    connected_ = false;
  }

  std::optional<protocol::AckPayload> request(const protocol::Envelope& e) override {
    if (!ensure_connected()) return std::nullopt;
    const auto line = protocol::encode(e);
    const auto key = std::make_pair(static_cast<int>(e.topic), e.seq);
    std::unique_lock lock(mu_);
    if (!connected_) return std::nullopt;
    waiting_[key];
    if (!send_locked(line)) {
      waiting_.erase(key);
      return std::nullopt;
    }
    counters_.add(e.topic, line.size());
    cv_.wait_for(lock, timeout_, [&] { return waiting_[key].has_value() || !connected_; });
    auto ack = std::move(waiting_[key]);
    waiting_.erase(key);
    return ack;
  }

  bool post(const protocol::Envelope& e) override {
    if (!ensure_connected()) return false;
    const auto line = protocol::encode(e);
    std::lock_guard lock(mu_);
    if (!connected_ || !send_locked(line)) return false;
    counters_.add(e.topic, line.size());
    return true;
  }

  std::vector<protocol::Envelope> take_incoming() override { return inbox_.take_all(); }

 private:
  bool send_locked(const std::string& line) {
    if (write_all(fd_.get(), line)) return true;
    connected_ = false;
    fd_.shutdown();
    return false;
  }

  void join_reader() {
    if (reader_.joinable() && reader_.get_id() != std::this_thread::get_id()) reader_.join();
  }

  void read_loop(int fd) {
    protocol::LineFramer framer;
    char buf[8192];
    for (;;) {
      const auto n = ::recv(fd, buf, sizeof buf, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      framer.feed(std::string_view(buf, static_cast<std::size_t>(n)), [&](std::string_view line) {
        protocol::Envelope env;
        try {
          env = protocol::decode(line);
        } catch (const protocol::ProtocolError& err) {
          log::warn("tcp-link", "dropping undecodable line: ", err.what());
          return;
        }
        if (env.topic == protocol::Topic::ack) {
          const auto& ack = protocol::payload_as<protocol::AckPayload>(env);
          std::lock_guard lock(mu_);
          auto it = waiting_.find({static_cast<int>(ack.ack_topic), ack.ack_seq});
          if (it != waiting_.end()) {
            it->second = ack;
            cv_.notify_all();
          }
        } else {
          inbox_.put(std::move(env));
        }
      });
    }
    std::lock_guard lock(mu_);
    connected_ = false;
    cv_.notify_all();
  }

  Address addr_;
  std::chrono::milliseconds timeout_;
  std::chrono::milliseconds retry_interval_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  Fd fd_;
  bool connected_ = false;
  bool attempted_ = false;
  std::uint64_t epoch_ = 0;
  std::chrono::steady_clock::time_point last_attempt_{};
  std::thread reader_;
  std::map<std::pair<int, std::uint64_t>, std::optional<protocol::AckPayload>> waiting_;
  transport::Mailbox inbox_;
};

}  // namespace lpm::net
