#pragma once

// Edge <-> cloud transport seams. The edge talks to a CloudLink; the cloud
// implements LineHandler and sees each connection as an EdgeSession it can
// push MODEL_UPDATE lines into. Byte counters sit at the transport boundary
// and count every encoded line actually handed to the wire.

#include <array>
#include <atomic>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lpm/protocol.hpp"

namespace lpm::transport {

struct TrafficSnapshot {
  std::array<std::uint64_t, 5> bytes{};
  std::array<std::uint64_t, 5> messages{};

  std::uint64_t bytes_of(protocol::Topic t) const { return bytes[static_cast<std::size_t>(t)]; }
  std::uint64_t messages_of(protocol::Topic t) const { return messages[static_cast<std::size_t>(t)]; }
};

class ByteCounters {
 public:
  void add(protocol::Topic t, std::size_t n) {
    bytes_[static_cast<std::size_t>(t)].fetch_add(n, std::memory_order_relaxed);
    messages_[static_cast<std::size_t>(t)].fetch_add(1, std::memory_order_relaxed);
  }
  TrafficSnapshot snapshot() const {
    TrafficSnapshot s;
    for (std::size_t i = 0; i < 5; ++i) {
      s.bytes[i] = bytes_[i].load(std::memory_order_relaxed);
      s.messages[i] = messages_[i].load(std::memory_order_relaxed);
    }
    return s;
  }

 private:
  std::array<std::atomic<std::uint64_t>, 5> bytes_{};
  std::array<std::atomic<std::uint64_t>, 5> messages_{};
};

class EdgeSession {
 public:
  virtual ~EdgeSession() = default;
  // False when the connection is gone; the caller keeps the message pending.
  virtual bool push(const std::string& line) = 0;
  virtual bool alive() const = 0;
};

class LineHandler {
 public:
  virtual ~LineHandler() = default;
  // Returns the reply line (with terminator), if any.
  virtual std::optional<std::string> handle_line(std::string_view line,
                                                 const std::shared_ptr<EdgeSession>& session) = 0;
  virtual void on_disconnect(const std::shared_ptr<EdgeSession>&) {}
};

class CloudLink {
 public:
  virtual ~CloudLink() = default;
  // Sends and waits for the matching ACK; nullopt if the cloud is unreachable.
  virtual std::optional<protocol::AckPayload> request(const protocol::Envelope& e) = 0;
  // Fire-and-forget (used for the edge's own ACKs).
  virtual bool post(const protocol::Envelope& e) = 0;
  // Cloud-initiated messages received since the last call.
  virtual std::vector<protocol::Envelope> take_incoming() = 0;
  // Attempts (re)connection if down; true when connected afterwards.
  virtual bool ensure_connected() = 0;
  // Incremented on every successful (re)connection.
  virtual std::uint64_t connection_epoch() const = 0;

  TrafficSnapshot traffic() const { return counters_.snapshot(); }

 protected:
  static bool ack_matches(const protocol::AckPayload& ack, const protocol::Envelope& e) {
    return ack.ack_topic == e.topic && ack.ack_seq == e.seq;
  }
  ByteCounters counters_;
};

// Thread-safe queue of cloud-initiated envelopes.
class Mailbox {
 public:
  void put(protocol::Envelope e) {
    std::lock_guard lock(mu_);
    q_.push_back(std::move(e));
  }
  std::vector<protocol::Envelope> take_all() {
    std::lock_guard lock(mu_);
    std::vector<protocol::Envelope> out(std::make_move_iterator(q_.begin()), std::make_move_iterator(q_.end()));
    q_.clear();
    return out;
  }

 private:
  std::mutex mu_;
  std::deque<protocol::Envelope> q_;
};

// Direct function-call link into a LineHandler living in the same process.
// Lines still go through the codec so byte accounting matches TCP exactly.
class InProcessLink final : public CloudLink {
 public:
  explicit InProcessLink(LineHandler& cloud)
      : cloud_(cloud), state_(std::make_shared<State>()), session_(std::make_shared<Session>(state_)) {}

  ~InProcessLink() override { set_connected(false); }

  void set_connected(bool up) {
    const bool was = state_->connected.exchange(up);
    if (was && !up) {
      session_->kill();
      cloud_.on_disconnect(session_);
    }
    if (!was && up) {
      session_ = std::make_shared<Session>(state_);
      epoch_.fetch_add(1);
    }
  }
  bool connected() const { return state_->connected.load(); }
  bool ensure_connected() override { return connected(); }
  std::uint64_t connection_epoch() const override { return epoch_.load(); }

  std::optional<protocol::AckPayload> request(const protocol::Envelope& e) override {
    if (!connected()) return std::nullopt;
    const auto line = protocol::encode(e);
    counters_.add(e.topic, line.size());
    auto reply = cloud_.handle_line(line, session_);
    if (!reply) return std::nullopt;
    auto env = protocol::decode(*reply);
    if (env.topic != protocol::Topic::ack) return std::nullopt;
    auto ack = protocol::payload_as<protocol::AckPayload>(env);
    if (!ack_matches(ack, e)) return std::nullopt;
    return ack;
  }

  bool post(const protocol::Envelope& e) override {
    if (!connected()) return false;
    const auto line = protocol::encode(e);
    counters_.add(e.topic, line.size());
    cloud_.handle_line(line, session_);
    return true;
  }

  std::vector<protocol::Envelope> take_incoming() override { return state_->inbox.take_all(); }

 private:
  struct State {
    std::atomic<bool> connected{true};
    Mailbox inbox;
  };

  class Session final : public EdgeSession {
   public:
    explicit Session(std::shared_ptr<State> s) : state_(std::move(s)) {}
    bool push(const std::string& line) override {
      if (!alive()) return false;
      state_->inbox.put(protocol::decode(line));
      return true;
    }
    bool alive() const override { return alive_.load(); }
    void kill() { alive_.store(false); }

   private:
    std::shared_ptr<State> state_;
    std::atomic<bool> alive_{true};
  };

  LineHandler& cloud_;
  std::shared_ptr<State> state_;
  std::shared_ptr<Session> session_;
  std::atomic<std::uint64_t> epoch_{1};
};

}  // namespace lpm::transport
