#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "lpm/cloud/service.hpp"
#include "lpm/edge/agent.hpp"
#include "lpm/sim/harness.hpp"
#include "lpm/transport.hpp"

namespace fixtures {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "lpm") {
    std::random_device rd;
    path_ = fs::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

// Quiet fan with a loud fault tone; the shape used by the demo scenarios.
inline lpm::sim::ScenarioConfig scenario(std::uint64_t seed = 7, std::int64_t windows = 200) {
  lpm::sim::ScenarioConfig c;
  c.name = "fixture";
  c.seed = seed;
  c.duration_windows = windows;
  c.harmonic_amps = {0.1, 0.05, 0.025};
  c.noise_sigma = 0.2;
  c.bands = 32;
  c.band_spacing = "linear";
  c.warm_start_factor = 2.0;
  c.warm_start_windows = c.k + 1;  // agents under test bring their own model
  c.catalog = {{"foreign_object", "fan-unit-A", "REPLACE", 45, 1.0},
               {"bearing_wear", "bearing-6204", "REPLACE", 100, 0.8}};
  return c;
}

inline lpm::sim::Fault fault(std::int64_t start, std::int64_t end, std::int64_t bin = 45) {
  return {start, end, bin, 1.0, 0.2};
}

// Warm-start model from an independent stream of the same scenario.
inline lpm::lof::ModelSnapshot warm_model(const lpm::sim::ScenarioConfig& c, std::int64_t version = 1) {
  auto clean = c;
  clean.faults.clear();
  clean.drift.reset();
  clean.seed = c.seed + 1000;
  clean.warm_start_windows = 50;
  clean.duration_windows = 50;
  const auto ws = lpm::sim::generate_stream(clean);
  auto m = lpm::sim::warm_start_model(clean, ws);
  m.version = version;
  return m;
}

inline lpm::edge::EdgeConfig edge_config(const lpm::sim::ScenarioConfig& c, const fs::path& dir) {
  lpm::edge::EdgeConfig e;
  e.edge_id = "edge-t";
  e.equipment_id = "fan-t";
  e.features = lpm::sim::feature_config(c);
  e.lof = {c.k, 1e-9};
  e.capacity = c.capacity;
  e.model_dir = dir / "models";
  e.spool_dir = dir / "spool";
  return e;
}

inline lpm::cloud::CloudConfig cloud_config(const lpm::sim::ScenarioConfig& c, const fs::path& dir) {
  lpm::cloud::CloudConfig cc;
  cc.store_dir = dir;
  cc.catalog = lpm::sim::build_catalog(c);
  cc.retrain.lof = {c.k, 1e-9};
  return cc;
}

// Scriptable cloud: records every decoded envelope and ACKs it, unless told
// to fail or to swallow the reply.
class FakeCloud final : public lpm::transport::LineHandler {
 public:
  std::optional<std::string> handle_line(std::string_view line,
                                         const std::shared_ptr<lpm::transport::EdgeSession>&) override {
    auto env = lpm::protocol::decode(line);
    received.push_back(env);
    if (env.topic == lpm::protocol::Topic::ack) return std::nullopt;
    if (swallow_replies > 0) {
      --swallow_replies;
      return std::nullopt;
    }
    lpm::protocol::AckPayload ack{env.topic, env.seq, !fail, std::nullopt, fail ? "nope" : ""};
    return lpm::protocol::encode(lpm::protocol::make_envelope("cloud", ++acks, 0, ack));
  }

  std::vector<lpm::protocol::Envelope> of(lpm::protocol::Topic t) const {
    std::vector<lpm::protocol::Envelope> out;
    for (const auto& e : received)
      if (e.topic == t) out.push_back(e);
    return out;
  }

  std::vector<lpm::protocol::Envelope> received;
  bool fail = false;
  int swallow_replies = 0;
  std::uint64_t acks = 0;
};

}  // namespace fixtures
