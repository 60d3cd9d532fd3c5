#pragma once

// Runs one scenario end to end: a cloud, one edge warm-started from the first
// normal windows, the stream, one upload + retrain + distribute at the
// configured window, then metrics. In-process topology is deterministic.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lpm/cloud/service.hpp"
#include "lpm/edge/agent.hpp"
#include "lpm/lof.hpp"
#include "lpm/net.hpp"
#include "lpm/sim/scenario.hpp"
#include "lpm/transport.hpp"

namespace lpm::sim {

enum class Topology { inproc, tcp };

inline Topology topology_from_name(const std::string& s) {
  if (s == "inproc") return Topology::inproc;
  if (s == "tcp") return Topology::tcp;
  throw FormatError("unknown topology '" + s + "' (inproc|tcp)");
}

struct RunOptions {
  Topology topology = Topology::inproc;
  std::filesystem::path work_dir = "sim-work";
  std::int64_t window_ms = 10;  // simulated time per window
};

struct Metrics {
  std::string scenario;
  std::uint64_t bytes_raw = 0;
  std::uint64_t bytes_speed = 0;
  double precision = 1.0;
  double recall = 1.0;
  std::size_t faults_total = 0;
  std::size_t faults_detected = 0;
  std::vector<std::optional<std::int64_t>> detection_latency;  // per fault
  std::size_t orders_created = 0;
  std::size_t retrain_cycles = 0;

  std::size_t windows = 0;
  std::size_t flagged_windows = 0;
  std::size_t false_positives = 0;
  std::size_t rule_proposals = 0;
  std::size_t alerts = 0;
  std::int64_t model_version_before = 0;
  std::int64_t model_version_after = 0;
  bool update_accepted = false;
  std::optional<std::size_t> holdout_fp_before;
  std::optional<std::size_t> holdout_fp_after;
  std::filesystem::path state_dir;

  double speed_ratio() const {
    return bytes_raw == 0 ? 0.0 : static_cast<double>(bytes_speed) / static_cast<double>(bytes_raw);
  }
  std::optional<std::int64_t> max_latency() const {
    std::optional<std::int64_t> m;
    for (const auto& l : detection_latency)
      if (l) m = std::max(m.value_or(*l), *l);
    return m;
  }
};

class ScenarioFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline lof::ModelSnapshot warm_start_model(const ScenarioConfig& cfg, std::span<const features::Window> windows) {
  features::FeatureExtractor fx(feature_config(cfg));
  std::vector<lof::Point> pts;
  for (std::size_t i = 0; i < cfg.warm_start_windows && i < windows.size(); ++i)
    pts.push_back(fx.extract(windows[i].samples).flat());
  lof::ModelSnapshot m;
  m.version = 1;
  m.params = {cfg.k, 1e-9};
  const auto scores = lof::member_scores(pts, m.params);
  m.reference = lof::ReferenceSet(std::move(pts), cfg.capacity);
  m.threshold = lof::calibrate_threshold(scores, cfg.warm_start_quantile, cfg.warm_start_factor);
  m.admit_below = lof::default_admit_below(m.threshold);
  m.validate();
  return m;
}

// Post-drift, fault-free windows from an independent seed.
inline std::vector<std::vector<double>> holdout_features(const ScenarioConfig& cfg) {
  auto clean = cfg;
  clean.faults.clear();
  StreamGenerator gen(clean, 0x5eedULL);
  features::FeatureExtractor fx(feature_config(cfg));
  std::vector<std::vector<double>> out;
  const auto regime = cfg.duration_windows - 1;
  for (std::size_t i = 0; i < cfg.holdout_windows; ++i) out.push_back(fx.extract(gen.window(regime, regime)).flat());
  return out;
}

inline std::size_t count_flagged(const lof::ModelSnapshot& m, const std::vector<std::vector<double>>& fvs) {
  std::size_t n = 0;
  for (const auto& f : fvs) n += lof::score_window(m, f).is_anomaly ? 1 : 0;
  return n;
}

inline Metrics run_scenario(const ScenarioConfig& cfg, const RunOptions& opt = {}) {
  cfg.validate();
  namespace fs = std::filesystem;
  const auto state = opt.work_dir / cfg.name;
  fs::remove_all(state);
  fs::create_directories(state);

  const auto windows = generate_stream(cfg);
  const auto labels = fault_labels(cfg);

  auto now = std::make_shared<std::atomic<std::int64_t>>(0);
  auto clock = [now] { return now->load(); };

  cloud::CloudConfig cc;
  cc.store_dir = state / "cloud";
  cc.catalog = build_catalog(cfg);
  cc.auto_propose_orders = true;
  cc.retrain.lof = {cfg.k, 1e-9};
  cc.retrain.capacity = cfg.capacity;
  cc.retrain.seed = cfg.retrain_seed;
  cloud::MaintenanceCloud cloud(cc, clock);

  std::unique_ptr<net::LineServer> server;
  std::unique_ptr<transport::CloudLink> link;
  if (opt.topology == Topology::tcp) {
    server = std::make_unique<net::LineServer>(cloud, 0);
    server->start();
    link = std::make_unique<net::TcpCloudLink>(net::Address{"127.0.0.1", server->port()});
  } else {
    link = std::make_unique<transport::InProcessLink>(cloud);
  }

  edge::EdgeConfig ec;
  ec.edge_id = cfg.edge_id;
  ec.equipment_id = cfg.equipment_id;
  ec.features = feature_config(cfg);
  ec.lof = {cfg.k, 1e-9};
  ec.capacity = cfg.capacity;
  ec.model_dir = state / "edge" / "models";
  ec.spool_dir = state / "edge" / "spool";
  ec.rule_streak = cfg.rule_streak;
  ec.segment_windows = static_cast<std::size_t>(cfg.duration_windows) + 1;

  Metrics m;
  m.scenario = cfg.name;
  m.state_dir = state;
  m.windows = windows.size();
  {
    edge::EdgeAgent agent(ec, warm_start_model(cfg, windows), *link, clock);
    const auto holdout = holdout_features(cfg);
    for (const auto& w : windows) {
      const auto idx = w.start_index / static_cast<std::int64_t>(cfg.window_size);
      now->store(idx * opt.window_ms);
      if (idx == cfg.retrain_window()) {
        const auto up = agent.upload_batch();
        if (!up.complete()) throw ScenarioFailure("raw upload incomplete at window " + std::to_string(idx));
        const auto before = *agent.model();
        m.model_version_before = before.version;
        cloud.retrain(cfg.edge_id);
        cloud.distribute(cfg.edge_id);
        // Wait for the push to land and be ACKed (immediate in-process).
        const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
        for (;;) {
          agent.apply_pending_updates();
          auto d = cloud.delivery(cfg.edge_id);
          if (d && (d->state == cloud::DeliveryState::accepted || d->state == cloud::DeliveryState::rejected)) {
            m.update_accepted = d->state == cloud::DeliveryState::accepted;
            break;
          }
          if (std::chrono::steady_clock::now() > deadline) throw ScenarioFailure("model update was never ACKed");
          std::this_thread::sleep_for(std::chrono::milliseconds(2));
        }
        const auto after = *agent.model();
        m.model_version_after = after.version;
        if (!holdout.empty()) {
          m.holdout_fp_before = count_flagged(before, holdout);
          m.holdout_fp_after = count_flagged(after, holdout);
        }
      }
      agent.process_window(w);
    }
    const auto up = agent.upload_batch();
    if (!up.complete()) throw ScenarioFailure("final raw upload incomplete");
    const auto st = agent.stats();
    if (st.retry_queue != 0 || st.events_dropped != 0)
      throw ScenarioFailure("edge left " + std::to_string(st.retry_queue) + " unsent events");
    m.bytes_raw = agent.spool().bytes_written();
    const auto traffic = link->traffic();
    m.bytes_speed = traffic.bytes_of(protocol::Topic::anomaly) + traffic.bytes_of(protocol::Topic::rule_proposal);
    m.rule_proposals = traffic.messages_of(protocol::Topic::rule_proposal);
  }
  link.reset();
  if (server) server->stop();

  std::set<std::int64_t> flagged;
  for (const auto& e : cloud.events())
    if (e.edge_id == cfg.edge_id) flagged.insert(e.event.window_index);
  m.flagged_windows = flagged.size();

  auto in_grace = [&](std::int64_t w) {
    for (const auto& f : cfg.faults)
      if (w >= f.start_window && w <= f.end_window + 2) return true;
    return false;
  };
  std::size_t fault_windows = 0, hit = 0, true_flags = 0;
  for (std::size_t w = 0; w < labels.size(); ++w)
    if (labels[w]) {
      ++fault_windows;
      hit += flagged.count(static_cast<std::int64_t>(w));
    }
  for (auto w : flagged) true_flags += in_grace(w) ? 1 : 0;
  m.false_positives = flagged.size() - true_flags;
  m.recall = fault_windows == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(fault_windows);
  m.precision = flagged.empty() ? 1.0 : static_cast<double>(true_flags) / static_cast<double>(flagged.size());
  m.faults_total = cfg.faults.size();
  for (const auto& f : cfg.faults) {
    auto it = flagged.lower_bound(f.start_window);
    if (it != flagged.end() && *it <= f.end_window + 2) {
      m.detection_latency.push_back(*it - f.start_window);
      ++m.faults_detected;
    } else {
      m.detection_latency.push_back(std::nullopt);
    }
  }
  const auto cs = cloud.stats();
  m.orders_created = cs.orders;
  m.retrain_cycles = cs.retrain_cycles;
  m.alerts = cs.alerts;
  return m;
}

struct Check {
  std::string name;
  bool ok = false;
  std::string detail;
};

inline std::vector<Check> evaluate(const ScenarioConfig& cfg, const Metrics& m) {
  std::vector<Check> out;
  auto fmt = [](double v) {
    std::ostringstream os;
    os << std::setprecision(4) << v;
    return os.str();
  };
  const auto& a = cfg.assertions;
  if (a.min_recall) out.push_back({"recall", m.recall >= *a.min_recall, fmt(m.recall) + " >= " + fmt(*a.min_recall)});
  if (a.min_precision)
    out.push_back({"precision", m.precision >= *a.min_precision, fmt(m.precision) + " >= " + fmt(*a.min_precision)});
  if (a.max_latency_windows) {
    bool ok = m.faults_detected == m.faults_total;
    for (const auto& l : m.detection_latency) ok = ok && l && *l <= *a.max_latency_windows;
    const auto ml = m.max_latency();
    out.push_back({"latency", ok,
                   (ml ? std::to_string(*ml) : "none") + " <= " + std::to_string(*a.max_latency_windows) + " (" +
                       std::to_string(m.faults_detected) + "/" + std::to_string(m.faults_total) + " detected)"});
  }
  if (a.max_speed_ratio)
    out.push_back({"bandwidth", m.speed_ratio() <= *a.max_speed_ratio,
                   fmt(m.speed_ratio()) + " <= " + fmt(*a.max_speed_ratio)});
  if (a.max_orders)
    out.push_back({"max_orders", static_cast<std::int64_t>(m.orders_created) <= *a.max_orders,
                   std::to_string(m.orders_created) + " <= " + std::to_string(*a.max_orders)});
  if (a.min_orders)
    out.push_back({"min_orders", static_cast<std::int64_t>(m.orders_created) >= *a.min_orders,
                   std::to_string(m.orders_created) + " >= " + std::to_string(*a.min_orders)});
  if (a.fp_must_drop) {
    const bool ok = m.holdout_fp_before && m.holdout_fp_after && *m.holdout_fp_after < *m.holdout_fp_before;
    out.push_back({"fp_drop", ok,
                   std::to_string(m.holdout_fp_before.value_or(0)) + " -> " +
                       std::to_string(m.holdout_fp_after.value_or(0))});
  }
  if (a.update_must_be_accepted)
    out.push_back({"update_accepted", m.update_accepted && m.model_version_after > m.model_version_before,
                   "v" + std::to_string(m.model_version_before) + " -> v" + std::to_string(m.model_version_after)});
  return out;
}

// metrics.csv columns, in order.
inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{"scenario",       "bytes_raw",      "bytes_speed",
                                             "precision",      "recall",         "faults_detected",
                                             "max_detection_latency_windows", "orders_created", "retrain_cycles"};
  return cols;
}

inline std::vector<std::string> csv_row(const Metrics& m) {
  auto real = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  const auto ml = m.max_latency();
  return {m.scenario,
          std::to_string(m.bytes_raw),
          std::to_string(m.bytes_speed),
          real(m.precision),
          real(m.recall),
          std::to_string(m.faults_detected),
          ml ? std::to_string(*ml) : "NA",
          std::to_string(m.orders_created),
          std::to_string(m.retrain_cycles)};
}

inline void write_csv(const std::filesystem::path& path, const std::vector<Metrics>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& m : rows) {
    const auto r = csv_row(m);
    for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline void print_table(std::ostream& os, const std::vector<Metrics>& rows) {
  const auto& cols = csv_columns();
  std::vector<std::vector<std::string>> cells;
  cells.push_back(cols);
  for (const auto& m : rows) cells.push_back(csv_row(m));
  std::vector<std::size_t> width(cols.size(), 0);
  for (const auto& r : cells)
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  for (std::size_t ri = 0; ri < cells.size(); ++ri) {
    for (std::size_t i = 0; i < cells[ri].size(); ++i)
      os << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << (i == 0 ? std::left : std::right)
         << cells[ri][i];
    os << std::right << '\n';
    if (ri == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
}

}  // namespace lpm::sim
