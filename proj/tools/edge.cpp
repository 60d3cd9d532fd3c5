#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "lpm/edge/agent.hpp"
#include "lpm/edge/config.hpp"
#include "lpm/net.hpp"
#include "lpm/sim/scenario.hpp"

using namespace lpm;
namespace fs = std::filesystem;

namespace {

// Control files kept next to the spool segments. Spool recovery ignores them.
fs::path lock_path(const edge::EdgeConfig& c) { return c.spool_dir / "agent.lock"; }
fs::path request_path(const edge::EdgeConfig& c) { return c.spool_dir / "upload.request"; }
fs::path status_path(const edge::EdgeConfig& c) { return c.spool_dir / "agent.status"; }

std::atomic<bool> g_stop{false};

void on_stop_signal(int) { g_stop = true; }

void install_stop_handlers() {
  struct sigaction sa{};
  sa.sa_handler = on_stop_signal;
  sigemptyset(&sa.sa_mask);
  sa.sa_flags = 0;  // no SA_RESTART: a blocking read returns so the loop can exit
  sigaction(SIGINT, &sa, nullptr);
  sigaction(SIGTERM, &sa, nullptr);
}

// flock-based single-instance lock per spool directory; released on exit.
class AgentLock {
 public:
  explicit AgentLock(const fs::path& path) {
    fs::create_directories(path.parent_path());
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw std::runtime_error("cannot open " + path.string() + ": " + std::strerror(errno));
    held_ = ::flock(fd_, LOCK_EX | LOCK_NB) == 0;
  }
  ~AgentLock() {
    if (fd_ >= 0) ::close(fd_);
  }
  AgentLock(const AgentLock&) = delete;
  AgentLock& operator=(const AgentLock&) = delete;
  bool held() const noexcept { return held_; }

 private:
  int fd_ = -1;
  bool held_ = false;
};

Json to_json(const edge::EdgeStats& s) {
  return Json{{"windows_processed", s.windows_processed}, {"windows_skipped", s.windows_skipped},
              {"anomalies_flagged", s.anomalies_flagged}, {"anomalies_acked", s.anomalies_acked},
              {"rule_proposals", s.rule_proposals},       {"events_dropped", s.events_dropped},
              {"updates_accepted", s.updates_accepted},   {"updates_rejected", s.updates_rejected},
              {"retry_queue", s.retry_queue},             {"model_version", s.model_version},
              {"reference_size", s.reference_size}};
}

Json to_json(const edge::UploadResult& r) {
  return Json{{"segments_uploaded", r.segments_uploaded},
              {"chunks_sent", r.chunks_sent},
              {"records_sent", r.records_sent},
              {"segments_pending", r.segments_pending},
              {"complete", r.complete()}};
}

struct Runner {
  edge::EdgeAgent& agent;
  const edge::EdgeConfig& cfg;
  Json last_upload;
  std::uint64_t since_status = 0;

  void write_status(bool running) {
    write_canonical_file(status_path(cfg), Json{{"edge_id", cfg.edge_id},
                                                {"running", running},
                                                {"pid", static_cast<std::int64_t>(::getpid())},
                                                {"next_window_index", agent.spool().next_window_index()},
                                                {"stats", to_json(agent.stats())},
                                                {"last_upload", last_upload}});
  }

  // Runs between windows: serves upload requests from `edge upload-batch`.
  void between_windows() {
    if (fs::exists(request_path(cfg))) {
      last_upload = to_json(agent.upload_batch());
      write_status(true);
      fs::remove(request_path(cfg));
      since_status = 0;
    } else if (++since_status >= 100) {
      write_status(true);
      since_status = 0;
    }
  }
};

// Parses "value" or "t value" (space, tab or comma separated).
bool parse_sample(const std::string& line, std::int64_t& next_t, features::SensorSample& out) {
  std::string s = line;
  for (auto& ch : s)
    if (ch == ',' || ch == '\t') ch = ' ';
  std::istringstream in(s);
  std::vector<double> vals;
  double v;
  while (in >> v) vals.push_back(v);
  if (!in.eof() || vals.empty() || vals.size() > 2) {
    if (s.find_first_not_of(' ') == std::string::npos) return false;
    throw FormatError("bad sample line '" + line + "'");
  }
  if (vals.size() == 2) {
    out = {static_cast<std::int64_t>(vals[0]), vals[1]};
    next_t = out.t + 1;
  } else {
    out = {next_t++, vals[0]};
  }
  return true;
}

void stream_lines(std::istream& in, Runner& r) {
  // Unnumbered samples continue after what is already spooled.
  std::int64_t next_t = r.agent.spool().next_window_index() * static_cast<std::int64_t>(r.cfg.features.hop);
  const auto before = r.agent.stats().windows_processed;
  std::uint64_t seen = before;
  std::string line;
  while (!g_stop && std::getline(in, line)) {
    features::SensorSample s;
    if (!parse_sample(line, next_t, s)) continue;
    r.agent.push_sample(s);
    if (const auto n = r.agent.stats().windows_processed; n != seen) {
      seen = n;
      r.between_windows();
    }
  }
}

void stream_scenario(const fs::path& file, Runner& r) {
  const auto sc = sim::load_scenario(file);
  if (sc.window_size != r.cfg.features.window_size || r.cfg.features.hop != r.cfg.features.window_size)
    throw FormatError("scenario window_size " + std::to_string(sc.window_size) +
                      " does not match the edge config (window_size, hop)");
  for (const auto& w : sim::generate_stream(sc)) {
    if (g_stop) break;
    r.agent.process_window(w);
    r.between_windows();
  }
}

int run(const edge::EdgeConfig& cfg, const std::string& source) {
  AgentLock lock(lock_path(cfg));
  if (!lock.held()) throw std::runtime_error("an agent is already running on " + cfg.spool_dir.string());
  install_stop_handlers();
  net::TcpCloudLink link(net::Address::parse(cfg.cloud_address));
  edge::EdgeAgent agent(cfg, edge::EdgeAgent::load_initial_model(cfg), link);
  Runner r{agent, cfg, Json(), 0};
  fs::remove(request_path(cfg));
  r.write_status(true);
  log::info("edge", cfg.edge_id, " resuming at window ", agent.spool().next_window_index(), ", model v",
            agent.model()->version);

  const std::string scenario_prefix = "scenario:";
  if (source.rfind(scenario_prefix, 0) == 0) {
    stream_scenario(source.substr(scenario_prefix.size()), r);
  } else if (source == "-") {
    stream_lines(std::cin, r);
  } else {
    std::ifstream in(source);
    if (!in) throw std::runtime_error("cannot open sample source " + source);
    stream_lines(in, r);
  }
  for (int i = 0; i < 20 && !agent.drain(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(250));
  if (const auto left = agent.stats().retry_queue; left > 0)
    log::warn("edge", left, " anomaly events still queued at exit (cloud unreachable)");
  r.write_status(false);
  std::cout << to_canonical(to_json(agent.stats())) << std::endl;
  return 0;
}

int upload(const edge::EdgeConfig& cfg, int wait_seconds) {
  {
    AgentLock lock(lock_path(cfg));
    if (lock.held()) {
      // No agent running: upload directly.
      net::TcpCloudLink link(net::Address::parse(cfg.cloud_address));
      edge::EdgeAgent agent(cfg, edge::EdgeAgent::load_initial_model(cfg), link);
      const auto res = agent.upload_batch();
      std::cout << to_canonical(to_json(res)) << std::endl;
      return res.complete() ? 0 : 1;
    }
  }
  // A running agent owns the active segment; ask it to upload between windows.
  { std::ofstream(request_path(cfg)) << "1\n"; }
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(wait_seconds);
  while (fs::exists(request_path(cfg))) {
    if (std::chrono::steady_clock::now() > deadline) {
      std::cerr << "running agent did not process the upload request within " << wait_seconds
                << " s (it uploads between windows)\n";
      return 1;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  const auto status = read_canonical_file(status_path(cfg));
  const auto& res = status.at("last_upload");
  std::cout << to_canonical(res) << std::endl;
  return res.is_object() && res.value("complete", false) ? 0 : 1;
}

int status(const edge::EdgeConfig& cfg) {
  bool running = false;
  {
    AgentLock lock(lock_path(cfg));
    running = !lock.held();
  }
  Json out{{"edge_id", cfg.edge_id}, {"running", running}};
  std::size_t closed = 0;
  std::uintmax_t spool_bytes = 0;
  if (fs::exists(cfg.spool_dir))
    for (const auto& e : fs::directory_iterator(cfg.spool_dir)) {
      const auto ext = e.path().extension();
      if (ext == ".closed") ++closed;
      if (ext == ".open" || ext == ".closed") spool_bytes += e.file_size();
    }
  out["closed_segments"] = closed;
  out["spool_bytes"] = spool_bytes;
  if (auto latest = model_io::latest_in(cfg.model_dir))
    out["model_file"] = latest->string();
  if (fs::exists(status_path(cfg))) {
    const auto st = read_canonical_file(status_path(cfg));
    for (const char* key : {"next_window_index", "stats", "last_upload"})
      if (st.contains(key)) out[key] = st.at(key);
  }
  std::cout << out.dump(2) << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Edge agent: feature extraction, LOF scoring, spooling and upload"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config = "edge.json";
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log component activity");

  auto* run_cmd = app.add_subcommand("run", "Process a sample stream");
  run_cmd->add_option("--config", config, "Edge config file")->required()->check(CLI::ExistingFile);
  std::string source;
  run_cmd->add_option("--source", source,
                      "'-' (stdin), a file of samples, or scenario:<file>; overrides sample_source");

  auto* up_cmd = app.add_subcommand("upload-batch", "Upload closed spool segments as raw batches");
  up_cmd->add_option("--config", config, "Edge config file")->required()->check(CLI::ExistingFile);
  int wait_seconds = 60;
  up_cmd->add_option("--wait", wait_seconds, "Seconds to wait for a running agent")->check(CLI::Range(1, 86400));

  auto* status_cmd = app.add_subcommand("status", "Show spool, model and agent state");
  status_cmd->add_option("--config", config, "Edge config file (default edge.json)")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  log::set_level(verbose ? log::Level::info : log::Level::warn);

  try {
    const auto cfg = edge::load_edge_config(config);
    if (*run_cmd) return run(cfg, source.empty() ? cfg.sample_source : source);
    if (*up_cmd) return upload(cfg, wait_seconds);
    return status(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
