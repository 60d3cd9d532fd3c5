#include <csignal>
#include <ctime>
#include <iostream>

#include "CLI11.hpp"
#include "lpm/cloud/config.hpp"
#include "lpm/cloud/http_api.hpp"
#include "lpm/cloud/service.hpp"
#include "lpm/net.hpp"

using namespace lpm;

namespace {

// Blocks SIGINT/SIGTERM in every thread; the main loop polls for them.
sigset_t block_stop_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

int serve(const cloud::CloudConfig& cfg, int retry_seconds) {
  const auto stop_set = block_stop_signals();
  cloud::MaintenanceCloud mc(cfg);
  net::LineServer lines(mc, cfg.tcp_port, cfg.bind);
  lines.start();
  cloud::HttpApi http(mc);
  const int http_port = http.start(cfg.bind, cfg.http_port);
  const auto s = mc.stats();
  log::info("cloud", "store ", cfg.store_dir.string(), ": ", s.events, " events, ", s.orders, " orders, ",
            s.raw_records, " raw records");
  std::cout << "edges on " << cfg.bind << ':' << lines.port() << ", http on " << cfg.bind << ':' << http_port
            << std::endl;

  const timespec tick{retry_seconds, 0};
  for (;;) {
    const int sig = sigtimedwait(&stop_set, nullptr, &tick);
    if (sig == SIGINT || sig == SIGTERM) break;
    mc.retry_submissions();
  }
  std::cout << "shutting down" << std::endl;
  http.stop();
  lines.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cloud side: event ingest, rules, predictions, orders, retraining"};
  app.require_subcommand(1);
  app.fallthrough();
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log component activity");

  auto* serve_cmd = app.add_subcommand("serve", "Accept edges over TCP and serve the HTTP API");
  std::string config;
  int tcp_port = -1;
  int http_port = -1;
  int retry_seconds = 5;
  serve_cmd->add_option("--config", config, "Cloud config file")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--tcp-port", tcp_port, "Override tcp_port (0 picks a free port)")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--http-port", http_port, "Override http_port (0 picks a free port)")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--erp-retry", retry_seconds, "Seconds between ERP resubmission attempts")
      ->check(CLI::Range(1, 3600));

  CLI11_PARSE(app, argc, argv);
  log::set_level(verbose ? log::Level::info : log::Level::warn);

  try {
    auto cfg = cloud::load_cloud_config(config);
    if (tcp_port >= 0) cfg.tcp_port = static_cast<std::uint16_t>(tcp_port);
    if (http_port >= 0) cfg.http_port = static_cast<std::uint16_t>(http_port);
    return serve(cfg, retry_seconds);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
