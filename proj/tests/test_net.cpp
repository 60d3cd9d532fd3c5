#include <gtest/gtest.h>

#include <thread>

#include "lpm/net.hpp"
#include "support/fixtures.hpp"

using namespace lpm;
using namespace std::chrono_literals;
using fixtures::FakeCloud;
using fixtures::TempDir;

namespace {

protocol::Envelope anomaly(std::uint64_t seq) {
  return protocol::make_envelope("edge-n", seq, 5,
                                 protocol::AnomalyEventPayload{"fan-1", static_cast<std::int64_t>(seq), 2.5,
                                                               {1.0, 2.0, 3.0}, 1.5, 1});
}

}  // namespace

TEST(Address, Parses) {
  const auto a = net::Address::parse("10.0.0.2:7701");
  EXPECT_EQ(a.host, "10.0.0.2");
  EXPECT_EQ(a.port, 7701);
  EXPECT_THROW(net::Address::parse("nohost"), net::NetError);
  EXPECT_THROW(net::Address::parse("h:99999"), net::NetError);
  EXPECT_THROW(net::Address::parse("h:abc"), net::NetError);
}

TEST(Tcp, RequestGetsMatchingAckAndCountsBytes) {
  FakeCloud fc;
  net::LineServer server(fc, 0);
  server.start();
  net::TcpCloudLink link({"127.0.0.1", server.port()});
  const auto env = anomaly(42);
  auto ack = link.request(env);
  ASSERT_TRUE(ack);
  EXPECT_TRUE(ack->ok);
  EXPECT_EQ(ack->ack_seq, 42u);
  ASSERT_EQ(fc.received.size(), 1u);
  EXPECT_EQ(fc.received[0], env);

  FakeCloud other;
  transport::InProcessLink inproc(other);
  inproc.request(env);
  EXPECT_EQ(link.traffic().bytes_of(protocol::Topic::anomaly), inproc.traffic().bytes_of(protocol::Topic::anomaly));
  EXPECT_EQ(link.traffic().bytes_of(protocol::Topic::anomaly), protocol::encode(env).size());
}

TEST(Tcp, LargeChunkRoundTrips) {
  FakeCloud fc;
  net::LineServer server(fc, 0);
  server.start();
  net::TcpCloudLink link({"127.0.0.1", server.port()});
  protocol::RawBatchChunkPayload chunk;
  chunk.segment_id = "edge-n-000000000000";
  for (int i = 0; i < 500; ++i) chunk.records.push_back({i, std::vector<double>(32, 0.1 * i + 1e-7), 1.0 + i});
  const auto env = protocol::make_envelope("edge-n", 1, 0, chunk);
  auto ack = link.request(env);
  ASSERT_TRUE(ack);
  ASSERT_EQ(fc.received.size(), 1u);
  EXPECT_EQ(fc.received[0], env);
}

TEST(Tcp, FragmentedAndBatchedLinesAreFramed) {
  FakeCloud fc;
  net::LineServer server(fc, 0);
  server.start();
  auto fd = net::connect_tcp({"127.0.0.1", server.port()});
  const auto a = protocol::encode(anomaly(1));
  const auto b = protocol::encode(anomaly(2));
  for (char ch : a) ASSERT_EQ(::send(fd.get(), &ch, 1, 0), 1);
  const auto both = b + protocol::encode(anomaly(3));
  ASSERT_EQ(::send(fd.get(), both.data(), both.size(), 0), static_cast<ssize_t>(both.size()));
  std::string got;
  char buf[4096];
  while (std::count(got.begin(), got.end(), '\n') < 3) {
    const auto n = ::recv(fd.get(), buf, sizeof buf, 0);
    ASSERT_GT(n, 0);
    got.append(buf, static_cast<std::size_t>(n));
  }
  std::vector<std::uint64_t> seqs;
  protocol::LineFramer framer;
  framer.feed(got, [&](std::string_view line) {
    seqs.push_back(protocol::payload_as<protocol::AckPayload>(protocol::decode(line)).ack_seq);
  });
  EXPECT_EQ(seqs, (std::vector<std::uint64_t>{1, 2, 3}));
}

TEST(Tcp, ConcurrentRequestsOnOneLink) {
  FakeCloud fc;
  net::LineServer server(fc, 0);
  server.start();
  net::TcpCloudLink link({"127.0.0.1", server.port()});
  std::atomic<int> ok{0};
  std::vector<std::thread> ts;
  for (int t = 0; t < 4; ++t)
    ts.emplace_back([&, t] {
      for (int i = 0; i < 50; ++i)
        if (auto a = link.request(anomaly(static_cast<std::uint64_t>(t * 1000 + i + 1))); a && a->ok) ++ok;
    });
  for (auto& t : ts) t.join();
  EXPECT_EQ(ok.load(), 200);
}

TEST(Tcp, UnreachableThenReconnects) {
  FakeCloud fc;
  std::uint16_t port = 0;
  {
    net::LineServer probe(fc, 0);
    probe.start();
    port = probe.port();
  }
  net::TcpCloudLink link({"127.0.0.1", port}, 2s, 10ms);
  EXPECT_FALSE(link.request(anomaly(1)));
  net::LineServer server(fc, port);
  server.start();
  std::this_thread::sleep_for(20ms);
  EXPECT_TRUE(link.request(anomaly(2)));
  const auto e1 = link.connection_epoch();
  server.stop();
  std::this_thread::sleep_for(20ms);
  EXPECT_FALSE(link.request(anomaly(3)));
  net::LineServer again(fc, port);
  again.start();
  std::this_thread::sleep_for(20ms);
  EXPECT_TRUE(link.request(anomaly(4)));
  EXPECT_GT(link.connection_epoch(), e1);
}

TEST(Tcp, ModelPushReachesEdgeAndIsAcked) {
  TempDir dir("lpm-net");
  auto sc = fixtures::scenario(7, 30);
  cloud::MaintenanceCloud mc(fixtures::cloud_config(sc, dir / "cloud"));
  net::LineServer server(mc, 0);
  server.start();
  net::TcpCloudLink link({"127.0.0.1", server.port()});
  edge::EdgeAgent agent(fixtures::edge_config(sc, dir.path()), fixtures::warm_model(sc), link);
  const auto windows = sim::generate_stream(sc);
  agent.process_window(windows[0]);
  for (int i = 0; i < 200 && !mc.known_edges().size(); ++i) std::this_thread::sleep_for(5ms);
  mc.distribute("edge-t", fixtures::warm_model(sc, 2));
  std::size_t w = 1;
  for (int i = 0; i < 400; ++i) {
    if (w < windows.size()) agent.process_window(windows[w++]);
    const auto d = mc.delivery("edge-t");
    if (d && d->state == cloud::DeliveryState::accepted) break;
    std::this_thread::sleep_for(5ms);
  }
  EXPECT_EQ(agent.stats().model_version, 2);
  EXPECT_EQ(mc.delivery("edge-t")->state, cloud::DeliveryState::accepted);
}
