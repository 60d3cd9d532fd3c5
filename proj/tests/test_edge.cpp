#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <thread>

#include "support/fixtures.hpp"

using namespace lpm;
using fixtures::FakeCloud;
using fixtures::TempDir;
using protocol::Topic;

namespace {

struct Rig {
  explicit Rig(sim::ScenarioConfig c, bool with_model = true, std::int64_t version = 1,
               const std::function<void(edge::EdgeConfig&)>& tweak = {})
      : cfg(std::move(c)), windows(sim::generate_stream(cfg)), link(cloud) {
    auto ec = fixtures::edge_config(cfg, dir.path());
    if (tweak) tweak(ec);
    edge_cfg = ec;
    std::optional<lof::ModelSnapshot> m;
    if (with_model) m = fixtures::warm_model(cfg, version);
    agent = std::make_unique<edge::EdgeAgent>(ec, m, link, [] { return 1000; });
  }

  void run(std::int64_t from = 0, std::int64_t to = -1) {
    if (to < 0) to = static_cast<std::int64_t>(windows.size());
    for (auto w = from; w < to; ++w) agent->process_window(windows[static_cast<std::size_t>(w)]);
  }

  TempDir dir{"lpm-edge"};
  sim::ScenarioConfig cfg;
  std::vector<features::Window> windows;
  FakeCloud cloud;
  transport::InProcessLink link;
  edge::EdgeConfig edge_cfg;
  std::unique_ptr<edge::EdgeAgent> agent;
};

protocol::ModelUpdatePayload update_from(const lof::ModelSnapshot& m, std::int64_t version) {
  auto u = model_io::to_update(m);
  u.model_version = version;
  return u;
}

}  // namespace

TEST(EdgeAgent, NormalWindowsSendNothingButSpoolEverything) {
  Rig r(fixtures::scenario(7, 100));
  r.run();
  EXPECT_TRUE(r.cloud.of(Topic::anomaly).empty());
  EXPECT_TRUE(r.cloud.of(Topic::rule_proposal).empty());
  EXPECT_EQ(r.agent->spool().pending_records(), 100u);
  EXPECT_EQ(r.agent->stats().windows_processed, 100u);
}

TEST(EdgeAgent, SingleAnomalyProducesOneEvent) {
  auto c = fixtures::scenario(7, 100);
  c.faults = {fixtures::fault(60, 60)};
  Rig r(c);
  r.run();
  const auto ev = r.cloud.of(Topic::anomaly);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].seq, 61u);
  EXPECT_EQ(ev[0].edge_id, "edge-t");
  const auto& p = protocol::payload_as<protocol::AnomalyEventPayload>(ev[0]);
  EXPECT_EQ(p.window_index, 60);
  EXPECT_EQ(p.equipment_id, "fan-t");
  EXPECT_EQ(p.model_version, 1);
  EXPECT_GT(p.score, p.threshold_at_detection);
  EXPECT_EQ(p.features.size(), r.edge_cfg.features.dimension());
  EXPECT_TRUE(r.cloud.of(Topic::rule_proposal).empty());
  EXPECT_EQ(r.agent->stats().anomalies_acked, 1u);
}

TEST(EdgeAgent, StreakOfThreeProposesOneRule) {
  auto c = fixtures::scenario(7, 100);
  c.faults = {fixtures::fault(60, 62)};
  Rig r(c);
  std::vector<std::vector<double>> flagged;
  r.agent->on_window([&](const edge::WindowOutcome& o) {
    if (o.is_anomaly) flagged.push_back(o.features);
  });
  r.run();
  EXPECT_EQ(r.cloud.of(Topic::anomaly).size(), 3u);
  const auto props = r.cloud.of(Topic::rule_proposal);
  ASSERT_EQ(props.size(), 1u);
  const auto& p = protocol::payload_as<protocol::RuleProposalPayload>(props[0]);
  ASSERT_EQ(flagged.size(), 3u);
  for (const auto& fv : flagged) EXPECT_TRUE(rules::contains(p.lower, p.upper, fv));
  EXPECT_EQ(p.rule_id, rules::rule_id_for(p.lower, p.upper, p.min_score));
}

TEST(EdgeAgent, WarmupBootstrapsWithoutFlagging) {
  auto c = fixtures::scenario(7, 30);
  c.faults = {fixtures::fault(20, 20)};
  Rig r(c, false);
  r.windows[2].samples = r.windows[20].samples;
  std::vector<edge::WindowOutcome> seen;
  r.agent->on_window([&](const edge::WindowOutcome& o) { seen.push_back(o); });
  r.run(0, 6);
  ASSERT_EQ(seen.size(), 6u);
  for (const auto& o : seen) {
    EXPECT_TRUE(o.warmup);
    EXPECT_FALSE(o.is_anomaly);
  }
  EXPECT_EQ(r.agent->stats().reference_size, 6u);
  EXPECT_TRUE(r.cloud.of(Topic::anomaly).empty());
  r.run(6, 30);
  EXPECT_FALSE(seen.back().warmup);
}

TEST(EdgeAgent, BatchUploadChunksAndDeletes) {
  Rig r(fixtures::scenario(7, 1200), true, 1, [](edge::EdgeConfig& e) { e.segment_windows = 5000; });
  r.run();
  const auto res = r.agent->upload_batch();
  EXPECT_TRUE(res.complete());
  EXPECT_EQ(res.segments_uploaded, 1u);
  EXPECT_EQ(res.records_sent, 1200u);
  const auto chunks = r.cloud.of(Topic::raw_batch);
  ASSERT_EQ(chunks.size(), 3u);
  std::vector<std::size_t> sizes;
  std::int64_t expect_index = 0;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const auto& c = protocol::payload_as<protocol::RawBatchChunkPayload>(chunks[i]);
    EXPECT_EQ(c.chunk_index, static_cast<std::int64_t>(i));
    EXPECT_EQ(c.total_chunks, 3);
    EXPECT_EQ(c.segment_id, "edge-t-000000000000");
    sizes.push_back(c.records.size());
    for (const auto& rec : c.records) EXPECT_EQ(rec.window_index, expect_index++);
  }
  EXPECT_EQ(sizes, (std::vector<std::size_t>{500, 500, 200}));
  EXPECT_TRUE(r.agent->spool().closed_segments().empty());
  EXPECT_EQ(r.agent->spool().pending_records(), 0u);
}

TEST(EdgeAgent, EmptySpoolUploadIsNoop) {
  Rig r(fixtures::scenario(7, 10));
  const auto res = r.agent->upload_batch();
  EXPECT_TRUE(res.complete());
  EXPECT_EQ(res.chunks_sent, 0u);
  EXPECT_TRUE(r.cloud.received.empty());
}

TEST(EdgeAgent, FailedChunkKeepsSegment) {
  Rig r(fixtures::scenario(7, 40));
  r.run();
  r.cloud.fail = true;
  auto res = r.agent->upload_batch();
  EXPECT_FALSE(res.complete());
  EXPECT_EQ(r.agent->spool().pending_records(), 40u);
  r.cloud.fail = false;
  res = r.agent->upload_batch();
  EXPECT_TRUE(res.complete());
  EXPECT_EQ(res.records_sent, 40u);
  EXPECT_EQ(r.agent->spool().pending_records(), 0u);
}

// Swallows the reply to the n-th RAW_BATCH line while still delivering it.
class LossyLink final : public transport::LineHandler {
 public:
  explicit LossyLink(transport::LineHandler& inner) : inner_(inner) {}
  std::optional<std::string> handle_line(std::string_view line,
                                         const std::shared_ptr<transport::EdgeSession>& s) override {
    auto reply = inner_.handle_line(line, s);
    if (protocol::decode(line).topic == Topic::raw_batch && drop_raw_reply-- == 0) return std::nullopt;
    return reply;
  }
  void on_disconnect(const std::shared_ptr<transport::EdgeSession>& s) override { inner_.on_disconnect(s); }
  int drop_raw_reply = -1;

 private:
  transport::LineHandler& inner_;
};

TEST(EdgeAgent, LostAckResendIsDeduplicated) {
  TempDir dir("lpm-edge");
  auto c = fixtures::scenario(7, 1200);
  auto ec = fixtures::edge_config(c, dir.path());
  ec.segment_windows = 5000;
  cloud::MaintenanceCloud mc(fixtures::cloud_config(c, dir / "cloud"), [] { return 0; });
  LossyLink lossy(mc);
  lossy.drop_raw_reply = 2;  // final chunk of the only segment
  transport::InProcessLink link(lossy);
  edge::EdgeAgent agent(ec, fixtures::warm_model(c), link, [] { return 0; });
  for (const auto& w : sim::generate_stream(c)) agent.process_window(w);

  auto res = agent.upload_batch();
  EXPECT_FALSE(res.complete());
  EXPECT_EQ(agent.spool().closed_segments().size(), 1u);
  res = agent.upload_batch();
  EXPECT_TRUE(res.complete());
  const auto recs = mc.raw_records("edge-t");
  EXPECT_EQ(recs.size(), 1200u);
  std::set<std::int64_t> idx;
  for (const auto& rec : recs) idx.insert(rec.window_index);
  EXPECT_EQ(idx.size(), 1200u);
}

TEST(EdgeAgent, VersionRuleOnUpdates) {
  auto c = fixtures::scenario(7, 100);
  c.faults = {fixtures::fault(60, 60)};
  Rig r(c, true, 3);
  const auto base = *r.agent->model();
  auto d = r.agent->apply_model_update(update_from(base, 4));
  EXPECT_TRUE(d.accepted);
  EXPECT_EQ(d.active_version, 4);
  EXPECT_TRUE(std::filesystem::exists(model_io::model_path(r.edge_cfg.model_dir, 4)));
  r.run();
  const auto ev = r.cloud.of(Topic::anomaly);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(protocol::payload_as<protocol::AnomalyEventPayload>(ev[0]).model_version, 4);

  EXPECT_TRUE(r.agent->apply_model_update(update_from(base, 7)).accepted);
  d = r.agent->apply_model_update(update_from(base, 5));
  EXPECT_FALSE(d.accepted);
  EXPECT_EQ(d.active_version, 7);
  d = r.agent->apply_model_update(update_from(base, 7));
  EXPECT_FALSE(d.accepted);
  EXPECT_EQ(r.agent->stats().model_version, 7);
  EXPECT_EQ(r.agent->stats().updates_rejected, 2u);
}

TEST(EdgeAgent, MalformedUpdatesAreRejected) {
  Rig r(fixtures::scenario(7, 10));
  const auto base = *r.agent->model();

  auto wrong_dim = update_from(base, 2);
  for (auto& p : wrong_dim.reference_points) p.push_back(0.0);
  EXPECT_FALSE(r.agent->apply_model_update(wrong_dim).accepted);

  auto too_few = update_from(base, 2);
  too_few.reference_points.resize(static_cast<std::size_t>(too_few.k));
  EXPECT_FALSE(r.agent->apply_model_update(too_few).accepted);

  auto ragged = update_from(base, 2);
  ragged.reference_points[1].pop_back();
  EXPECT_FALSE(r.agent->apply_model_update(ragged).accepted);

  auto low_threshold = update_from(base, 2);
  low_threshold.threshold = 0.5;
  EXPECT_FALSE(r.agent->apply_model_update(low_threshold).accepted);

  EXPECT_EQ(r.agent->stats().model_version, 1);
  EXPECT_EQ(*r.agent->model(), base);
  EXPECT_FALSE(model_io::latest_in(r.edge_cfg.model_dir).has_value());
}

TEST(EdgeAgent, PushedUpdateIsAckedThroughCloud) {
  TempDir dir("lpm-edge");
  auto c = fixtures::scenario(7, 20);
  cloud::MaintenanceCloud mc(fixtures::cloud_config(c, dir / "cloud"), [] { return 0; });
  transport::InProcessLink link(mc);
  const auto windows = sim::generate_stream(c);
  edge::EdgeAgent agent(fixtures::edge_config(c, dir.path()), fixtures::warm_model(c), link, [] { return 0; });
  agent.process_window(windows[0]);  // announces v1

  auto next = fixtures::warm_model(c, 2);
  mc.distribute("edge-t", next);
  EXPECT_EQ(mc.delivery("edge-t")->state, cloud::DeliveryState::pushed);
  agent.process_window(windows[1]);
  EXPECT_EQ(agent.stats().model_version, 2);
  EXPECT_EQ(mc.delivery("edge-t")->state, cloud::DeliveryState::accepted);
  EXPECT_EQ(mc.delivery("edge-t")->edge_active_version, 2);

  mc.distribute("edge-t", fixtures::warm_model(c, 1));
  agent.process_window(windows[2]);
  EXPECT_EQ(agent.stats().model_version, 2);
  EXPECT_EQ(mc.delivery("edge-t")->state, cloud::DeliveryState::rejected);
}

TEST(EdgeAgent, OutageBuffersEventsInOrder) {
  auto c = fixtures::scenario(7, 100);
  c.faults = {fixtures::fault(20, 20), fixtures::fault(40, 40), fixtures::fault(60, 60)};
  Rig r(c);
  r.link.set_connected(false);
  r.run(0, 70);
  EXPECT_TRUE(r.cloud.of(Topic::anomaly).empty());
  EXPECT_EQ(r.agent->stats().retry_queue, 3u);
  r.link.set_connected(true);
  r.run(70, 100);
  const auto ev = r.cloud.of(Topic::anomaly);
  ASSERT_EQ(ev.size(), 3u);
  EXPECT_EQ(ev[0].seq, 21u);
  EXPECT_EQ(ev[1].seq, 41u);
  EXPECT_EQ(ev[2].seq, 61u);
  EXPECT_EQ(r.agent->stats().retry_queue, 0u);
}

TEST(EdgeAgent, FullRetryQueueDropsOldest) {
  auto c = fixtures::scenario(7, 100);
  c.faults = {fixtures::fault(20, 20), fixtures::fault(40, 40), fixtures::fault(60, 60)};
  Rig r(c, true, 1, [](edge::EdgeConfig& e) { e.retry_queue_limit = 2; });
  r.link.set_connected(false);
  r.run(0, 70);
  EXPECT_EQ(r.agent->stats().events_dropped, 1u);
  r.link.set_connected(true);
  r.run(70, 100);
  const auto ev = r.cloud.of(Topic::anomaly);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].seq, 41u);
  EXPECT_EQ(ev[1].seq, 61u);
}

TEST(EdgeAgent, HelloAnnouncesVersionOnEveryConnection) {
  Rig r(fixtures::scenario(7, 10), true, 5);
  r.run(0, 2);
  r.link.set_connected(false);
  r.link.set_connected(true);
  r.run(2, 4);
  std::vector<std::int64_t> hellos;
  for (const auto& e : r.cloud.of(Topic::ack)) {
    const auto& a = protocol::payload_as<protocol::AckPayload>(e);
    if (a.ack_topic == Topic::model_update && a.ack_seq == 0) hellos.push_back(a.active_version.value_or(-1));
  }
  EXPECT_EQ(hellos, (std::vector<std::int64_t>{5, 5}));
}

TEST(EdgeAgent, RestartSkipsSpooledWindowsAndKeepsModel) {
  TempDir dir("lpm-edge");
  auto c = fixtures::scenario(7, 100);
  FakeCloud fc;
  transport::InProcessLink link(fc);
  const auto windows = sim::generate_stream(c);
  const auto ec = fixtures::edge_config(c, dir.path());
  {
    edge::EdgeAgent a(ec, fixtures::warm_model(c), link);
    for (int w = 0; w < 50; ++w) a.process_window(windows[w]);
    EXPECT_TRUE(a.apply_model_update(update_from(*a.model(), 9)).accepted);
  }
  edge::EdgeAgent b(ec, fixtures::warm_model(c), link);
  EXPECT_EQ(b.stats().model_version, 9);
  for (const auto& w : windows) b.process_window(w);
  EXPECT_EQ(b.stats().windows_skipped, 50u);
  EXPECT_EQ(b.stats().windows_processed, 50u);
  b.spool().close_active();
  std::set<std::int64_t> idx;
  std::size_t n = 0;
  for (const auto& s : b.spool().closed_segments())
    for (const auto& rec : edge::Spool::read_segment(s.path)) idx.insert(rec.window_index), ++n;
  EXPECT_EQ(n, 100u);
  EXPECT_EQ(idx.size(), 100u);
}

TEST(Spool, TornTailIsTruncatedOnRecovery) {
  TempDir dir("lpm-spool");
  {
    edge::Spool s(dir.path(), "e", 100);
    for (int i = 0; i < 5; ++i) s.append({i, {1.0, 2.0}, 1.0});
  }
  std::filesystem::path open;
  for (const auto& e : std::filesystem::directory_iterator(dir.path()))
    if (e.path().extension() == ".open") open = e.path();
  ASSERT_FALSE(open.empty());
  {
    std::ofstream f(open, std::ios::app);
    f << R"({"features":[1.0,)";
  }
  edge::Spool s(dir.path(), "e", 100);
  EXPECT_EQ(s.next_window_index(), 5);
  const auto segs = s.closed_segments();
  ASSERT_EQ(segs.size(), 1u);
  const auto recs = edge::Spool::read_segment(segs[0].path);
  ASSERT_EQ(recs.size(), 5u);
  EXPECT_EQ(recs.back().window_index, 4);
  s.append({5, {1.0, 2.0}, 1.0});
  EXPECT_THROW(s.append({5, {1.0, 2.0}, 1.0}), edge::SpoolError);
}

TEST(Spool, RollsSegmentsAtConfiguredSize) {
  TempDir dir("lpm-spool");
  edge::Spool s(dir.path(), "e", 4);
  for (int i = 0; i < 10; ++i) s.append({i, {0.0}, 1.0});
  const auto segs = s.closed_segments();
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[0].segment_id, "e-000000000000");
  EXPECT_EQ(segs[1].segment_id, "e-000000000004");
  EXPECT_EQ(s.pending_records(), 10u);
}

TEST(Spool, UploadMarkSurvivesRestart) {
  TempDir dir("lpm-spool");
  {
    edge::Spool s(dir.path(), "e", 100);
    for (int i = 0; i < 7; ++i) s.append({i, {0.0}, 1.0});
    s.close_active();
    const auto segs = s.closed_segments();
    s.remove_segment(segs[0], 6);
  }
  edge::Spool s(dir.path(), "e", 100);
  EXPECT_EQ(s.next_window_index(), 7);
  EXPECT_EQ(s.pending_records(), 0u);
}

// Every event carries the version and threshold of the one model that scored
// its window, even while updates are pushed from another thread.
TEST(EdgeAgentProperty, EventsNeverMixModelVersions) {
  TempDir dir("lpm-edge");
  auto c = fixtures::scenario(11, 400);
  for (std::int64_t s = 10; s < 400; s += 13) c.faults.push_back(fixtures::fault(s, s));
  cloud::MaintenanceCloud mc(fixtures::cloud_config(c, dir / "cloud"), [] { return 0; });
  transport::InProcessLink link(mc);
  const auto windows = sim::generate_stream(c);
  edge::EdgeAgent agent(fixtures::edge_config(c, dir.path()), fixtures::warm_model(c), link);
  const auto base = *agent.model();
  agent.process_window(windows[0]);

  std::map<std::int64_t, double> threshold_of{{1, base.threshold}};
  std::vector<lof::ModelSnapshot> updates;
  for (std::int64_t v = 2; v <= 30; ++v) {
    auto m = base;
    m.version = v;
    m.threshold = base.threshold + 0.01 * static_cast<double>(v);
    m.admit_below = lof::default_admit_below(m.threshold);
    threshold_of[v] = m.threshold;
    updates.push_back(m);
  }
  std::thread pusher([&] {
    for (const auto& m : updates) {
      mc.distribute("edge-t", m);
      std::this_thread::sleep_for(std::chrono::microseconds(500));
    }
  });
  for (std::size_t i = 1; i < windows.size(); ++i) agent.process_window(windows[i]);
  pusher.join();
  agent.process_window({static_cast<std::int64_t>(windows.size() * c.window_size), windows[1].samples});

  std::int64_t last_version = 0;
  std::size_t n = 0;
  for (const auto& e : mc.events()) {
    ASSERT_TRUE(threshold_of.count(e.event.model_version));
    EXPECT_DOUBLE_EQ(e.event.threshold_at_detection, threshold_of[e.event.model_version]);
    EXPECT_GE(e.event.model_version, last_version);
    last_version = e.event.model_version;
    ++n;
  }
  EXPECT_GT(n, 20u);
  EXPECT_EQ(agent.stats().model_version, 30);
  EXPECT_EQ(mc.delivery("edge-t")->state, cloud::DeliveryState::accepted);
}

// Replaying a drifted stream: windows that sat just under the old threshold
// score lower once the model is rebuilt from recent normal data.
TEST(EdgeAgent, UpdateLowersBorderlineScores) {
  auto c = fixtures::scenario(21, 300);
  c.drift = sim::Drift{0, 1, 1.8};
  const auto old_model = fixtures::warm_model(fixtures::scenario(21, 300));
  const auto stream = sim::generate_stream(c);
  features::FeatureExtractor fx(sim::feature_config(c));
  std::vector<std::vector<double>> fvs;
  for (const auto& w : stream) fvs.push_back(fx.extract(w.samples).flat());

  auto fresh = c;
  fresh.seed = 999;
  fresh.duration_windows = 200;
  fresh.warm_start_windows = 200;
  const auto recent = sim::generate_stream(fresh);
  auto new_model = sim::warm_start_model(fresh, recent);
  new_model.version = 2;

  double before = 0.0, after = 0.0;
  std::size_t borderline = 0;
  for (const auto& fv : fvs) {
    const auto s = lof::score_window(old_model, fv).score;
    if (s <= 1.1 || s > old_model.threshold) continue;
    ++borderline;
    before += s;
    after += lof::score_window(new_model, fv).score;
  }
  ASSERT_GE(borderline, 10u);
  EXPECT_LT(after, before);
}
