#pragma once

// The speed-layer node: windows -> features -> LOF score -> spool, and
// forwards only anomaly events and rule proposals to the cloud. Pushed model
// updates are applied between windows, so every window is scored by exactly
// one model version.

#include <atomic>
#include <chrono>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>

#include "lpm/edge/config.hpp"
#include "lpm/edge/spool.hpp"
#include "lpm/features.hpp"
#include "lpm/lof.hpp"
#include "lpm/log.hpp"
#include "lpm/model_io.hpp"
#include "lpm/protocol.hpp"
#include "lpm/rules.hpp"
#include "lpm/transport.hpp"

namespace lpm::edge {

using Clock = std::function<std::int64_t()>;

inline std::int64_t wall_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

struct WindowOutcome {
  std::int64_t window_index = 0;
  double score = 0.0;
  bool is_anomaly = false;
  bool warmup = false;
  std::int64_t model_version = 0;
  std::vector<double> features;
};

struct EdgeStats {
  std::uint64_t windows_processed = 0;
  std::uint64_t windows_skipped = 0;  // already spooled before a restart
  std::uint64_t anomalies_flagged = 0;
  std::uint64_t anomalies_acked = 0;
  std::uint64_t rule_proposals = 0;
  std::uint64_t events_dropped = 0;
  std::uint64_t updates_accepted = 0;
  std::uint64_t updates_rejected = 0;
  std::size_t retry_queue = 0;
  std::int64_t model_version = 0;
  std::size_t reference_size = 0;
};

struct UploadResult {
  std::size_t segments_uploaded = 0;
  std::size_t chunks_sent = 0;
  std::size_t records_sent = 0;
  std::size_t segments_pending = 0;  // retained after a failure
  bool complete() const noexcept { return segments_pending == 0; }
};

struct UpdateDecision {
  bool accepted = false;
  std::int64_t active_version = 0;
  std::string reason;
};

class EdgeAgent {
 public:
  EdgeAgent(EdgeConfig cfg, std::optional<lof::ModelSnapshot> initial, transport::CloudLink& link,
            Clock clock = wall_clock_ms)
      : cfg_((cfg.validate(), std::move(cfg))),
        extractor_(cfg_.features),
        windower_(cfg_.features.window_size, cfg_.features.hop),
        spool_(cfg_.spool_dir, cfg_.edge_id, cfg_.segment_windows),
        streak_(cfg_.rule_streak, cfg_.rule_margin, cfg_.lof.eps),
        link_(link),
        clock_(std::move(clock)) {
    lof::ModelSnapshot m;
    if (auto latest = model_io::latest_in(cfg_.model_dir)) {
      // A previously accepted update survives restarts.
      m = model_io::load(*latest, cfg_.capacity);
      if (initial && initial->version > m.version) m = *initial;
    } else if (initial) {
      m = *initial;
    } else {
      m.params = cfg_.lof;
      m.reference = lof::ReferenceSet({}, cfg_.capacity);
      m.threshold = 1.5;
      m.admit_below = lof::default_admit_below(m.threshold);
    }
    if (m.reference.dimension() != 0 && m.reference.dimension() != cfg_.features.dimension())
      throw lof::ModelError("initial model dimension does not match feature configuration");
    // An empty (or tiny) reference is bootstrapped from the first windows.
    warmup_left_ = m.reference.size() > m.params.k ? 0 : m.params.k + 1 - m.reference.size();
    model_ = std::make_shared<const lof::ModelSnapshot>(std::move(m));
  }

  static std::optional<lof::ModelSnapshot> load_initial_model(const EdgeConfig& cfg) {
    if (cfg.initial_model.empty()) return std::nullopt;
    return model_io::load(cfg.initial_model, cfg.capacity);
  }

  void on_window(std::function<void(const WindowOutcome&)> f) { observer_ = std::move(f); }

  void push_sample(const features::SensorSample& s) {
    features::Window w;
    if (windower_.push(s, w)) process_window(w);
  }

  void process_window(const features::Window& w) {
    const std::int64_t index = w.start_index / static_cast<std::int64_t>(cfg_.features.hop);
    apply_pending_updates();
    keep_session();
    flush_retry_queue();
    if (index < spool_.next_window_index()) {
      ++stats_.windows_skipped;
      return;
    }

    auto model = model_;
    const auto fv = extractor_.extract(w.samples).flat();
    WindowOutcome out{index, 0.0, false, warmup_left_ > 0, model->version, fv};

    if (out.warmup) {
      --warmup_left_;
      if (model->reference.size() > model->params.k) out.score = lof::score_window(*model, fv).score;
      spool_.append({index, fv, out.score});
      auto next = *model;
      next.reference.push(fv);
      swap_model(std::move(next));
    } else {
      const auto r = lof::score_window(*model, fv);
      out.score = r.score;
      out.is_anomaly = r.is_anomaly;
      spool_.append({index, fv, r.score});
      if (r.is_anomaly) {
        ++stats_.anomalies_flagged;
        publish(protocol::make_envelope(
            cfg_.edge_id, static_cast<std::uint64_t>(index) + 1, clock_(),
            protocol::AnomalyEventPayload{cfg_.equipment_id, index, r.score, fv, model->threshold, model->version}));
      }
      if (auto rule = streak_.observe(fv, r.score, r.is_anomaly)) {
        ++stats_.rule_proposals;
        publish(protocol::make_envelope(cfg_.edge_id, static_cast<std::uint64_t>(index) + 1, clock_(),
                                        rules::to_proposal(*rule)));
      }
      if (r.score < model->admit_below) swap_model(lof::maybe_admit(*model, fv, r.score));
    }
    ++stats_.windows_processed;
    if (observer_) observer_(out);
    if (cfg_.batch_every_windows && ++since_batch_ >= *cfg_.batch_every_windows) {
      since_batch_ = 0;
      upload_batch();
    }
  }

  // Seals the active segment and sends every closed segment as RAW_BATCH
  // chunks. A segment is deleted only after its final chunk is ACKed.
  UploadResult upload_batch() {
    std::lock_guard upload_lock(upload_mu_);
    UploadResult res;
    spool_.close_active();
    for (const auto& seg : spool_.closed_segments()) {
      auto records = Spool::read_segment(seg.path);
      if (records.empty()) {
        spool_.remove_segment(seg, -1);
        continue;
      }
      const std::size_t per = cfg_.chunk_records;
      const auto total = static_cast<std::int64_t>((records.size() + per - 1) / per);
      bool ok = true;
      for (std::int64_t c = 0; c < total && ok; ++c) {
        protocol::RawBatchChunkPayload chunk;
        chunk.chunk_index = c;
        chunk.total_chunks = total;
        chunk.segment_id = seg.segment_id;
        const auto begin = static_cast<std::size_t>(c) * per;
        const auto end = std::min(records.size(), begin + per);
        chunk.records.assign(records.begin() + static_cast<std::ptrdiff_t>(begin),
                             records.begin() + static_cast<std::ptrdiff_t>(end));
        auto ack = link_.request(protocol::make_envelope(cfg_.edge_id, ++batch_seq_, clock_(), std::move(chunk)));
        ok = ack && ack->ok;
        if (ok) ++res.chunks_sent;
      }
      if (!ok) {
        ++res.segments_pending;
        continue;
      }
      res.records_sent += records.size();
      ++res.segments_uploaded;
      spool_.remove_segment(seg, records.back().window_index);
    }
    return res;
  }

  // Validates and swaps in a pushed model. Called on the pipeline thread.
  UpdateDecision apply_model_update(const protocol::ModelUpdatePayload& update) {
    const auto current = model_->version;
    if (update.model_version <= current) {
      ++stats_.updates_rejected;
      return {false, current, "stale version " + std::to_string(update.model_version)};
    }
    try {
      auto m = model_io::from_update(update, cfg_.capacity, std::nullopt, cfg_.features.dimension());
      model_io::save(cfg_.model_dir, m);
      swap_model(std::move(m));
    } catch (const std::exception& e) {
      ++stats_.updates_rejected;
      return {false, current, std::string("malformed model: ") + e.what()};
    }
    ++stats_.updates_accepted;
    return {true, model_->version, ""};
  }

  // Drains MODEL_UPDATE pushes and ACKs each with accept/reject.
  void apply_pending_updates() {
    for (auto& env : link_.take_incoming()) {
      if (env.topic != protocol::Topic::model_update) continue;
      auto d = apply_model_update(protocol::payload_as<protocol::ModelUpdatePayload>(env));
      link_.post(protocol::make_envelope(
          cfg_.edge_id, ++ack_seq_, clock_(),
          protocol::AckPayload{protocol::Topic::model_update, env.seq, d.accepted, d.active_version, d.reason}));
    }
  }

  std::shared_ptr<const lof::ModelSnapshot> model() const {
    std::lock_guard lock(model_mu_);
    return model_;
  }

  EdgeStats stats() const {
    EdgeStats s = stats_;
    auto m = model();
    s.model_version = m->version;
    s.reference_size = m->reference.size();
    s.retry_queue = retry_.size();
    return s;
  }

  const Spool& spool() const noexcept { return spool_; }
  Spool& spool() noexcept { return spool_; }
  const EdgeConfig& config() const noexcept { return cfg_; }

  // Reconnects, sends queued events and applies pushed updates outside the
  // window loop. Returns true when nothing is left queued.
  bool drain() {
    keep_session();
    flush_retry_queue();
    apply_pending_updates();
    return retry_.empty();
  }

  // Announces the active model version on a fresh connection so the cloud can
  // route pending pushes to this edge.
  void keep_session() {
    if (!link_.ensure_connected()) return;
    const auto epoch = link_.connection_epoch();
    if (epoch == announced_epoch_) return;
    if (link_.post(protocol::make_envelope(
            cfg_.edge_id, ++ack_seq_, clock_(),
            protocol::AckPayload{protocol::Topic::model_update, 0, true, model()->version, "hello"})))
      announced_epoch_ = epoch;
  }

 private:
  void swap_model(lof::ModelSnapshot next) {
    auto p = std::make_shared<const lof::ModelSnapshot>(std::move(next));
    std::lock_guard lock(model_mu_);
    model_ = std::move(p);
  }

  void publish(protocol::Envelope e) {
    if (retry_.empty() && try_send(e)) return;
    retry_.push_back(std::move(e));
    while (retry_.size() > cfg_.retry_queue_limit) {
      retry_.pop_front();
      ++stats_.events_dropped;
    }
  }

  void flush_retry_queue() {
    while (!retry_.empty()) {
      if (!try_send(retry_.front())) return;
      retry_.pop_front();
    }
  }

  bool try_send(const protocol::Envelope& e) {
    auto ack = link_.request(e);
    if (!ack || !ack->ok) return false;
    if (e.topic == protocol::Topic::anomaly) ++stats_.anomalies_acked;
    return true;
  }

  EdgeConfig cfg_;
  features::FeatureExtractor extractor_;
  features::Windower windower_;
  Spool spool_;
  rules::StreakTracker streak_;
  transport::CloudLink& link_;
  Clock clock_;
  mutable std::mutex model_mu_;
  std::shared_ptr<const lof::ModelSnapshot> model_;
  std::function<void(const WindowOutcome&)> observer_;
  std::deque<protocol::Envelope> retry_;
  std::mutex upload_mu_;
  std::size_t warmup_left_ = 0;
  std::size_t since_batch_ = 0;
  std::uint64_t batch_seq_ = 0;
  std::uint64_t ack_seq_ = 0;
  std::uint64_t announced_epoch_ = 0;
  EdgeStats stats_;
};

}  // namespace lpm::edge
