#pragma once

// The maintenance cloud: CEP ingest of anomaly events, rule merging, failure
// prediction, maintenance orders, raw batch storage, retraining and model
// distribution. All state sits behind one mutex (a single writer); every log
// append happens before the corresponding ACK is returned.
//
// Store layout under store_dir:
//   events.log       one line per stored anomaly event (with alert, if any)
//   predictions.log  failure predictions
//   rules.log        merged proposals, in arrival order
//   orders.log       order state after every transition
//   raw.log          raw records, followed by a commit line per segment
//   deliveries.log   model distribution outcomes
//   erp-orders.log   the ERP stub's output
//   models/<edge>/model-v<N>

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lpm/cloud/catalog.hpp"
#include "lpm/cloud/config.hpp"
#include "lpm/cloud/orders.hpp"
#include "lpm/cloud/predictor.hpp"
#include "lpm/cloud/retrain.hpp"
#include "lpm/cloud/rule_set.hpp"
#include "lpm/cloud/store.hpp"
#include "lpm/log.hpp"
#include "lpm/model_io.hpp"
#include "lpm/protocol.hpp"
#include "lpm/rules.hpp"
#include "lpm/transport.hpp"

namespace lpm::cloud {

using Clock = std::function<std::int64_t()>;

inline std::int64_t system_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

class Conflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Severity { warning, critical };

inline std::string severity_name(Severity s) { return s == Severity::critical ? "critical" : "warning"; }

struct EventRecord {
  std::string edge_id;
  std::uint64_t seq = 0;
  protocol::AnomalyEventPayload event;
  std::int64_t received_at = 0;
  std::vector<std::string> matched_rules;
  std::optional<std::string> alert_id;
};

struct Alert {
  std::string alert_id;
  std::size_t event = 0;  // index into the event list
  Severity severity = Severity::warning;
  std::optional<std::string> prediction_id;
};

enum class DeliveryState { pending, pushed, accepted, rejected };

inline std::string delivery_name(DeliveryState s) {
  switch (s) {
    case DeliveryState::pending: return "pending";
    case DeliveryState::pushed: return "pushed";
    case DeliveryState::accepted: return "accepted";
    case DeliveryState::rejected: break;
  }
  return "rejected";
}

struct Delivery {
  std::string edge_id;
  std::int64_t version = 0;
  std::uint64_t push_seq = 0;
  DeliveryState state = DeliveryState::pending;
  std::optional<std::int64_t> edge_active_version;
  std::string detail;
};

struct IngestResult {
  bool duplicate = false;
  std::size_t event = 0;
  std::optional<std::string> alert_id;
};

struct CloudStats {
  std::size_t events = 0;
  std::size_t duplicates = 0;
  std::size_t alerts = 0;
  std::size_t predictions = 0;
  std::size_t orders = 0;
  std::size_t rules = 0;
  std::size_t raw_records = 0;
  std::size_t raw_segments = 0;
  std::size_t retrain_cycles = 0;
};

class MaintenanceCloud final : public transport::LineHandler {
 public:
  explicit MaintenanceCloud(CloudConfig cfg, Clock clock = system_clock_ms)
      : cfg_(std::move(cfg)),
        clock_(std::move(clock)),
        events_log_(cfg_.store_dir / "events.log"),
        predictions_log_(cfg_.store_dir / "predictions.log"),
        rules_log_(cfg_.store_dir / "rules.log"),
        orders_log_(cfg_.store_dir / "orders.log"),
        raw_log_(cfg_.store_dir / "raw.log"),
        deliveries_log_(cfg_.store_dir / "deliveries.log"),
        erp_(cfg_.store_dir / "erp-orders.log") {
    cfg_.catalog.validate();
    for (const auto& r : cfg_.authored_rules) rules_.author(r);
    rebuild();
  }

  const CloudConfig& config() const noexcept { return cfg_; }
  ErpStub& erp() noexcept { return erp_; }

  // Test hook: makes every store append fail until cleared.
  void inject_storage_failure(bool on) {
    std::lock_guard lock(mu_);
    storage_fault_ = on;
  }

  // --- transport ---------------------------------------------------------

  std::optional<std::string> handle_line(std::string_view line,
                                         const std::shared_ptr<transport::EdgeSession>& session) override {
    protocol::Envelope env;
    try {
      env = protocol::decode(line);
    } catch (const protocol::ProtocolError& e) {
      log::warn("cloud", "dropping line: ", e.what());
      return std::nullopt;
    }
    std::lock_guard lock(mu_);
    attach(env.edge_id, session);
    switch (env.topic) {
      case protocol::Topic::anomaly: return reply(env, ingest_locked(env).has_value());
      case protocol::Topic::rule_proposal: return reply(env, proposal_locked(env));
      case protocol::Topic::raw_batch: return reply(env, chunk_locked(env));
      case protocol::Topic::ack: ack_locked(env); return std::nullopt;
      case protocol::Topic::model_update: break;
    }
    log::warn("cloud", "unexpected MODEL_UPDATE from ", env.edge_id);
    return std::nullopt;
  }

  void on_disconnect(const std::shared_ptr<transport::EdgeSession>& session) override {
    std::lock_guard lock(mu_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      auto s = it->second.lock();
      if (!s || s == session) {
        // A push that never got its ACK is re-sent on reconnect.
        if (auto d = deliveries_.find(it->first); d != deliveries_.end() && d->second.state == DeliveryState::pushed)
          d->second.state = DeliveryState::pending;
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }

  // --- speed layer -------------------------------------------------------

  IngestResult ingest_event(const std::string& edge_id, std::uint64_t seq, const protocol::AnomalyEventPayload& e) {
    std::lock_guard lock(mu_);
    auto r = ingest_locked(protocol::make_envelope(edge_id, seq, clock_(), e));
    if (!r) throw StorageError("event store unavailable");
    return *r;
  }

  MergeOutcome merge_rule(const std::string& edge_id, std::uint64_t seq, const protocol::RuleProposalPayload& p) {
    std::lock_guard lock(mu_);
    auto env = protocol::make_envelope(edge_id, seq, clock_(), p);
    if (!proposal_locked(env)) throw StorageError("rule store unavailable");
    return last_merge_;
  }

  // --- serving layer -----------------------------------------------------

  FailurePrediction predict(const std::string& equipment_id) {
    std::lock_guard lock(mu_);
    auto it = latest_prediction_.find(equipment_id);
    if (it == latest_prediction_.end()) throw NoDataError("no prediction for equipment '" + equipment_id + "'");
    return predictions_.at(it->second);
  }

  std::optional<FailurePrediction> prediction(const std::string& prediction_id) const {
    std::lock_guard lock(mu_);
    auto it = predictions_.find(prediction_id);
    if (it == predictions_.end()) return std::nullopt;
    return it->second;
  }

  MaintenanceOrder create_order(const std::string& prediction_id) {
    std::lock_guard lock(mu_);
    return create_order_locked(prediction_id);
  }

  // PROPOSED -> APPROVED -> (ERP receipt) SUBMITTED. Stays APPROVED while the
  // ERP is unreachable; retry_submissions() picks it up later.
  MaintenanceOrder approve_order(const std::string& order_id) {
    std::lock_guard lock(mu_);
    const auto* o = orders_.find(order_id);
    if (!o) throw NotFound("unknown order " + order_id);
    if (o->status != OrderStatus::proposed)
      throw OrderStateError("order " + order_id + " is " + status_name(o->status) + ", not PROPOSED");
    persist_order(orders_.transition(order_id, OrderStatus::approved, clock_()));
    submit_locked(order_id);
    return *orders_.find(order_id);
  }

  MaintenanceOrder reject_order(const std::string& order_id) {
    std::lock_guard lock(mu_);
    if (!orders_.find(order_id)) throw NotFound("unknown order " + order_id);
    auto o = orders_.transition(order_id, OrderStatus::rejected, clock_());
    persist_order(o);
    return o;
  }

  std::size_t retry_submissions() {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    std::vector<std::string> ids;
    for (const auto& o : orders_.all())
      if (o.status == OrderStatus::approved) ids.push_back(o.order_id);
    for (const auto& id : ids) n += submit_locked(id) ? 1 : 0;
    return n;
  }

  std::vector<MaintenanceOrder> orders() const {
    std::lock_guard lock(mu_);
    return orders_.all();
  }

  std::optional<MaintenanceOrder> order(const std::string& id) const {
    std::lock_guard lock(mu_);
    if (const auto* o = orders_.find(id)) return *o;
    return std::nullopt;
  }

  std::vector<CepRule> rules() const {
    std::lock_guard lock(mu_);
    return rules_.rules();
  }

  // Pure cloud-side rule evaluation.
  std::vector<std::string> evaluate_rules(const std::string& equipment_id, std::span<const double> features,
                                          double score) const {
    std::lock_guard lock(mu_);
    return rules_.matching(equipment_id, features, score);
  }

  std::size_t alert_count() const {
    std::lock_guard lock(mu_);
    return alerts_.size();
  }

  // Newest first.
  std::vector<Json> alert_page(std::size_t limit, std::size_t offset) const {
    std::lock_guard lock(mu_);
    std::vector<Json> out;
    for (std::size_t i = offset; i < alerts_.size() && out.size() < limit; ++i)
      out.push_back(alert_json(alerts_[alerts_.size() - 1 - i]));
    return out;
  }

  std::optional<Json> alert(const std::string& alert_id) const {
    std::lock_guard lock(mu_);
    auto it = alert_index_.find(alert_id);
    if (it == alert_index_.end()) return std::nullopt;
    return alert_json(alerts_[it->second]);
  }

  std::vector<EventRecord> events() const {
    std::lock_guard lock(mu_);
    return events_;
  }

  CloudStats stats() const {
    std::lock_guard lock(mu_);
    CloudStats s;
    s.events = events_.size();
    s.duplicates = duplicates_;
    s.alerts = alerts_.size();
    s.predictions = predictions_.size();
    s.orders = orders_.all().size();
    s.rules = rules_.size();
    for (const auto& [edge, recs] : raw_) s.raw_records += recs.size();
    s.raw_segments = committed_.size();
    s.retrain_cycles = retrain_cycles_;
    return s;
  }

  // --- batch layer -------------------------------------------------------

  std::vector<protocol::RawRecord> raw_records(const std::string& edge_id) const {
    std::lock_guard lock(mu_);
    auto it = raw_.find(edge_id);
    return it == raw_.end() ? std::vector<protocol::RawRecord>{} : it->second;
  }

  // Scores a snapshot of the edge's raw records without holding the lock, so
  // ingest continues while the model is built.
  RetrainReport retrain(const std::string& edge_id) {
    std::vector<protocol::RawRecord> snapshot;
    std::int64_t previous = 0;
    {
      std::lock_guard lock(mu_);
      if (auto it = raw_.find(edge_id); it != raw_.end()) snapshot = it->second;
      previous = latest_version_locked(edge_id);
    }
    auto rep = cloud::retrain(snapshot, cfg_.retrain, previous);
    std::lock_guard lock(mu_);
    // A concurrent retrain may have claimed the version meanwhile.
    rep.snapshot.version = std::max(rep.snapshot.version, latest_version_locked(edge_id) + 1);
    model_io::save(model_dir(edge_id), rep.snapshot);
    models_[edge_id] = rep.snapshot;
    ++retrain_cycles_;
    log::info("cloud", "retrained ", edge_id, " -> v", rep.snapshot.version, " threshold ", rep.snapshot.threshold);
    return rep;
  }

  std::optional<lof::ModelSnapshot> latest_model(const std::string& edge_id) const {
    std::lock_guard lock(mu_);
    auto it = models_.find(edge_id);
    if (it == models_.end()) return std::nullopt;
    return it->second;
  }

  // Pushes the edge's latest model (or the given one) now, or on reconnect.
  Delivery distribute(const std::string& edge_id, std::optional<lof::ModelSnapshot> snapshot = std::nullopt) {
    std::lock_guard lock(mu_);
    if (!snapshot) {
      auto it = models_.find(edge_id);
      if (it == models_.end()) throw NotFound("no model for edge '" + edge_id + "'");
      snapshot = it->second;
    }
    Delivery d;
    d.edge_id = edge_id;
    d.version = snapshot->version;
    d.push_seq = ++push_seq_;
    if (auto prev = deliveries_.find(edge_id); prev != deliveries_.end())
      d.edge_active_version = prev->second.edge_active_version;
    else if (auto a = active_versions_.find(edge_id); a != active_versions_.end())
      d.edge_active_version = a->second;
    pending_updates_[edge_id] = model_io::to_update(*snapshot);
    deliveries_[edge_id] = d;
    try_push_locked(edge_id);
    return deliveries_[edge_id];
  }

  // Edges with raw data or a live session.
  std::vector<std::string> known_edges() const {
    std::lock_guard lock(mu_);
    std::set<std::string> ids;
    for (const auto& [e, _] : raw_) ids.insert(e);
    for (const auto& [e, _] : sessions_) ids.insert(e);
    for (const auto& [e, _] : models_) ids.insert(e);
    return {ids.begin(), ids.end()};
  }

  std::optional<Delivery> delivery(const std::string& edge_id) const {
    std::lock_guard lock(mu_);
    auto it = deliveries_.find(edge_id);
    if (it == deliveries_.end()) return std::nullopt;
    return it->second;
  }

  static Json to_json(const Delivery& d) {
    return Json{{"edge_id", d.edge_id},
                {"model_version", d.version},
                {"status", delivery_name(d.state)},
                {"edge_active_version", d.edge_active_version ? Json(*d.edge_active_version) : Json()},
                {"detail", d.detail}};
  }

  static Json to_json(const EventRecord& r) {
    Json j = protocol::detail::to_json(r.event);
    return Json{{"edge_id", r.edge_id},
                {"seq", r.seq},
                {"event", j},
                {"received_at", r.received_at},
                {"matched_rules", r.matched_rules},
                {"alert_id", r.alert_id ? Json(*r.alert_id) : Json()}};
  }

 private:
  // --- ingest internals (mu_ held) ----------------------------------------

  std::optional<std::string> reply(const protocol::Envelope& env, bool ok) {
    protocol::AckPayload ack{env.topic, env.seq, ok, std::nullopt, ok ? "" : "storage failure"};
    return protocol::encode(protocol::make_envelope(env.edge_id, ++ack_seq_, clock_(), std::move(ack)));
  }

  void append(AppendLog& log, const Json& j) {
    if (storage_fault_) throw StorageError("injected storage failure");
    log.append(j);
  }

  std::int64_t received_now() {
    last_received_ = std::max(last_received_, clock_());
    return last_received_;
  }

  std::optional<IngestResult> ingest_locked(const protocol::Envelope& env) {
    const auto& e = protocol::payload_as<protocol::AnomalyEventPayload>(env);
    const auto key = std::make_pair(env.edge_id, env.seq);
    if (auto it = event_keys_.find(key); it != event_keys_.end()) {
      ++duplicates_;
      return IngestResult{true, it->second, events_[it->second].alert_id};
    }
    EventRecord rec;
    rec.edge_id = env.edge_id;
    rec.seq = env.seq;
    rec.event = e;
    rec.received_at = received_now();
    rec.matched_rules = rules_.matching(e.equipment_id, e.features, e.score);
    const bool alert = !rec.matched_rules.empty() || e.score > cfg_.alert_factor * e.threshold_at_detection;
    if (alert) rec.alert_id = "alert-" + std::to_string(alerts_.size() + 1);
    try {
      append(events_log_, to_json(rec));
    } catch (const StorageError& err) {
      log::error("cloud", err.what());
      return std::nullopt;
    }
    const auto idx = index_event(std::move(rec));
    if (alert) raise_prediction(idx);
    return IngestResult{false, idx, events_[idx].alert_id};
  }

  std::size_t index_event(EventRecord rec) {
    const auto idx = events_.size();
    event_keys_[{rec.edge_id, rec.seq}] = idx;
    history_[rec.event.equipment_id].push_back(idx);
    if (rec.alert_id) {
      Alert a;
      a.alert_id = *rec.alert_id;
      a.event = idx;
      a.severity = rec.event.score >= 2.0 * rec.event.threshold_at_detection ? Severity::critical : Severity::warning;
      alert_index_[a.alert_id] = alerts_.size();
      alerts_.push_back(std::move(a));
    }
    events_.push_back(std::move(rec));
    return idx;
  }

  void raise_prediction(std::size_t event_idx) {
    const auto& rec = events_[event_idx];
    const auto& hist = history_[rec.event.equipment_id];
    std::vector<ScoredEvent> scored;
    scored.reserve(hist.size());
    for (auto i : hist) {
      const auto& ev = events_[i].event;
      scored.push_back({ev.window_index, ev.score, ev.threshold_at_detection, ev.features});
      if (i == event_idx) break;
    }
    FailurePrediction p;
    try {
      p = predict_failure(rec.event.equipment_id, scored, cfg_.catalog, cfg_.eta_window);
    } catch (const std::exception& err) {
      log::warn("cloud", "no prediction for ", rec.event.equipment_id, ": ", err.what());
      return;
    }
    p.prediction_id = "pred-" + std::to_string(predictions_.size() + 1);
    p.alert_id = *rec.alert_id;
    try {
      append(predictions_log_, cloud::to_json(p));
    } catch (const StorageError& err) {
      log::error("cloud", err.what());
      return;
    }
    index_prediction(p);
    if (cfg_.auto_propose_orders && !orders_.open_for(p.equipment_id)) {
      try {
        create_order_locked(p.prediction_id);
      } catch (const std::exception& err) {
        log::warn("cloud", "order proposal failed: ", err.what());
      }
    }
  }

  void index_prediction(const FailurePrediction& p) {
    predictions_[p.prediction_id] = p;
    latest_prediction_[p.equipment_id] = p.prediction_id;
    if (auto it = alert_index_.find(p.alert_id); it != alert_index_.end())
      alerts_[it->second].prediction_id = p.prediction_id;
  }

  bool proposal_locked(const protocol::Envelope& env) {
    const auto& p = protocol::payload_as<protocol::RuleProposalPayload>(env);
    const auto key = std::make_pair(env.edge_id, env.seq);
    if (proposal_keys_.count(key)) {
      last_merge_ = {MergeOutcome::Kind::support_incremented, rules_.resolve(p.rule_id), {}};
      return true;
    }
    try {
      append(rules_log_, Json{{"edge_id", env.edge_id},
                              {"seq", env.seq},
                              {"proposal", protocol::detail::to_json(p)}});
    } catch (const StorageError& err) {
      log::error("cloud", err.what());
      return false;
    }
    proposal_keys_.insert(key);
    last_merge_ = rules_.merge(rules::from_proposal(p));
    return true;
  }

  bool chunk_locked(const protocol::Envelope& env) {
    const auto& c = protocol::payload_as<protocol::RawBatchChunkPayload>(env);
    if (committed_.count(c.segment_id)) return true;  // re-sent after a lost ACK
    auto& seg = pending_segments_[c.segment_id];
    if (seg.total != c.total_chunks || seg.edge_id != env.edge_id) {
      seg = {};
      seg.edge_id = env.edge_id;
      seg.total = c.total_chunks;
    }
    seg.chunks[c.chunk_index] = c.records;
    if (static_cast<std::int64_t>(seg.chunks.size()) < seg.total) return true;

    std::vector<protocol::RawRecord> records;
    for (auto& [i, part] : seg.chunks) records.insert(records.end(), part.begin(), part.end());
    try {
      for (const auto& r : records)
        append(raw_log_, Json{{"edge_id", env.edge_id}, {"segment_id", c.segment_id},
                              {"record", protocol::detail::to_json(r)}});
      append(raw_log_, Json{{"commit", c.segment_id}, {"edge_id", env.edge_id}, {"records", records.size()}});
    } catch (const StorageError& err) {
      // Records without a commit line are ignored on replay; the edge resends.
      log::error("cloud", err.what());
      pending_segments_.erase(c.segment_id);
      return false;
    }
    commit_segment(env.edge_id, c.segment_id, std::move(records));
    pending_segments_.erase(c.segment_id);
    return true;
  }

  void commit_segment(const std::string& edge_id, const std::string& segment_id,
                      std::vector<protocol::RawRecord> records) {
    committed_.insert(segment_id);
    auto& dst = raw_[edge_id];
    dst.insert(dst.end(), std::make_move_iterator(records.begin()), std::make_move_iterator(records.end()));
  }

  void ack_locked(const protocol::Envelope& env) {
    const auto& a = protocol::payload_as<protocol::AckPayload>(env);
    if (a.ack_topic != protocol::Topic::model_update) return;
    if (a.active_version) active_versions_[env.edge_id] = *a.active_version;
    auto it = deliveries_.find(env.edge_id);
    if (it == deliveries_.end()) return;
    auto& d = it->second;
    if (a.active_version) d.edge_active_version = *a.active_version;
    if (a.ack_seq == 0) {
      // Hello on a fresh connection: a push applied before the drop counts.
      if (d.state != DeliveryState::accepted && d.state != DeliveryState::rejected && a.active_version &&
          *a.active_version >= d.version) {
        d.state = DeliveryState::accepted;
        record_delivery(d);
      }
      return;
    }
    if (a.ack_seq != d.push_seq) return;
    d.state = a.ok ? DeliveryState::accepted : DeliveryState::rejected;
    d.detail = a.detail;
    pending_updates_.erase(env.edge_id);
    record_delivery(d);
  }

  void record_delivery(const Delivery& d) {
    try {
      append(deliveries_log_, to_json(d));
    } catch (const StorageError& err) {
      log::error("cloud", err.what());
    }
  }

  void attach(const std::string& edge_id, const std::shared_ptr<transport::EdgeSession>& session) {
    if (!session) return;
    auto& slot = sessions_[edge_id];
    if (slot.lock() != session) slot = session;
    try_push_locked(edge_id);
  }

  void try_push_locked(const std::string& edge_id) {
    auto d = deliveries_.find(edge_id);
    auto u = pending_updates_.find(edge_id);
    if (d == deliveries_.end() || u == pending_updates_.end() || d->second.state != DeliveryState::pending) return;
    auto s = sessions_.find(edge_id);
    if (s == sessions_.end()) return;
    auto session = s->second.lock();
    if (!session || !session->alive()) return;
    const auto line = protocol::encode(protocol::make_envelope(edge_id, d->second.push_seq, clock_(), u->second));
    if (session->push(line)) d->second.state = DeliveryState::pushed;
  }

  std::int64_t latest_version_locked(const std::string& edge_id) const {
    std::int64_t v = 0;
    if (auto it = models_.find(edge_id); it != models_.end()) v = it->second.version;
    if (auto it = active_versions_.find(edge_id); it != active_versions_.end()) v = std::max(v, it->second);
    return v;
  }

  std::filesystem::path model_dir(const std::string& edge_id) const { return cfg_.store_dir / "models" / edge_id; }

  // --- orders (mu_ held) ---------------------------------------------------

  MaintenanceOrder create_order_locked(const std::string& prediction_id) {
    auto it = predictions_.find(prediction_id);
    if (it == predictions_.end()) throw NotFound("unknown prediction " + prediction_id);
    const auto& p = it->second;
    if (const auto* open = orders_.open_for(p.equipment_id))
      throw Conflict("equipment " + p.equipment_id + " already has open order " + open->order_id);
    const auto* entry = cfg_.catalog.find(p.cause);
    MaintenanceOrder o;
    o.equipment_id = p.equipment_id;
    o.part = entry ? entry->part : p.part;
    o.action = entry ? entry->action : p.action;
    o.prediction_id = p.prediction_id;
    o.cause = p.cause;
    auto& created = orders_.create(std::move(o), clock_());
    persist_order(created);
    return created;
  }

  bool submit_locked(const std::string& order_id) {
    const auto* o = orders_.find(order_id);
    auto receipt = erp_.submit(*o, clock_());
    if (!receipt) {
      log::warn("cloud", "ERP unavailable; order ", order_id, " stays APPROVED");
      return false;
    }
    auto& done = orders_.transition(order_id, OrderStatus::submitted, clock_());
    done.erp_receipt = *receipt;
    persist_order(done);
    return true;
  }

  void persist_order(const MaintenanceOrder& o) {
    try {
      append(orders_log_, cloud::to_json(o));
    } catch (const StorageError& err) {
      log::error("cloud", "order ", o.order_id, " not persisted: ", err.what());
    }
  }

  Json alert_json(const Alert& a) const {
    const auto& rec = events_[a.event];
    Json j{{"alert_id", a.alert_id},
           {"equipment_id", rec.event.equipment_id},
           {"edge_id", rec.edge_id},
           {"window_index", rec.event.window_index},
           {"score", rec.event.score},
           {"threshold", rec.event.threshold_at_detection},
           {"severity", severity_name(a.severity)},
           {"time", rec.received_at},
           {"matched_rules", rec.matched_rules},
           {"model_version", rec.event.model_version},
           {"prediction", nullptr}};
    if (a.prediction_id)
      if (auto it = predictions_.find(*a.prediction_id); it != predictions_.end())
        j["prediction"] = cloud::to_json(it->second);
    return j;
  }

  // --- restart -------------------------------------------------------------

  void rebuild() {
    events_log_.replay([&](const Json& j) {
      EventRecord r;
      r.edge_id = detail::string_at(j, "edge_id");
      r.seq = detail::uint_at(j, "seq");
      r.event = std::get<protocol::AnomalyEventPayload>(
          protocol::detail::payload_from_json(protocol::Topic::anomaly, detail::field(j, "event")));
      r.received_at = detail::int_at(j, "received_at");
      r.matched_rules = j.at("matched_rules").get<std::vector<std::string>>();
      if (j.at("alert_id").is_string()) r.alert_id = j.at("alert_id").get<std::string>();
      last_received_ = std::max(last_received_, r.received_at);
      index_event(std::move(r));
    });
    predictions_log_.replay([&](const Json& j) { index_prediction(prediction_from_json(j)); });
    rules_log_.replay([&](const Json& j) {
      proposal_keys_.insert({detail::string_at(j, "edge_id"), detail::uint_at(j, "seq")});
      const auto p = std::get<protocol::RuleProposalPayload>(
          protocol::detail::payload_from_json(protocol::Topic::rule_proposal, detail::field(j, "proposal")));
      rules_.merge(rules::from_proposal(p));
    });
    orders_log_.replay([&](const Json& j) { orders_.restore(order_from_json(j)); });
    std::map<std::string, std::vector<protocol::RawRecord>> uncommitted;
    raw_log_.replay([&](const Json& j) {
      if (j.contains("commit")) {
        const auto seg = detail::string_at(j, "commit");
        auto it = uncommitted.find(seg);
        if (it == uncommitted.end() || committed_.count(seg)) return;
        commit_segment(detail::string_at(j, "edge_id"), seg, std::move(it->second));
        uncommitted.erase(it);
      } else {
        uncommitted[detail::string_at(j, "segment_id")].push_back(
            protocol::detail::raw_record_from_json(detail::field(j, "record")));
      }
    });
    deliveries_log_.replay([&](const Json& j) {
      if (j.at("edge_active_version").is_number_integer())
        active_versions_[detail::string_at(j, "edge_id")] = detail::int_at(j, "edge_active_version");
    });
    const auto models_root = cfg_.store_dir / "models";
    if (std::filesystem::is_directory(models_root))
      for (const auto& e : std::filesystem::directory_iterator(models_root))
        if (auto latest = model_io::latest_in(e.path()))
          models_[e.path().filename().string()] = model_io::load(*latest, cfg_.retrain.capacity);
    if (!events_.empty() || !raw_.empty())
      log::info("cloud", "restored ", events_.size(), " events, ", committed_.size(), " raw segments");
  }

  struct PendingSegment {
    std::string edge_id;
    std::int64_t total = 0;
    std::map<std::int64_t, std::vector<protocol::RawRecord>> chunks;
  };

  CloudConfig cfg_;
  Clock clock_;
  mutable std::mutex mu_;
  bool storage_fault_ = false;

  AppendLog events_log_, predictions_log_, rules_log_, orders_log_, raw_log_, deliveries_log_;
  ErpStub erp_;

  std::vector<EventRecord> events_;
  std::map<std::pair<std::string, std::uint64_t>, std::size_t> event_keys_;
  std::map<std::string, std::vector<std::size_t>> history_;  // equipment -> event indices
  std::size_t duplicates_ = 0;
  std::int64_t last_received_ = 0;

  std::vector<Alert> alerts_;
  std::map<std::string, std::size_t> alert_index_;
  std::map<std::string, FailurePrediction> predictions_;
  std::map<std::string, std::string> latest_prediction_;  // equipment -> prediction id

  RuleSet rules_;
  std::set<std::pair<std::string, std::uint64_t>> proposal_keys_;
  MergeOutcome last_merge_;

  OrderBook orders_;

  std::map<std::string, PendingSegment> pending_segments_;
  std::set<std::string> committed_;
  std::map<std::string, std::vector<protocol::RawRecord>> raw_;

  std::map<std::string, lof::ModelSnapshot> models_;
  std::map<std::string, std::int64_t> active_versions_;
  std::map<std::string, Delivery> deliveries_;
  std::map<std::string, protocol::ModelUpdatePayload> pending_updates_;
  std::map<std::string, std::weak_ptr<transport::EdgeSession>> sessions_;
  std::uint64_t push_seq_ = 0;
  std::uint64_t ack_seq_ = 0;
  std::size_t retrain_cycles_ = 0;
};

}  // namespace lpm::cloud
