#pragma once

// Wire messages exchanged between edge agents, the maintenance cloud and the
// simulator. One canonical-notation object per line:
//
//   {"edge_id":"e1","payload":{...},"seq":7,"timestamp_ms":...,"topic":"ANOMALY","version":1}\n

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lpm/canonical.hpp"

namespace lpm::protocol {

inline constexpr int kProtocolVersion = 1;

enum class Topic { anomaly, rule_proposal, raw_batch, model_update, ack };

inline constexpr std::string_view topic_name(Topic t) {
  switch (t) {
    case Topic::anomaly: return "ANOMALY";
    case Topic::rule_proposal: return "RULE_PROPOSAL";
    case Topic::raw_batch: return "RAW_BATCH";
    case Topic::model_update: return "MODEL_UPDATE";
    case Topic::ack: return "ACK";
  }
  return "?";
}

inline std::optional<Topic> topic_from_name(std::string_view s) {
  for (Topic t : {Topic::anomaly, Topic::rule_proposal, Topic::raw_batch, Topic::model_update,
                  Topic::ack})
    if (topic_name(t) == s) return t;
  return std::nullopt;
}

struct AnomalyEventPayload {
  std::string equipment_id;
  std::int64_t window_index = 0;
  double score = 0.0;
  std::vector<double> features;
  double threshold_at_detection = 1.0;
  std::int64_t model_version = 0;
  bool operator==(const AnomalyEventPayload&) const = default;
};

struct RuleProposalPayload {
  std::string rule_id;
  std::vector<double> lower;
  std::vector<double> upper;
  double min_score = 0.0;
  std::int64_t support_count = 1;
  bool operator==(const RuleProposalPayload&) const = default;
};

struct RawRecord {
  std::int64_t window_index = 0;
  std::vector<double> features;
  double score = 0.0;
  bool operator==(const RawRecord&) const = default;
};

struct RawBatchChunkPayload {
  std::int64_t chunk_index = 0;
  std::int64_t total_chunks = 1;
  std::vector<RawRecord> records;
  std::string segment_id;
  bool operator==(const RawBatchChunkPayload&) const = default;
};

struct ModelUpdatePayload {
  std::int64_t model_version = 0;
  std::int64_t k = 1;
  double threshold = 1.0;
  std::vector<std::vector<double>> reference_points;
  double eps = 1e-9;
  bool operator==(const ModelUpdatePayload&) const = default;
};

// Replies to any topic. For MODEL_UPDATE, `ok` is accept/reject and
// `active_version` is the version running on the edge afterwards.
struct AckPayload {
  Topic ack_topic = Topic::ack;
  std::uint64_t ack_seq = 0;
  bool ok = true;
  std::optional<std::int64_t> active_version;
  std::string detail;
  bool operator==(const AckPayload&) const = default;
};

using Payload = std::variant<AnomalyEventPayload, RuleProposalPayload, RawBatchChunkPayload,
                             ModelUpdatePayload, AckPayload>;

struct Envelope {
  Topic topic = Topic::ack;
  int version = kProtocolVersion;
  std::string edge_id;
  std::uint64_t seq = 0;
  std::int64_t timestamp_ms = 0;
  Payload payload = AckPayload{};
  bool operator==(const Envelope&) const = default;
};

class ProtocolError : public FormatError {
 public:
  enum class Kind { parse, unsupported_topic, validation, encoding };
  ProtocolError(Kind kind, const std::string& what) : FormatError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr Topic topic_of(const Payload& p) {
  switch (p.index()) {
    case 0: return Topic::anomaly;
    case 1: return Topic::rule_proposal;
    case 2: return Topic::raw_batch;
    case 3: return Topic::model_update;
    default: return Topic::ack;
  }
}

template <typename P>
Envelope make_envelope(std::string edge_id, std::uint64_t seq, std::int64_t timestamp_ms, P payload) {
  Envelope e;
  e.payload = std::move(payload);
  e.topic = topic_of(e.payload);
  e.edge_id = std::move(edge_id);
  e.seq = seq;
  e.timestamp_ms = timestamp_ms;
  return e;
}

namespace detail {

using lpm::detail::field;

[[noreturn]] inline void invalid(const std::string& what) {
  throw ProtocolError(ProtocolError::Kind::validation, what);
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void check(const AnomalyEventPayload& p) {
  if (!(p.score >= 0.0) || !std::isfinite(p.score)) invalid("anomaly score must be finite and >= 0");
  if (!(p.threshold_at_detection > 0.0) || !std::isfinite(p.threshold_at_detection))
    invalid("threshold_at_detection must be positive");
  if (p.features.empty()) invalid("anomaly features empty");
  for (double f : p.features)
    if (!(f >= 0.0) || !std::isfinite(f)) invalid("anomaly features must be finite and >= 0");
}

inline void check(const RuleProposalPayload& p) {
  if (p.lower.empty() || p.lower.size() != p.upper.size()) invalid("rule bounds dimension mismatch");
  if (!all_finite(p.lower) || !all_finite(p.upper) || !std::isfinite(p.min_score))
    invalid("rule bounds not finite");
  for (std::size_t i = 0; i < p.lower.size(); ++i)
    if (p.lower[i] > p.upper[i]) invalid("rule lower > upper in dimension " + std::to_string(i));
  if (p.support_count < 1) invalid("rule support_count < 1");
  if (p.rule_id.empty()) invalid("rule_id empty");
}

inline void check(const RawBatchChunkPayload& p) {
  if (p.total_chunks < 1) invalid("total_chunks < 1");
  if (p.chunk_index < 0 || p.chunk_index >= p.total_chunks) invalid("chunk_index out of range");
  if (p.segment_id.empty()) invalid("segment_id empty");
  for (const auto& r : p.records)
    if (!all_finite(r.features) || !std::isfinite(r.score)) invalid("raw record not finite");
}

inline void check(const ModelUpdatePayload& p) {
  if (p.k < 1) invalid("model k < 1");
  if (!(p.threshold > 0.0) || !std::isfinite(p.threshold)) invalid("model threshold must be positive");
  if (!(p.eps > 0.0) || !std::isfinite(p.eps)) invalid("model eps must be positive");
  if (p.reference_points.empty()) invalid("model reference_points empty");
  const auto dim = p.reference_points.front().size();
  if (dim == 0) invalid("model reference dimension 0");
  for (const auto& pt : p.reference_points) {
    if (pt.size() != dim) invalid("model reference points differ in dimension");
    if (!all_finite(pt)) invalid("model reference point not finite");
  }
}

inline void check(const AckPayload&) {}

inline Json to_json(const std::vector<std::vector<double>>& pts) {
  Json a = Json::array();
  for (const auto& p : pts) a.push_back(p);
  return a;
}

inline Json to_json(const AnomalyEventPayload& p) {
  return Json{{"equipment_id", p.equipment_id},   {"window_index", p.window_index},
              {"score", p.score},                 {"features", p.features},
              {"threshold_at_detection", p.threshold_at_detection},
              {"model_version", p.model_version}};
}

inline Json to_json(const RuleProposalPayload& p) {
  return Json{{"rule_id", p.rule_id},     {"lower", p.lower},
              {"upper", p.upper},         {"min_score", p.min_score},
              {"support_count", p.support_count}};
}

inline Json to_json(const RawRecord& r) {
  return Json{{"window_index", r.window_index}, {"features", r.features}, {"score", r.score}};
}

inline Json to_json(const RawBatchChunkPayload& p) {
  Json recs = Json::array();
  for (const auto& r : p.records) recs.push_back(to_json(r));
  return Json{{"chunk_index", p.chunk_index},
              {"total_chunks", p.total_chunks},
              {"records", std::move(recs)},
              {"segment_id", p.segment_id}};
}

inline Json to_json(const ModelUpdatePayload& p) {
  return Json{{"model_version", p.model_version},
              {"k", p.k},
              {"threshold", p.threshold},
              {"reference_points", to_json(p.reference_points)},
              {"eps", p.eps}};
}

inline Json to_json(const AckPayload& p) {
  Json j{{"ack_topic", topic_name(p.ack_topic)},
         {"ack_seq", p.ack_seq},
         {"ok", p.ok},
         {"detail", p.detail}};
  if (p.active_version) j["active_version"] = *p.active_version;
  return j;
}

inline std::vector<std::vector<double>> points_from_json(const Json& v, const char* what) {
  if (!v.is_array()) throw FormatError(std::string(what) + ": expected array");
  std::vector<std::vector<double>> out;
  out.reserve(v.size());
  for (const auto& p : v) out.push_back(lpm::detail::as_reals(p, what));
  return out;
}

inline RawRecord raw_record_from_json(const Json& j) {
  using namespace lpm::detail;
  if (!j.is_object()) throw FormatError("raw record: expected object");
  return RawRecord{int_at(j, "window_index"), reals_at(j, "features"), real_at(j, "score")};
}

inline Payload payload_from_json(Topic topic, const Json& j) {
  using namespace lpm::detail;
  if (!j.is_object()) throw FormatError("payload: expected object");
  switch (topic) {
    case Topic::anomaly:
      return AnomalyEventPayload{string_at(j, "equipment_id"), int_at(j, "window_index"),
                                 real_at(j, "score"),          reals_at(j, "features"),
                                 real_at(j, "threshold_at_detection"),
                                 int_at(j, "model_version")};
    case Topic::rule_proposal:
      return RuleProposalPayload{string_at(j, "rule_id"), reals_at(j, "lower"), reals_at(j, "upper"),
                                 real_at(j, "min_score"), int_at(j, "support_count")};
    case Topic::raw_batch: {
      RawBatchChunkPayload p;
      p.chunk_index = int_at(j, "chunk_index");
      p.total_chunks = int_at(j, "total_chunks");
      p.segment_id = string_at(j, "segment_id");
      const auto& recs = field(j, "records");
      if (!recs.is_array()) throw FormatError("records: expected array");
      for (const auto& r : recs) p.records.push_back(raw_record_from_json(r));
      return p;
    }
    case Topic::model_update:
      return ModelUpdatePayload{int_at(j, "model_version"), int_at(j, "k"), real_at(j, "threshold"),
                                points_from_json(field(j, "reference_points"), "reference_points"),
                                real_at(j, "eps")};
    case Topic::ack: {
      AckPayload p;
      auto t = topic_from_name(string_at(j, "ack_topic"));
      if (!t) throw ProtocolError(ProtocolError::Kind::unsupported_topic, "unknown ack_topic");
      p.ack_topic = *t;
      p.ack_seq = uint_at(j, "ack_seq");
      p.ok = bool_at(j, "ok");
      if (auto it = j.find("active_version"); it != j.end())
        p.active_version = as_int(*it, "active_version");
      if (auto it = j.find("detail"); it != j.end()) p.detail = as_string(*it, "detail");
      return p;
    }
  }
  throw ProtocolError(ProtocolError::Kind::unsupported_topic, "unknown topic");
}

}  // namespace detail

// Throws ProtocolError(validation) for invariant violations, ProtocolError(encoding)
// when the topic does not match the payload variant.
inline void validate(const Envelope& e) {
  if (topic_of(e.payload) != e.topic)
    throw ProtocolError(ProtocolError::Kind::encoding,
                        std::string("payload does not match topic ") + std::string(topic_name(e.topic)));
  if (e.version != kProtocolVersion) detail::invalid("unsupported protocol version");
  if (e.edge_id.empty()) detail::invalid("edge_id empty");
  std::visit([](const auto& p) { detail::check(p); }, e.payload);
}

inline Json to_json(const Envelope& e) {
  return Json{{"topic", topic_name(e.topic)},
              {"version", e.version},
              {"edge_id", e.edge_id},
              {"seq", e.seq},
              {"timestamp_ms", e.timestamp_ms},
              {"payload", std::visit([](const auto& p) { return detail::to_json(p); }, e.payload)}};
}

// Returns the canonical line including the trailing '\n'.
inline std::string encode(const Envelope& e) {
  validate(e);
  std::string line;
  try {
    line = to_json(e).dump();
  } catch (const Json::exception& ex) {
    throw ProtocolError(ProtocolError::Kind::encoding, ex.what());
  }
  line.push_back('\n');
  return line;
}

// Accepts a line with or without its terminator. Unknown fields are ignored.
inline Envelope decode(std::string_view line) {
  using Kind = ProtocolError::Kind;
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  if (line.empty()) throw ProtocolError(Kind::parse, "empty line");
  if (line.find('\n') != std::string_view::npos) throw ProtocolError(Kind::parse, "embedded newline");

  Json j;
  try {
    j = Json::parse(line.begin(), line.end());
  } catch (const Json::exception& ex) {
    throw ProtocolError(Kind::parse, ex.what());
  }
  if (!j.is_object()) throw ProtocolError(Kind::parse, "message is not an object");

  Envelope e;
  try {
    using namespace lpm::detail;
    auto name = string_at(j, "topic");
    auto topic = topic_from_name(name);
    if (!topic) throw ProtocolError(Kind::unsupported_topic, "unsupported topic '" + name + "'");
    e.topic = *topic;
    auto version = int_at(j, "version");
    if (version < 0 || version > 0xffff) detail::invalid("version out of range");
    e.version = static_cast<int>(version);
    e.edge_id = string_at(j, "edge_id");
    e.seq = uint_at(j, "seq");
    e.timestamp_ms = int_at(j, "timestamp_ms");
    e.payload = detail::payload_from_json(e.topic, field(j, "payload"));
  } catch (const ProtocolError&) {
    throw;
  } catch (const FormatError& ex) {
    throw ProtocolError(Kind::parse, ex.what());
  } catch (const Json::exception& ex) {
    throw ProtocolError(Kind::parse, ex.what());
  }
  validate(e);
  return e;
}

// Reassembles lines from arbitrarily segmented byte chunks.
class LineFramer {
 public:
  template <typename F>
  void feed(std::string_view bytes, F&& on_line) {
    for (char c : bytes) {
      if (c == '\n') {
        on_line(std::string_view(buffer_));
        buffer_.clear();
      } else {
        buffer_.push_back(c);
      }
    }
  }
  std::size_t pending() const noexcept { return buffer_.size(); }

 private:
  std::string buffer_;
};

template <typename P>
const P& payload_as(const Envelope& e) {
  return std::get<P>(e.payload);
}

}  // namespace lpm::protocol
