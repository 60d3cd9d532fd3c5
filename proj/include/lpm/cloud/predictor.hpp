#pragma once

// Failure prediction: nearest catalog signature for the cause, and a
// least-squares trend of score over window index for the time to failure.

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpm/cloud/catalog.hpp"
#include "lpm/lof.hpp"

namespace lpm::cloud {

class NoDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Eta {
  enum class Kind { windows, imminent, unbounded };
  Kind kind = Kind::unbounded;
  double windows = 0.0;

  static Eta in(double w) { return {Kind::windows, w}; }
  static Eta imminent() { return {Kind::imminent, 0.0}; }
  static Eta unbounded() { return {Kind::unbounded, 0.0}; }
  bool operator==(const Eta&) const = default;
};

inline Json to_json(const Eta& e) {
  switch (e.kind) {
    case Eta::Kind::windows: return e.windows;
    case Eta::Kind::imminent: return "imminent";
    case Eta::Kind::unbounded: break;
  }
  return "unbounded";
}

inline Eta eta_from_json(const Json& j) {
  if (j.is_number()) return Eta::in(j.get<double>());
  if (j == "imminent") return Eta::imminent();
  return Eta::unbounded();
}

struct ScoredEvent {
  std::int64_t window_index = 0;
  double score = 0.0;
  double threshold = 1.0;
  std::vector<double> features;
};

struct FailurePrediction {
  std::string prediction_id;
  std::string equipment_id;
  std::string cause;
  std::string part;
  OrderAction action = OrderAction::inspect;
  double confidence = 0.0;
  Eta eta;
  double latest_score = 0.0;
  double critical_score = 0.0;
  std::string alert_id;
  bool operator==(const FailurePrediction&) const = default;
};

inline Json to_json(const FailurePrediction& p) {
  return Json{{"prediction_id", p.prediction_id}, {"equipment_id", p.equipment_id},
              {"cause", p.cause},                 {"part", p.part},
              {"action", action_name(p.action)},  {"confidence", p.confidence},
              {"eta_windows", to_json(p.eta)},    {"latest_score", p.latest_score},
              {"critical_score", p.critical_score}, {"alert_id", p.alert_id}};
}

inline FailurePrediction prediction_from_json(const Json& j) {
  using namespace lpm::detail;
  FailurePrediction p;
  p.prediction_id = string_at(j, "prediction_id");
  p.equipment_id = string_at(j, "equipment_id");
  p.cause = string_at(j, "cause");
  p.part = string_at(j, "part");
  p.action = action_from_name(string_at(j, "action"));
  p.confidence = real_at(j, "confidence");
  p.eta = eta_from_json(field(j, "eta_windows"));
  p.latest_score = real_at(j, "latest_score");
  p.critical_score = real_at(j, "critical_score");
  p.alert_id = value_or<std::string>(j, "alert_id", "");
  return p;
}

struct Classification {
  const CatalogEntry* entry = nullptr;
  double confidence = 0.0;
};

// confidence = 1 / (1 + d_nearest / d_second); ties keep catalog order.
inline Classification classify(const FaultCatalog& catalog, std::span<const double> fv) {
  if (catalog.entries.empty()) throw NoDataError("empty catalog");
  std::size_t best = 0, second = 0;
  double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
  for (std::size_t i = 0; i < catalog.entries.size(); ++i) {
    const auto& sig = catalog.entries[i].signature;
    if (sig.size() != fv.size()) throw lof::ModelError("catalog signature dimension mismatch");
    const double d = lof::euclidean(sig, fv);
    if (d < d1) {
      d2 = d1;
      second = best;
      d1 = d;
      best = i;
    } else if (d < d2) {
      d2 = d;
      second = i;
    }
  }
  (void)second;
  Classification c{&catalog.entries[best], 1.0};
  if (catalog.entries.size() > 1) c.confidence = d2 > 0.0 ? 1.0 / (1.0 + d1 / d2) : 0.5;
  return c;
}

struct TrendFit {
  double slope = std::numeric_limits<double>::quiet_NaN();
  double intercept = std::numeric_limits<double>::quiet_NaN();
};

inline TrendFit least_squares(std::span<const ScoredEvent> events) {
  TrendFit f;
  const auto n = static_cast<double>(events.size());
  if (events.size() < 2) return f;
  double mx = 0, my = 0;
  for (const auto& e : events) {
    mx += static_cast<double>(e.window_index);
    my += e.score;
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (const auto& e : events) {
    const double dx = static_cast<double>(e.window_index) - mx;
    sxy += dx * (e.score - my);
    sxx += dx * dx;
  }
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

// `history` holds the equipment's events oldest first; its last element is the
// latest anomalous event. Only the trailing `trend_window` events feed the fit.
inline FailurePrediction predict_failure(const std::string& equipment_id, std::span<const ScoredEvent> history,
                                         const FaultCatalog& catalog, std::size_t trend_window = 20) {
  if (history.empty()) throw NoDataError("no events for equipment '" + equipment_id + "'");
  const auto& latest = history.back();
  const auto cls = classify(catalog, latest.features);

  FailurePrediction p;
  p.equipment_id = equipment_id;
  p.cause = cls.entry->cause;
  p.part = cls.entry->part;
  p.action = cls.entry->action;
  p.confidence = cls.confidence;
  p.latest_score = latest.score;
  p.critical_score = 2.0 * latest.threshold;

  const auto tail = history.size() > trend_window ? history.last(trend_window) : history;
  const auto fit = least_squares(tail);
  if (latest.score >= p.critical_score) {
    p.eta = Eta::imminent();
  } else if (std::isfinite(fit.slope) && fit.slope > 0.0) {
    const double at_latest = fit.intercept + fit.slope * static_cast<double>(latest.window_index);
    p.eta = Eta::in((p.critical_score - at_latest) / fit.slope);
  } else {
    p.eta = Eta::unbounded();
  }
  return p;
}

}  // namespace lpm::cloud
