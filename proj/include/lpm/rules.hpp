#pragma once

// Hyper-rectangle detection rules: extraction from anomaly streaks at the
// edge, matching and box geometry shared with the cloud rule engine.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lpm/protocol.hpp"

namespace lpm::rules {

struct DetectionRule {
  std::string rule_id;
  std::vector<double> lower;
  std::vector<double> upper;
  double min_score = 0.0;
  std::int64_t support_count = 1;
  bool operator==(const DetectionRule&) const = default;
};

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s(buf);
  if (s == "-0.000000") s = "0.000000";
  return s;
}

// Content hash over (lower, upper, min_score) rounded to 6 decimals:
// "l:<v>,<v>...|u:<v>,...|s:<v>" hashed with FNV-1a 64, as "r" + 16 hex digits.
inline std::string rule_id_for(std::span<const double> lower, std::span<const double> upper,
                               double min_score) {
  std::string text = "l:";
  for (std::size_t i = 0; i < lower.size(); ++i) text += (i ? "," : "") + fixed6(lower[i]);
  text += "|u:";
  for (std::size_t i = 0; i < upper.size(); ++i) text += (i ? "," : "") + fixed6(upper[i]);
  text += "|s:" + fixed6(min_score);
  char buf[24];
  std::snprintf(buf, sizeof buf, "r%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

inline bool contains(std::span<const double> lower, std::span<const double> upper,
                     std::span<const double> point) {
  if (point.size() != lower.size()) return false;
  for (std::size_t i = 0; i < point.size(); ++i)
    if (point[i] < lower[i] || point[i] > upper[i]) return false;
  return true;
}

inline bool matches(const DetectionRule& r, std::span<const double> features, double score) {
  return score >= r.min_score && contains(r.lower, r.upper, features);
}

// Intersection-over-union of two boxes. Volumes are compared in log space so
// high-dimensional boxes with large extents neither overflow nor underflow.
// Extents thinner than `min_width` count as `min_width`.
inline double jaccard(std::span<const double> lo_a, std::span<const double> hi_a,
                      std::span<const double> lo_b, std::span<const double> hi_b,
                      double min_width = 1e-9) {
  if (lo_a.size() != lo_b.size()) return 0.0;
  double log_a = 0.0, log_b = 0.0, log_i = 0.0;
  for (std::size_t i = 0; i < lo_a.size(); ++i) {
    const double wa = std::max(hi_a[i] - lo_a[i], min_width);
    const double wb = std::max(hi_b[i] - lo_b[i], min_width);
    const double raw = std::min(hi_a[i], hi_b[i]) - std::max(lo_a[i], lo_b[i]);
    if (raw < 0.0) return 0.0;
    const double wi = std::min(std::max(raw, min_width), std::min(wa, wb));
    log_a += std::log(wa);
    log_b += std::log(wb);
    log_i += std::log(wi);
  }
  // J = I / (A + B - I) = 1 / (A/I + B/I - 1)
  const double ra = std::exp(log_a - log_i), rb = std::exp(log_b - log_i);
  return 1.0 / (ra + rb - 1.0);
}

inline double jaccard(const DetectionRule& a, const DetectionRule& b, double min_width = 1e-9) {
  return jaccard(a.lower, a.upper, b.lower, b.upper, min_width);
}

inline DetectionRule from_proposal(const protocol::RuleProposalPayload& p) {
  return DetectionRule{p.rule_id, p.lower, p.upper, p.min_score, p.support_count};
}

inline protocol::RuleProposalPayload to_proposal(const DetectionRule& r) {
  return protocol::RuleProposalPayload{r.rule_id, r.lower, r.upper, r.min_score, r.support_count};
}

struct ScoredFeatures {
  std::vector<double> features;
  double score = 0.0;
};

// Componentwise [min - margin*range, max + margin*range]; a zero range is
// replaced by eps. Returns nothing unless exactly m vectors are supplied.
inline std::optional<DetectionRule> extract_rule(std::span<const ScoredFeatures> streak, std::size_t m,
                                                 double margin, double eps = 1e-9) {
  if (m == 0 || streak.size() < m) return std::nullopt;
  streak = streak.last(m);
  const std::size_t dim = streak.front().features.size();
  DetectionRule r;
  r.lower.assign(dim, 0.0);
  r.upper.assign(dim, 0.0);
  r.min_score = streak.front().score;
  for (std::size_t i = 0; i < dim; ++i) {
    double lo = streak.front().features[i], hi = lo;
    for (const auto& s : streak) {
      lo = std::min(lo, s.features[i]);
      hi = std::max(hi, s.features[i]);
    }
    double range = hi - lo;
    if (range <= 0.0) range = eps;
    r.lower[i] = lo - margin * range;
    r.upper[i] = hi + margin * range;
  }
  for (const auto& s : streak) r.min_score = std::min(r.min_score, s.score);
  r.support_count = static_cast<std::int64_t>(m);
  r.rule_id = rule_id_for(r.lower, r.upper, r.min_score);
  return r;
}

// Tracks consecutive anomalous windows and emits a rule every m-th one.
class StreakTracker {
 public:
  StreakTracker(std::size_t m, double margin, double eps = 1e-9) : m_(m), margin_(margin), eps_(eps) {}

  std::optional<DetectionRule> observe(std::span<const double> features, double score, bool anomalous) {
    if (!anomalous) {
      streak_.clear();
      return std::nullopt;
    }
    streak_.push_back({std::vector<double>(features.begin(), features.end()), score});
    if (streak_.size() < m_) return std::nullopt;
    std::vector<ScoredFeatures> window(streak_.begin(), streak_.end());
    streak_.clear();
    return extract_rule(window, m_, margin_, eps_);
  }

  void reset() { streak_.clear(); }
  std::size_t length() const noexcept { return streak_.size(); }

 private:
  std::size_t m_;
  double margin_;
  double eps_;
  std::deque<ScoredFeatures> streak_;
};

}  // namespace lpm::rules
