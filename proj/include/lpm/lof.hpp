#pragma once

// Exact Local Outlier Factor over a bounded, FIFO-evicting reference set.
//
//   k-distance(o)    distance from o to its k-th nearest other point
//   N_k(o)           every point within k-distance(o), ties included
//   reach_k(p, o)    max(k-distance(o), d(p, o))
//   lrd_k(p)         |N_k(p)| / sum_{o in N_k(p)} reach_k(p, o)
//   LOF_k(p)         sum_{o in N_k(p)} lrd_k(o) / (|N_k(p)| * lrd_k(p))
//
// Every distance and reach-distance is clamped below by eps, so sets with
// duplicate points stay defined and duplicates score exactly 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lpm::lof {

using Point = std::vector<double>;

class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LofParams {
  std::size_t k = 5;
  double eps = 1e-9;
  bool operator==(const LofParams&) const = default;
};

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

struct Neighborhood {
  double k_distance = 0.0;
  std::vector<std::size_t> members;  // indices into the set, nearest first
  std::vector<double> distances;     // clamped, aligned with members
};

// k nearest neighbours of p in `set`, skipping index `self` when given.
inline Neighborhood knn(std::span<const double> p, std::span<const Point> set, std::size_t k,
                        double eps, std::optional<std::size_t> self = std::nullopt) {
  if (k == 0) throw InsufficientData("k must be >= 1");
  const std::size_t available = set.size() - (self ? 1 : 0);
  if (available < k)
    throw InsufficientData("need at least " + std::to_string(k) + " other points, have " +
                           std::to_string(available));

  std::vector<std::pair<double, std::size_t>> d;
  d.reserve(set.size());
  for (std::size_t j = 0; j < set.size(); ++j) {
    if (self && *self == j) continue;
    d.emplace_back(std::max(euclidean(p, set[j]), eps), j);
  }
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
  const double kdist = d[k - 1].first;

  Neighborhood n;
  n.k_distance = kdist;
  std::vector<std::pair<double, std::size_t>> within;
  for (const auto& e : d)
    if (e.first <= kdist) within.push_back(e);
  std::sort(within.begin(), within.end());
  for (const auto& [dist, j] : within) {
    n.members.push_back(j);
    n.distances.push_back(dist);
  }
  return n;
}

inline double k_distance(std::span<const double> p, std::span<const Point> set, std::size_t k,
                         double eps = 1e-9) {
  return knn(p, set, k, eps).k_distance;
}

// Scores queries against one fixed set. k-distances and lrds of set members
// are memoised, so scoring many queries against the same set stays cheap.
class LofScorer {
 public:
  LofScorer(std::span<const Point> set, LofParams params) : set_(set), params_(params) {
    if (params_.k == 0) throw InsufficientData("k must be >= 1");
    if (!(params_.eps > 0.0)) throw ModelError("eps must be positive");
    if (set_.size() < params_.k + 1)
      throw InsufficientData("reference needs more than k=" + std::to_string(params_.k) + " points");
    kdist_.assign(set_.size(), -1.0);
    lrd_.assign(set_.size(), -1.0);
  }

  // Query not in the set.
  double score(std::span<const double> p) { return lof_of(knn(p, set_, params_.k, params_.eps)); }

  // Set member i, excluding itself from its own neighbourhood.
  double score_member(std::size_t i) { return lof_of(member_knn(i)); }

 private:
  Neighborhood member_knn(std::size_t i) const {
    return knn(set_[i], set_, params_.k, params_.eps, i);
  }

  double member_kdist(std::size_t i) {
    if (kdist_[i] < 0.0) kdist_[i] = member_knn(i).k_distance;
    return kdist_[i];
  }

  // Means are taken as first + mean(offsets) so equal inputs give an exact result.
  template <typename F>
  static double shifted_mean(std::size_t n, F at) {
    const double first = at(0);
    double off = 0.0;
    for (std::size_t j = 1; j < n; ++j) off += at(j) - first;
    return first + off / static_cast<double>(n);
  }

  double lrd_from(const Neighborhood& n) {
    return 1.0 / shifted_mean(n.members.size(), [&](std::size_t j) {
             return std::max(member_kdist(n.members[j]), n.distances[j]);
           });
  }

  double member_lrd(std::size_t i) {
    if (lrd_[i] < 0.0) {
      auto n = member_knn(i);
      kdist_[i] = n.k_distance;
      lrd_[i] = lrd_from(n);
    }
    return lrd_[i];
  }

  double lof_of(const Neighborhood& n) {
    const double own = lrd_from(n);
    return shifted_mean(n.members.size(), [&](std::size_t j) { return member_lrd(n.members[j]); }) / own;
  }

  std::span<const Point> set_;
  LofParams params_;
  std::vector<double> kdist_;
  std::vector<double> lrd_;
};

inline double lof(std::span<const double> p, std::span<const Point> set, const LofParams& params) {
  return LofScorer(set, params).score(p);
}

inline double lof_member(std::size_t i, std::span<const Point> set, const LofParams& params) {
  return LofScorer(set, params).score_member(i);
}

// Bounded reference set; admission past capacity evicts the oldest point.
class ReferenceSet {
 public:
  ReferenceSet() = default;
  ReferenceSet(std::vector<Point> points, std::size_t capacity)
      : points_(std::move(points)), capacity_(capacity) {
    if (points_.size() > capacity_) throw ModelError("reference set larger than capacity");
    for (const auto& p : points_)
      if (p.size() != points_.front().size()) throw ModelError("reference points differ in dimension");
  }

  void push(Point p) {
    if (!points_.empty() && p.size() != dimension()) throw ModelError("dimension mismatch on admit");
    if (capacity_ == 0) return;
    if (points_.size() == capacity_) points_.erase(points_.begin());
    points_.push_back(std::move(p));
  }

  std::span<const Point> points() const noexcept { return points_; }
  std::size_t size() const noexcept { return points_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dimension() const noexcept { return points_.empty() ? 0 : points_.front().size(); }
  bool operator==(const ReferenceSet&) const = default;

 private:
  std::vector<Point> points_;
  std::size_t capacity_ = 512;
};

inline double default_admit_below(double threshold) { return 1.0 + 0.5 * (threshold - 1.0); }

struct ModelSnapshot {
  std::int64_t version = 0;
  LofParams params;
  ReferenceSet reference;
  double threshold = 1.5;
  double admit_below = default_admit_below(1.5);

  void validate() const {
    if (params.k < 1) throw ModelError("k must be >= 1");
    if (!(params.eps > 0.0)) throw ModelError("eps must be positive");
    if (!(threshold >= 1.0) || !std::isfinite(threshold)) throw ModelError("threshold must be >= 1");
    if (!(admit_below > 0.0) || admit_below > threshold)
      throw ModelError("admit_below must lie in (0, threshold]");
    if (reference.capacity() < params.k + 1) throw ModelError("capacity must be >= k+1");
  }
  bool operator==(const ModelSnapshot&) const = default;
};

struct WindowScore {
  double score = 0.0;
  bool is_anomaly = false;
};

inline WindowScore score_window(const ModelSnapshot& model, std::span<const double> fv) {
  if (model.reference.dimension() != fv.size())
    throw ModelError("feature dimension " + std::to_string(fv.size()) + " != model dimension " +
                     std::to_string(model.reference.dimension()));
  if (model.reference.size() <= model.params.k)
    throw InsufficientData("model reference has <= k points");
  const double s = lof(fv, model.reference.points(), model.params);
  return {s, s > model.threshold};
}

// Returns the model with fv appended when score < admit_below, else unchanged.
inline ModelSnapshot maybe_admit(ModelSnapshot model, std::span<const double> fv, double score) {
  if (score < model.admit_below) model.reference.push(Point(fv.begin(), fv.end()));
  return model;
}

// Linear interpolation between order statistics at rank (n-1)*q.
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw CalibrationError("quantile of empty set");
  std::sort(values.begin(), values.end());
  const double h = static_cast<double>(values.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline double calibrate_threshold(std::span<const double> scores, double q, double factor) {
  if (scores.size() < 20)
    throw CalibrationError("calibration needs >= 20 scores, got " + std::to_string(scores.size()));
  if (!(q > 0.0 && q < 1.0)) throw CalibrationError("quantile must lie in (0,1)");
  if (!(factor >= 1.0)) throw CalibrationError("factor must be >= 1");
  return std::max(1.0, factor * quantile({scores.begin(), scores.end()}, q));
}

// Leave-one-out LOF of every member; used to calibrate a freshly built model.
inline std::vector<double> member_scores(std::span<const Point> set, const LofParams& params) {
  LofScorer scorer(set, params);
  std::vector<double> out(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) out[i] = scorer.score_member(i);
  return out;
}

}  // namespace lpm::lof
