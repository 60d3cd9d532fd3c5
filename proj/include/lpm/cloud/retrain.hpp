#pragma once

// Batch-layer retraining over every raw record uploaded by one edge.

#include <algorithm>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "lpm/lof.hpp"
#include "lpm/protocol.hpp"

namespace lpm::cloud {

class RetrainRefused : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RetrainParams {
  lof::LofParams lof;
  std::size_t capacity = 512;
  std::size_t min_records = 200;
  double normal_quantile = 0.95;
  double threshold_quantile = 0.99;
  double threshold_factor = 1.2;
  std::uint64_t seed = 42;
};

struct RetrainReport {
  lof::ModelSnapshot snapshot;
  std::size_t records = 0;
  std::size_t normal_pool = 0;
  double normal_cutoff = 0.0;
};

inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> all(n), out;
  std::iota(all.begin(), all.end(), std::size_t{0});
  out.reserve(std::min(n, count));
  std::sample(all.begin(), all.end(), std::back_inserter(out), count, rng);
  return out;
}

inline RetrainReport retrain(std::span<const protocol::RawRecord> records, const RetrainParams& params,
                             std::int64_t previous_version) {
  if (records.size() < params.min_records)
    throw RetrainRefused("retrain needs >= " + std::to_string(params.min_records) + " records, have " +
                         std::to_string(records.size()));
  const auto dim = records.front().features.size();
  for (const auto& r : records)
    if (r.features.size() != dim) throw RetrainRefused("raw records differ in feature dimension");

  std::mt19937_64 rng(params.seed);

  // (1) score every record against a uniform sample of the records.
  const auto idx = sample_indices(records.size(), params.capacity, rng);
  std::vector<lof::Point> sample;
  sample.reserve(idx.size());
  std::vector<std::ptrdiff_t> position(records.size(), -1);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    sample.push_back(records[idx[i]].features);
    position[idx[i]] = static_cast<std::ptrdiff_t>(i);
  }
  lof::LofScorer scorer(sample, params.lof);
  std::vector<double> scores(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    scores[i] = position[i] >= 0 ? scorer.score_member(static_cast<std::size_t>(position[i]))
                                 : scorer.score(records[i].features);

  // (2) normal pool: records at or below the quantile cut.
  const double cutoff = lof::quantile(scores, params.normal_quantile);
  std::vector<std::size_t> pool;
  std::vector<double> pool_scores;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (scores[i] <= cutoff) {
      pool.push_back(i);
      pool_scores.push_back(scores[i]);
    }
  const auto chosen = sample_indices(pool.size(), params.capacity, rng);
  std::vector<lof::Point> reference;
  reference.reserve(chosen.size());
  for (auto c : chosen) reference.push_back(records[pool[c]].features);
  if (reference.size() <= params.lof.k) throw RetrainRefused("normal pool smaller than k+1");

  RetrainReport rep;
  rep.records = records.size();
  rep.normal_pool = pool.size();
  rep.normal_cutoff = cutoff;
  auto& m = rep.snapshot;
  m.version = previous_version + 1;
  m.params = params.lof;
  m.reference = lof::ReferenceSet(std::move(reference), params.capacity);
  // (3) threshold from the normal pool's scores.
  m.threshold = lof::calibrate_threshold(pool_scores, params.threshold_quantile, params.threshold_factor);
  m.admit_below = lof::default_admit_below(m.threshold);
  m.validate();
  return rep;
}

}  // namespace lpm::cloud
