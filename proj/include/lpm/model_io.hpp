#pragma once

// Conversions between ModelSnapshot, the MODEL_UPDATE payload and the
// on-disk model file `model-v<version>`.

#include <filesystem>
#include <optional>
#include <string>

#include "lpm/canonical.hpp"
#include "lpm/lof.hpp"
#include "lpm/protocol.hpp"

namespace lpm::model_io {

inline protocol::ModelUpdatePayload to_update(const lof::ModelSnapshot& m) {
  protocol::ModelUpdatePayload p;
  p.model_version = m.version;
  p.k = static_cast<std::int64_t>(m.params.k);
  p.threshold = m.threshold;
  p.eps = m.params.eps;
  p.reference_points.assign(m.reference.points().begin(), m.reference.points().end());
  return p;
}

// Builds a snapshot from a pushed update. Throws lof::ModelError when the
// update cannot be scored with (dimension mismatch, too few points).
inline lof::ModelSnapshot from_update(const protocol::ModelUpdatePayload& p, std::size_t capacity,
                                      std::optional<double> admit_below = std::nullopt,
                                      std::optional<std::size_t> expected_dim = std::nullopt) {
  if (p.k < 1) throw lof::ModelError("k must be >= 1");
  if (p.reference_points.size() <= static_cast<std::size_t>(p.k))
    throw lof::ModelError("model has <= k reference points");
  const auto dim = p.reference_points.front().size();
  for (const auto& pt : p.reference_points)
    if (pt.size() != dim) throw lof::ModelError("reference points differ in dimension");
  if (expected_dim && dim != *expected_dim)
    throw lof::ModelError("model dimension " + std::to_string(dim) + " != feature dimension " +
                          std::to_string(*expected_dim));
  lof::ModelSnapshot m;
  m.version = p.model_version;
  m.params = {static_cast<std::size_t>(p.k), p.eps};
  m.reference = lof::ReferenceSet(p.reference_points, std::max(capacity, p.reference_points.size()));
  m.threshold = p.threshold;
  m.admit_below = admit_below.value_or(lof::default_admit_below(p.threshold));
  m.validate();
  return m;
}

inline Json to_json(const lof::ModelSnapshot& m) {
  Json j = protocol::detail::to_json(to_update(m));
  j["admit_below"] = m.admit_below;
  return j;
}

inline lof::ModelSnapshot from_json(const Json& j, std::size_t capacity) {
  auto payload = std::get<protocol::ModelUpdatePayload>(
      protocol::detail::payload_from_json(protocol::Topic::model_update, j));
  std::optional<double> admit;
  if (j.contains("admit_below")) admit = detail::real_at(j, "admit_below");
  return from_update(payload, capacity, admit);
}

inline std::filesystem::path model_path(const std::filesystem::path& dir, std::int64_t version) {
  return dir / ("model-v" + std::to_string(version));
}

inline void save(const std::filesystem::path& dir, const lof::ModelSnapshot& m) {
  std::filesystem::create_directories(dir);
  write_canonical_file(model_path(dir, m.version), to_json(m));
}

inline lof::ModelSnapshot load(const std::filesystem::path& file, std::size_t capacity) {
  return from_json(read_canonical_file(file), capacity);
}

// Highest-versioned `model-v<N>` file in dir, if any.
inline std::optional<std::filesystem::path> latest_in(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) return std::nullopt;
  std::optional<std::filesystem::path> best;
  std::int64_t best_version = -1;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("model-v", 0) != 0) continue;
    try {
      std::size_t used = 0;
      const auto v = std::stoll(name.substr(7), &used);
      if (used != name.size() - 7) continue;
      if (v > best_version) {
        best_version = v;
        best = entry.path();
      }
    } catch (const std::exception&) {
    }
  }
  return best;
}

}  // namespace lpm::model_io
