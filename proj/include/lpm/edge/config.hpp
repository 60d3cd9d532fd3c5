#pragma once

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>

#include "lpm/canonical.hpp"
#include "lpm/features.hpp"
#include "lpm/lof.hpp"

namespace lpm::edge {

struct EdgeConfig {
  std::string edge_id;
  std::string equipment_id;
  std::string cloud_address = "127.0.0.1:7700";
  features::FeatureConfig features;
  lof::LofParams lof;
  std::size_t capacity = 512;
  std::filesystem::path initial_model;  // empty: start from an empty reference
  std::filesystem::path model_dir = "models";
  std::filesystem::path spool_dir = "spool";
  std::optional<std::size_t> batch_every_windows;  // nullopt: manual trigger only
  std::size_t rule_streak = 3;
  double rule_margin = 0.0;
  std::size_t segment_windows = 10000;
  std::size_t chunk_records = 500;
  std::size_t retry_queue_limit = 10000;
  std::string sample_source = "-";

  void validate() const {
    if (edge_id.empty()) throw FormatError("edge_id must be non-empty");
    if (batch_every_windows && *batch_every_windows < 1) throw FormatError("batch_every_windows must be >= 1");
    if (rule_streak < 1) throw FormatError("rule_streak must be >= 1");
    if (capacity < lof.k + 1) throw FormatError("capacity must be >= k+1");
    if (chunk_records < 1 || segment_windows < 1) throw FormatError("chunk/segment sizes must be >= 1");
    features.validate();
  }
};

inline EdgeConfig edge_config_from_json(const Json& j, const std::filesystem::path& base = {}) {
  using namespace lpm::detail;
  if (!j.is_object()) throw FormatError("edge config must be an object");
  auto rel = [&](const std::string& p) -> std::filesystem::path {
    if (p.empty()) return {};
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
  };
  EdgeConfig c;
  c.edge_id = string_at(j, "edge_id");
  c.equipment_id = value_or<std::string>(j, "equipment_id", c.edge_id);
  c.cloud_address = value_or<std::string>(j, "cloud_address", c.cloud_address);
  c.features.window_size = value_or<std::size_t>(j, "window_size", 256);
  c.features.hop = value_or<std::size_t>(j, "hop", c.features.window_size);
  if (j.contains("band_edges")) {
    c.features.band_edges = j.at("band_edges").get<std::vector<std::size_t>>();
  } else {
    const auto bands = value_or<std::size_t>(j, "bands", 8);
    const auto spacing = value_or<std::string>(j, "band_spacing", "log");
    if (spacing != "log" && spacing != "linear") throw FormatError("band_spacing must be log or linear");
    c.features.band_edges = spacing == "linear" ? features::linear_band_edges(c.features.window_size, bands)
                                                : features::log_band_edges(c.features.window_size, bands);
  }
  c.lof.k = value_or<std::size_t>(j, "k", 5);
  c.lof.eps = value_or<double>(j, "eps", 1e-9);
  c.capacity = value_or<std::size_t>(j, "capacity", 512);
  c.initial_model = rel(value_or<std::string>(j, "initial_model", ""));
  c.model_dir = rel(value_or<std::string>(j, "model_dir", "models"));
  c.spool_dir = rel(value_or<std::string>(j, "spool_dir", "spool"));
  if (j.contains("batch_every_windows") && !j.at("batch_every_windows").is_null())
    c.batch_every_windows = j.at("batch_every_windows").get<std::size_t>();
  c.rule_streak = value_or<std::size_t>(j, "rule_streak", 3);
  c.rule_margin = value_or<double>(j, "rule_margin", 0.0);
  c.segment_windows = value_or<std::size_t>(j, "segment_windows", 10000);
  c.chunk_records = value_or<std::size_t>(j, "chunk_records", 500);
  c.retry_queue_limit = value_or<std::size_t>(j, "retry_queue_limit", 10000);
  c.sample_source = value_or<std::string>(j, "sample_source", "-");
  if (const std::string tag = "scenario:"; c.sample_source.rfind(tag, 0) == 0)
    c.sample_source = tag + rel(c.sample_source.substr(tag.size())).string();
  else if (c.sample_source != "-")
    c.sample_source = rel(c.sample_source).string();
  if (const char* env = std::getenv("EDGE_CLOUD_ADDR"); env && *env) c.cloud_address = env;
  c.validate();
  return c;
}

inline EdgeConfig load_edge_config(const std::filesystem::path& file) {
  return edge_config_from_json(read_canonical_file(file), file.parent_path());
}

}  // namespace lpm::edge
