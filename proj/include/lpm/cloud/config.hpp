#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lpm/canonical.hpp"
#include "lpm/cloud/catalog.hpp"
#include "lpm/cloud/retrain.hpp"
#include "lpm/cloud/rule_set.hpp"

namespace lpm::cloud {

struct CloudConfig {
  std::uint16_t tcp_port = 7700;
  std::uint16_t http_port = 7780;
  std::string bind = "127.0.0.1";
  std::filesystem::path store_dir = "cloud-store";
  std::filesystem::path catalog_path;
  FaultCatalog catalog;  // loaded from catalog_path unless given inline
  RetrainParams retrain;
  bool auto_propose_orders = false;
  double alert_factor = 2.0;
  std::size_t eta_window = 20;
  std::vector<CepRule> authored_rules;
};

inline RetrainParams retrain_params_from_json(const Json& j, RetrainParams p = {}) {
  using lpm::detail::value_or;
  p.lof.k = value_or<std::size_t>(j, "k", p.lof.k);
  p.lof.eps = value_or<double>(j, "eps", p.lof.eps);
  p.capacity = value_or<std::size_t>(j, "capacity", p.capacity);
  p.min_records = value_or<std::size_t>(j, "min_records", p.min_records);
  p.normal_quantile = value_or<double>(j, "normal_quantile", p.normal_quantile);
  p.threshold_quantile = value_or<double>(j, "threshold_quantile", p.threshold_quantile);
  p.threshold_factor = value_or<double>(j, "threshold_factor", p.threshold_factor);
  return p;
}

inline CloudConfig cloud_config_from_json(const Json& j, const std::filesystem::path& base = {}) {
  using namespace lpm::detail;
  if (!j.is_object()) throw FormatError("cloud config must be an object");
  auto rel = [&](const std::string& p) -> std::filesystem::path {
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
  };
  CloudConfig c;
  c.tcp_port = value_or<std::uint16_t>(j, "tcp_port", c.tcp_port);
  c.http_port = value_or<std::uint16_t>(j, "http_port", c.http_port);
  c.bind = value_or<std::string>(j, "bind", c.bind);
  c.store_dir = rel(value_or<std::string>(j, "store_dir", "cloud-store"));
  if (j.contains("catalog")) {
    c.catalog = catalog_from_json(j.at("catalog"));
  } else {
    c.catalog_path = rel(string_at(j, "catalog_path"));
    c.catalog = catalog_from_json(read_canonical_file(c.catalog_path));
  }
  if (j.contains("retrain")) c.retrain = retrain_params_from_json(j.at("retrain"));
  c.retrain.seed = value_or<std::uint64_t>(j, "retrain_seed", c.retrain.seed);
  c.auto_propose_orders = value_or<bool>(j, "auto_propose_orders", false);
  c.alert_factor = value_or<double>(j, "alert_factor", c.alert_factor);
  c.eta_window = value_or<std::size_t>(j, "eta_window", c.eta_window);
  if (j.contains("rules"))
    for (const auto& r : j.at("rules")) c.authored_rules.push_back(cep_rule_from_json(r));
  return c;
}

inline CloudConfig load_cloud_config(const std::filesystem::path& file) {
  return cloud_config_from_json(read_canonical_file(file), file.parent_path());
}

}  // namespace lpm::cloud
