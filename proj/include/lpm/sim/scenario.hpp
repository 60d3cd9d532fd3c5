#pragma once

// Synthetic fan-hum sensor streams: harmonics of a base bin plus Gaussian
// noise; a fault adds an inharmonic tone and extra broadband noise.

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lpm/canonical.hpp"
#include "lpm/cloud/catalog.hpp"
#include "lpm/features.hpp"
#include "lpm/log.hpp"

namespace lpm::sim {

struct Fault {
  std::int64_t start_window = 0;
  std::int64_t end_window = 0;  // inclusive
  std::int64_t extra_bin = 0;
  double extra_amp = 0.0;
  double noise_boost = 0.0;

  bool covers(std::int64_t w) const { return w >= start_window && w <= end_window; }
};

// Harmonic amplitudes scale by 1 before start_window, by `gain` from
// start_window + ramp_windows on, linearly in between.
struct Drift {
  std::int64_t start_window = 0;
  std::int64_t ramp_windows = 1;
  double gain = 1.0;

  double factor(std::int64_t w) const {
    if (w < start_window) return 1.0;
    if (ramp_windows <= 0 || w >= start_window + ramp_windows) return gain;
    return 1.0 + (gain - 1.0) * static_cast<double>(w - start_window) / static_cast<double>(ramp_windows);
  }
};

// Catalog entry described by the fault tone it stands for; its signature is
// the feature vector of a noiseless window carrying that tone.
struct CatalogTone {
  std::string cause;
  std::string part;
  std::string action = "INSPECT";
  std::int64_t extra_bin = 0;
  double extra_amp = 1.0;
};

struct Assertions {
  std::optional<double> min_recall;
  std::optional<double> min_precision;
  std::optional<std::int64_t> max_latency_windows;
  std::optional<double> max_speed_ratio;
  std::optional<std::int64_t> max_orders;
  std::optional<std::int64_t> min_orders;
  bool fp_must_drop = false;
  bool update_must_be_accepted = false;
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  std::int64_t duration_windows = 2000;
  std::size_t window_size = 256;
  std::int64_t base_freq_bin = 8;
  std::vector<double> harmonic_amps{1.0, 0.5, 0.25};
  double noise_sigma = 0.05;
  std::vector<Fault> faults;
  std::optional<Drift> drift;

  // Harness settings.
  std::string edge_id = "edge-1";
  std::string equipment_id = "fan-1";
  std::size_t warm_start_windows = 50;
  double warm_start_quantile = 0.99;
  double warm_start_factor = 1.5;
  std::size_t bands = 8;
  std::string band_spacing = "log";  // log | linear
  std::size_t k = 5;
  std::size_t capacity = 512;
  std::size_t rule_streak = 3;
  std::int64_t retrain_at_window = -1;  // -1: midpoint
  std::uint64_t retrain_seed = 42;
  std::size_t holdout_windows = 0;      // held-out normal replay after the drift
  std::vector<CatalogTone> catalog;
  Assertions assertions;

  std::int64_t retrain_window() const { return retrain_at_window >= 0 ? retrain_at_window : duration_windows / 2; }

  void validate() const {
    if (duration_windows < 1) throw FormatError("duration_windows must be >= 1");
    if (window_size < 4) throw FormatError("window_size must be >= 4");
    if (!(noise_sigma >= 0.0)) throw FormatError("noise_sigma must be >= 0");
    if (harmonic_amps.empty()) throw FormatError("harmonic_amps must be non-empty");
    const auto nyquist = static_cast<std::int64_t>(window_size / 2);
    if (base_freq_bin < 1 || base_freq_bin * static_cast<std::int64_t>(harmonic_amps.size()) > nyquist)
      throw FormatError("harmonics exceed the Nyquist bin");
    for (const auto& f : faults) {
      if (f.start_window < 0 || f.end_window < f.start_window || f.end_window >= duration_windows)
        throw FormatError("fault interval outside the scenario");
      if (f.extra_bin < 1 || f.extra_bin > nyquist) throw FormatError("fault bin outside (0, N/2]");
      if (!(f.noise_boost >= 0.0)) throw FormatError("noise_boost must be >= 0");
      if (f.start_window < static_cast<std::int64_t>(warm_start_windows))
        throw FormatError("fault inside the warm-start windows");
    }
    if (warm_start_windows <= k) throw FormatError("warm_start_windows must exceed k");
    if (band_spacing != "log" && band_spacing != "linear") throw FormatError("band_spacing must be log or linear");
  }

  // Faults whose tone sits on a harmonic bin cannot be told apart spectrally.
  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < faults.size(); ++i)
      for (std::size_t h = 0; h < harmonic_amps.size(); ++h)
        if (faults[i].extra_bin == base_freq_bin * static_cast<std::int64_t>(h + 1))
          out.push_back("fault " + std::to_string(i) + " extra_bin " + std::to_string(faults[i].extra_bin) +
                        " coincides with harmonic " + std::to_string(h + 1));
    return out;
  }

  bool in_fault(std::int64_t w) const {
    for (const auto& f : faults)
      if (f.covers(w)) return true;
    return false;
  }
};

inline ScenarioConfig scenario_from_json(const Json& j) {
  using namespace lpm::detail;
  if (!j.is_object()) throw FormatError("scenario must be an object");
  ScenarioConfig c;
  c.name = value_or<std::string>(j, "name", c.name);
  c.seed = value_or<std::uint64_t>(j, "seed", c.seed);
  c.duration_windows = value_or<std::int64_t>(j, "duration_windows", c.duration_windows);
  c.window_size = value_or<std::size_t>(j, "window_size", c.window_size);
  c.base_freq_bin = value_or<std::int64_t>(j, "base_freq_bin", c.base_freq_bin);
  if (j.contains("harmonic_amps")) c.harmonic_amps = reals_at(j, "harmonic_amps");
  c.noise_sigma = value_or<double>(j, "noise_sigma", c.noise_sigma);
  if (j.contains("faults"))
    for (const auto& f : j.at("faults"))
      c.faults.push_back({int_at(f, "start_window"), int_at(f, "end_window"), int_at(f, "extra_bin"),
                          real_at(f, "extra_amp"), value_or<double>(f, "noise_boost", 0.0)});
  if (j.contains("drift") && !j.at("drift").is_null()) {
    const auto& d = j.at("drift");
    c.drift = Drift{int_at(d, "start_window"), value_or<std::int64_t>(d, "ramp_windows", 1), real_at(d, "gain")};
  }
  c.edge_id = value_or<std::string>(j, "edge_id", c.edge_id);
  c.equipment_id = value_or<std::string>(j, "equipment_id", c.equipment_id);
  c.warm_start_windows = value_or<std::size_t>(j, "warm_start_windows", c.warm_start_windows);
  c.warm_start_quantile = value_or<double>(j, "warm_start_quantile", c.warm_start_quantile);
  c.warm_start_factor = value_or<double>(j, "warm_start_factor", c.warm_start_factor);
  c.bands = value_or<std::size_t>(j, "bands", c.bands);
  c.band_spacing = value_or<std::string>(j, "band_spacing", c.band_spacing);
  c.k = value_or<std::size_t>(j, "k", c.k);
  c.capacity = value_or<std::size_t>(j, "capacity", c.capacity);
  c.rule_streak = value_or<std::size_t>(j, "rule_streak", c.rule_streak);
  c.retrain_at_window = value_or<std::int64_t>(j, "retrain_at_window", c.retrain_at_window);
  c.retrain_seed = value_or<std::uint64_t>(j, "retrain_seed", c.retrain_seed);
  c.holdout_windows = value_or<std::size_t>(j, "holdout_windows", c.holdout_windows);
  if (j.contains("catalog"))
    for (const auto& e : j.at("catalog"))
      c.catalog.push_back({string_at(e, "cause"), string_at(e, "part"), value_or<std::string>(e, "action", "INSPECT"),
                           int_at(e, "extra_bin"), value_or<double>(e, "extra_amp", 1.0)});
  if (j.contains("assertions")) {
    const auto& a = j.at("assertions");
    auto opt_real = [&](const char* k) -> std::optional<double> {
      if (!a.contains(k) || a.at(k).is_null()) return std::nullopt;
      return real_at(a, k);
    };
    auto opt_int = [&](const char* k) -> std::optional<std::int64_t> {
      if (!a.contains(k) || a.at(k).is_null()) return std::nullopt;
      return int_at(a, k);
    };
    c.assertions.min_recall = opt_real("min_recall");
    c.assertions.min_precision = opt_real("min_precision");
    c.assertions.max_latency_windows = opt_int("max_latency_windows");
    c.assertions.max_speed_ratio = opt_real("max_speed_ratio");
    c.assertions.max_orders = opt_int("max_orders");
    c.assertions.min_orders = opt_int("min_orders");
    c.assertions.fp_must_drop = value_or<bool>(a, "fp_must_drop", false);
    c.assertions.update_must_be_accepted = value_or<bool>(a, "update_must_be_accepted", false);
  }
  c.validate();
  return c;
}

inline ScenarioConfig load_scenario(const std::filesystem::path& file) { return scenario_from_json(read_canonical_file(file)); }

// Built-in demo: 2000 windows, four faults (1% duty), three catalog causes.
// Kept identical to configs/scenarios/demo.json.
inline const char* demo_scenario_text() {
  return R"json({
  "name": "demo",
  "seed": 20240601,
  "duration_windows": 2000,
  "window_size": 256,
  "base_freq_bin": 8,
  "harmonic_amps": [0.1, 0.05, 0.025],
  "noise_sigma": 0.2,
  "bands": 32,
  "band_spacing": "linear",
  "faults": [
    {"start_window": 300, "end_window": 304, "extra_bin": 45, "extra_amp": 1.0, "noise_boost": 0.2},
    {"start_window": 800, "end_window": 804, "extra_bin": 100, "extra_amp": 0.8, "noise_boost": 0.2},
    {"start_window": 1300, "end_window": 1304, "extra_bin": 45, "extra_amp": 1.2, "noise_boost": 0.3},
    {"start_window": 1750, "end_window": 1754, "extra_bin": 12, "extra_amp": 1.0, "noise_boost": 0.2}
  ],
  "warm_start_windows": 50,
  "warm_start_factor": 2.0,
  "retrain_at_window": 1000,
  "retrain_seed": 42,
  "catalog": [
    {"cause": "foreign_object", "part": "fan-unit-A", "action": "REPLACE", "extra_bin": 45, "extra_amp": 1.0},
    {"cause": "bearing_wear", "part": "bearing-6204", "action": "REPLACE", "extra_bin": 100, "extra_amp": 0.8},
    {"cause": "imbalance", "part": "rotor-hub", "action": "INSPECT", "extra_bin": 12, "extra_amp": 1.0}
  ],
  "assertions": {
    "min_recall": 0.9,
    "min_precision": 0.8,
    "max_latency_windows": 3,
    "max_speed_ratio": 0.05,
    "min_orders": 1
  }
})json";
}

inline ScenarioConfig demo_scenario() { return scenario_from_json(parse_canonical(demo_scenario_text())); }

// Deterministic window source. Windows are drawn in order; each window draws
// exactly window_size normals for the base noise and, inside a fault, another
// window_size for the fault noise, so the stream is a pure function of seed.
class StreamGenerator {
 public:
  explicit StreamGenerator(const ScenarioConfig& cfg, std::uint64_t seed_offset = 0)
      : cfg_(cfg), rng_(cfg.seed + seed_offset) {
    cfg_.validate();
    for (const auto& w : cfg_.warnings()) log::warn("sim", w);
  }

  // Window `w` with the fault/drift state of window `regime` (defaults to w).
  std::vector<double> window(std::int64_t w, std::optional<std::int64_t> regime = std::nullopt) {
    const auto r = regime.value_or(w);
    const auto n_total = cfg_.window_size;
    const double gain = cfg_.drift ? cfg_.drift->factor(r) : 1.0;
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<double> x(n_total);
    for (std::size_t n = 0; n < n_total; ++n) {
      double v = 0.0;
      for (std::size_t h = 0; h < cfg_.harmonic_amps.size(); ++h)
        v += gain * cfg_.harmonic_amps[h] * tone(cfg_.base_freq_bin * static_cast<std::int64_t>(h + 1), n, 0.0);
      x[n] = v + cfg_.noise_sigma * unit(rng_);
    }
    for (const auto& f : cfg_.faults) {
      if (!f.covers(r)) continue;
      for (std::size_t n = 0; n < n_total; ++n) x[n] += f.extra_amp * tone(f.extra_bin, n, 0.5) + f.noise_boost * unit(rng_);
    }
    return x;
  }

  static std::vector<double> noiseless(const ScenarioConfig& cfg, std::int64_t extra_bin, double extra_amp) {
    std::vector<double> x(cfg.window_size);
    for (std::size_t n = 0; n < x.size(); ++n) {
      double v = 0.0;
      for (std::size_t h = 0; h < cfg.harmonic_amps.size(); ++h)
        v += cfg.harmonic_amps[h] * tone_of(cfg, cfg.base_freq_bin * static_cast<std::int64_t>(h + 1), n, 0.0);
      if (extra_bin > 0) v += extra_amp * tone_of(cfg, extra_bin, n, 0.5);
      x[n] = v;
    }
    return x;
  }

 private:
  static double tone_of(const ScenarioConfig& cfg, std::int64_t bin, std::size_t n, double phase) {
    return std::sin(2.0 * std::numbers::pi * static_cast<double>(bin) * static_cast<double>(n) /
                        static_cast<double>(cfg.window_size) +
                    phase);
  }
  double tone(std::int64_t bin, std::size_t n, double phase) const { return tone_of(cfg_, bin, n, phase); }

  ScenarioConfig cfg_;
  std::mt19937_64 rng_;
};

// Whole stream as windows, window j starting at sample j*N.
inline std::vector<features::Window> generate_stream(const ScenarioConfig& cfg) {
  StreamGenerator gen(cfg);
  std::vector<features::Window> out;
  out.reserve(static_cast<std::size_t>(cfg.duration_windows));
  for (std::int64_t w = 0; w < cfg.duration_windows; ++w)
    out.push_back({w * static_cast<std::int64_t>(cfg.window_size), gen.window(w)});
  return out;
}

inline std::vector<std::uint8_t> fault_labels(const ScenarioConfig& cfg) {
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(cfg.duration_windows), 0);
  for (const auto& f : cfg.faults)
    for (auto w = f.start_window; w <= f.end_window; ++w) labels[static_cast<std::size_t>(w)] = 1;
  return labels;
}

inline features::FeatureConfig feature_config(const ScenarioConfig& cfg) {
  features::FeatureConfig fc;
  fc.window_size = cfg.window_size;
  fc.hop = cfg.window_size;
  fc.band_edges = cfg.band_spacing == "linear" ? features::linear_band_edges(cfg.window_size, cfg.bands)
                                                : features::log_band_edges(cfg.window_size, cfg.bands);
  return fc;
}

inline cloud::FaultCatalog build_catalog(const ScenarioConfig& cfg) {
  features::FeatureExtractor fx(feature_config(cfg));
  cloud::FaultCatalog cat;
  for (const auto& t : cfg.catalog)
    cat.entries.push_back({t.cause, t.part, cloud::action_from_name(t.action),
                           fx.extract(StreamGenerator::noiseless(cfg, t.extra_bin, t.extra_amp)).flat()});
  cat.validate();
  return cat;
}

}  // namespace lpm::sim
