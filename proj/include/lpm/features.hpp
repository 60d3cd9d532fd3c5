#pragma once

// Windowing and spectral band-energy features for a scalar sensor stream.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lpm::features {

class StreamError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SensorSample {
  std::int64_t t = 0;
  double value = 0.0;
};

struct Window {
  std::int64_t start_index = 0;
  std::vector<double> samples;
};

struct FeatureVector {
  std::vector<double> band_energies;
  double rms = 0.0;

  // Bands followed by rms; this is the point LOF scores.
  std::vector<double> flat() const {
    std::vector<double> v = band_energies;
    v.push_back(rms);
    return v;
  }
  bool operator==(const FeatureVector&) const = default;
};

// Incremental windowing: window j covers samples [j*hop, j*hop + size).
class Windower {
 public:
  Windower(std::size_t size, std::size_t hop) : size_(size), hop_(hop) {
    if (size < 2) throw ConfigError("window_size must be >= 2");
    if (hop < 1 || hop > size) throw ConfigError("hop must satisfy 1 <= hop <= window_size");
    buffer_.reserve(size);
  }

  // Feeds one sample; returns true and fills `out` when a window completes.
  bool push(const SensorSample& s, Window& out) {
    if (have_last_ && s.t <= last_t_)
      throw StreamError("sample index not strictly increasing at t=" + std::to_string(s.t));
    have_last_ = true;
    last_t_ = s.t;
    buffer_.push_back(s.value);
    if (buffer_.size() < size_) return false;
    out.start_index = static_cast<std::int64_t>(next_start_);
    out.samples = buffer_;
    next_start_ += hop_;
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(hop_));
    return true;
  }

  std::size_t size() const noexcept { return size_; }
  std::size_t hop() const noexcept { return hop_; }

 private:
  std::size_t size_;
  std::size_t hop_;
  std::vector<double> buffer_;
  std::size_t next_start_ = 0;
  bool have_last_ = false;
  std::int64_t last_t_ = 0;
};

inline std::vector<Window> window_stream(std::span<const SensorSample> samples, std::size_t size,
                                         std::size_t hop) {
  Windower w(size, hop);
  std::vector<Window> out;
  Window win;
  for (const auto& s : samples)
    if (w.push(s, win)) out.push_back(win);
  return out;
}

inline double mean_of(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

// Cached twiddle factors for a fixed window size.
class Dft {
 public:
  explicit Dft(std::size_t n) : n_(n), cos_(n), sin_(n) {
    if (n < 2 || n % 2 != 0) throw ConfigError("DFT size must be even and >= 2");
    for (std::size_t i = 0; i < n; ++i) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
      cos_[i] = std::cos(a);
      sin_[i] = std::sin(a);
    }
  }

  // |X_m| for m = 0..n/2 of the mean-removed window.
  std::vector<double> magnitude(std::span<const double> x) const {
    if (x.size() != n_) throw ConfigError("window length does not match DFT size");
    const double mean = mean_of(x);
    std::vector<double> centered(x.begin(), x.end());
    for (double& v : centered) v -= mean;
    std::vector<double> mag(n_ / 2 + 1);
    for (std::size_t m = 0; m <= n_ / 2; ++m) {
      double re = 0.0, im = 0.0;
      std::size_t idx = 0;
      for (std::size_t k = 0; k < n_; ++k) {
        re += centered[k] * cos_[idx];
        im -= centered[k] * sin_[idx];
        idx += m;
        if (idx >= n_) idx -= n_;
      }
      mag[m] = std::hypot(re, im);
    }
    return mag;
  }

  std::size_t size() const noexcept { return n_; }

 private:
  std::size_t n_;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

inline std::vector<double> dft_magnitude(const Window& w) {
  return Dft(w.samples.size()).magnitude(w.samples);
}

inline void check_band_edges(std::span<const std::size_t> edges, std::size_t bins) {
  if (edges.size() < 2) throw ConfigError("band_edges needs at least two entries");
  if (edges.front() != 0) throw ConfigError("band_edges must start at 0");
  if (edges.back() != bins)
    throw ConfigError("band_edges must end at N/2+1 = " + std::to_string(bins));
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (edges[i] <= edges[i - 1]) throw ConfigError("band_edges must be strictly increasing");
}

// Sum of squared magnitudes per band [edges[b], edges[b+1]).
inline std::vector<double> band_energies(std::span<const double> spectrum,
                                         std::span<const std::size_t> edges) {
  check_band_edges(edges, spectrum.size());
  std::vector<double> bands(edges.size() - 1, 0.0);
  for (std::size_t b = 0; b + 1 < edges.size(); ++b)
    for (std::size_t m = edges[b]; m < edges[b + 1]; ++m) bands[b] += spectrum[m] * spectrum[m];
  return bands;
}

inline double centered_rms(std::span<const double> x) {
  const double mean = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return x.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(x.size()));
}

// `bands` logarithmically spaced edges over bins 0..N/2. The first band is
// [0, 2) so the removed DC bin shares it with the lowest real frequency.
inline std::vector<std::size_t> log_band_edges(std::size_t window_size, std::size_t bands) {
  const std::size_t bins = window_size / 2 + 1;
  if (bands < 1 || bands + 1 > bins) throw ConfigError("band count incompatible with window size");
  std::vector<std::size_t> edges{0};
  const double lo = 1.0, hi = static_cast<double>(bins);
  for (std::size_t b = 1; b < bands; ++b) {
    const double f = lo * std::pow(hi / lo, static_cast<double>(b) / static_cast<double>(bands));
    auto e = static_cast<std::size_t>(std::lround(f));
    // Keep room for the remaining edges.
    e = std::max(e, edges.back() + 1);
    e = std::min(e, bins - (bands - b));
    edges.push_back(e);
  }
  edges.push_back(bins);
  return edges;
}

// `bands` equal-width bands over bins 0..N/2 (widths differ by at most one).
inline std::vector<std::size_t> linear_band_edges(std::size_t window_size, std::size_t bands) {
  const std::size_t bins = window_size / 2 + 1;
  if (bands < 1 || bands > bins) throw ConfigError("band count incompatible with window size");
  std::vector<std::size_t> edges;
  for (std::size_t b = 0; b <= bands; ++b) edges.push_back(b * bins / bands);
  return edges;
}

struct FeatureConfig {
  std::size_t window_size = 256;
  std::size_t hop = 256;
  std::vector<std::size_t> band_edges = log_band_edges(256, 8);

  std::size_t band_count() const noexcept { return band_edges.size() - 1; }
  std::size_t dimension() const noexcept { return band_count() + 1; }

  void validate() const {
    if (window_size < 2 || window_size % 2 != 0) throw ConfigError("window_size must be even and >= 2");
    if (hop < 1 || hop > window_size) throw ConfigError("hop must satisfy 1 <= hop <= window_size");
    check_band_edges(band_edges, window_size / 2 + 1);
  }
};

class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureConfig cfg)
      : cfg_((cfg.validate(), std::move(cfg))), dft_(cfg_.window_size) {}

  FeatureVector extract(std::span<const double> window) const {
    auto spectrum = dft_.magnitude(window);
    return FeatureVector{band_energies(spectrum, cfg_.band_edges), centered_rms(window)};
  }

  const FeatureConfig& config() const noexcept { return cfg_; }

 private:
  FeatureConfig cfg_;
  Dft dft_;
};

}  // namespace lpm::features
