#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "lpm/features.hpp"
#include "oracles/naive_dft.hpp"

namespace ft = lpm::features;

namespace {

std::vector<ft::SensorSample> ramp(int n) {
  std::vector<ft::SensorSample> s;
  for (int i = 0; i < n; ++i) s.push_back({i, static_cast<double>(i)});
  return s;
}

std::vector<double> random_window(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g(0.3, 2.0);
  std::vector<double> x(n);
  for (auto& v : x) v = g(rng);
  return x;
}

}  // namespace

TEST(Windowing, NonOverlapping) {
  auto w = ft::window_stream(ramp(10), 4, 4);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].start_index, 0);
  EXPECT_EQ(w[1].start_index, 4);
  EXPECT_EQ(w[1].samples, (std::vector<double>{4, 5, 6, 7}));
}

TEST(Windowing, Overlapping) {
  auto w = ft::window_stream(ramp(10), 4, 2);
  ASSERT_EQ(w.size(), 4u);
  EXPECT_EQ(w[3].start_index, 6);
  EXPECT_EQ(w[3].samples, (std::vector<double>{6, 7, 8, 9}));
}

TEST(Windowing, PartialDiscarded) { EXPECT_TRUE(ft::window_stream(ramp(3), 4, 4).empty()); }

TEST(Windowing, NonMonotoneIsStreamError) {
  std::vector<ft::SensorSample> s{{0, 1.0}, {1, 1.0}, {1, 2.0}};
  EXPECT_THROW(ft::window_stream(s, 2, 1), ft::StreamError);
}

TEST(Windowing, BadConfig) {
  EXPECT_THROW(ft::Windower(1, 1), ft::ConfigError);
  EXPECT_THROW(ft::Windower(4, 0), ft::ConfigError);
  EXPECT_THROW(ft::Windower(4, 5), ft::ConfigError);
}

TEST(Dft, ConstantWindowHasNoEnergy) {
  ft::Window w{0, std::vector<double>(8, 3.25)};
  for (double m : ft::dft_magnitude(w)) EXPECT_EQ(m, 0.0);
}

TEST(Dft, BinAlignedSine) {
  ft::Window w{0, {}};
  for (int n = 0; n < 8; ++n) w.samples.push_back(std::sin(2 * std::numbers::pi * 2 * n / 8));
  auto mag = ft::dft_magnitude(w);
  ASSERT_EQ(mag.size(), 5u);
  for (std::size_t m = 0; m < mag.size(); ++m)
    EXPECT_NEAR(mag[m], m == 2 ? 4.0 : 0.0, 1e-9) << "bin " << m;
}

TEST(Dft, MatchesNaiveOracle) {
  std::mt19937_64 rng(2024);
  ft::Dft dft(64);
  for (int i = 0; i < 100; ++i) {
    auto x = random_window(rng, 64);
    auto got = dft.magnitude(x);
    auto want = oracle::naive_dft_magnitude(x);
    double scale = *std::max_element(want.begin(), want.end());
    for (std::size_t m = 0; m < got.size(); ++m)
      ASSERT_LE(std::abs(got[m] - want[m]), 1e-9 * scale) << "window " << i << " bin " << m;
  }
}

TEST(Bands, DirectSumOfSquares) {
  std::vector<double> spectrum{0, 4, 0, 0, 0};
  std::vector<std::size_t> edges{0, 2, 5};
  EXPECT_EQ(ft::band_energies(spectrum, edges), (std::vector<double>{16.0, 0.0}));
  EXPECT_EQ(ft::band_energies(std::vector<double>(5, 0.0), edges), (std::vector<double>{0.0, 0.0}));
}

TEST(Bands, MalformedEdges) {
  std::vector<double> spectrum(5, 1.0);
  EXPECT_THROW(ft::band_energies(spectrum, std::vector<std::size_t>{1, 5}), ft::ConfigError);
  EXPECT_THROW(ft::band_energies(spectrum, std::vector<std::size_t>{0, 4}), ft::ConfigError);
  EXPECT_THROW(ft::band_energies(spectrum, std::vector<std::size_t>{0, 3, 3, 5}), ft::ConfigError);
}

TEST(Bands, DefaultLogEdges) {
  EXPECT_EQ(ft::log_band_edges(256, 8), (std::vector<std::size_t>{0, 2, 3, 6, 11, 21, 38, 70, 129}));
  for (std::size_t n : {8u, 16u, 64u, 1024u})
    for (std::size_t b = 1; b + 1 <= n / 2 + 1; b *= 2)
      EXPECT_NO_THROW(ft::check_band_edges(ft::log_band_edges(n, b), n / 2 + 1));
}

// Full-spectrum Parseval: |X0|^2 + 2*sum_{0<m<N/2}|Xm|^2 + |X_{N/2}|^2 = N * sum (x-mean)^2.
// With X0 = 0 after mean removal, 2*sum(bands) - |X_{N/2}|^2 is the weighted form.
TEST(Bands, Parseval) {
  std::mt19937_64 rng(77);
  ft::FeatureExtractor fx(ft::FeatureConfig{});
  ft::Dft dft(256);
  for (int i = 0; i < 100; ++i) {
    auto x = random_window(rng, 256);
    auto fv = fx.extract(x);
    auto mag = dft.magnitude(x);
    double bands = 0;
    for (double b : fv.band_energies) bands += b;
    const double nyquist = mag.back() * mag.back();
    double mean = ft::mean_of(x), ss = 0;
    for (double v : x) ss += (v - mean) * (v - mean);
    EXPECT_NEAR((2 * bands - nyquist) / (256.0 * ss), 1.0, 1e-6);
    EXPECT_NEAR(fv.rms, std::sqrt(ss / 256.0), 1e-12);
  }
}

TEST(Features, ScaleAndShiftBehaviour) {
  std::mt19937_64 rng(5);
  ft::FeatureExtractor fx(ft::FeatureConfig{});
  for (int i = 0; i < 20; ++i) {
    auto x = random_window(rng, 256);
    auto base = fx.extract(x);
    const double c = 3.7;
    auto scaled = x;
    for (auto& v : scaled) v *= c;
    auto fs = fx.extract(scaled);
    EXPECT_NEAR(fs.rms, c * base.rms, 1e-9 * c * base.rms);
    for (std::size_t b = 0; b < base.band_energies.size(); ++b)
      EXPECT_NEAR(fs.band_energies[b], c * c * base.band_energies[b], 1e-9 * c * c * base.band_energies[b] + 1e-12);

    auto shifted = x;
    for (auto& v : shifted) v += 12.5;
    auto fsh = fx.extract(shifted);
    EXPECT_NEAR(fsh.rms, base.rms, 1e-9);
    for (std::size_t b = 0; b < base.band_energies.size(); ++b)
      EXPECT_NEAR(fsh.band_energies[b], base.band_energies[b], 1e-9);
  }
}

TEST(Features, Deterministic) {
  std::mt19937_64 rng(8);
  auto x = random_window(rng, 256);
  ft::FeatureExtractor a(ft::FeatureConfig{}), b(ft::FeatureConfig{});
  EXPECT_EQ(a.extract(x), b.extract(x));
  EXPECT_EQ(a.extract(x).flat().size(), 9u);
}
