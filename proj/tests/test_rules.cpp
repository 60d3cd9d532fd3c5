#include <gtest/gtest.h>

#include "lpm/rules.hpp"

namespace rl = lpm::rules;

TEST(ExtractRule, ComponentwiseMinMax) {
  std::vector<rl::ScoredFeatures> s{{{1, 10}, 3.0}, {{2, 12}, 2.5}, {{3, 11}, 4.0}};
  auto r = rl::extract_rule(s, 3, 0.0);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->lower, (std::vector<double>{1, 10}));
  EXPECT_EQ(r->upper, (std::vector<double>{3, 12}));
  EXPECT_EQ(r->min_score, 2.5);
  EXPECT_EQ(r->support_count, 3);
  EXPECT_EQ(r->rule_id, rl::rule_id_for(r->lower, r->upper, r->min_score));
}

TEST(ExtractRule, MarginAndDegenerateRange) {
  std::vector<rl::ScoredFeatures> s{{{1, 5}, 3.0}, {{3, 5}, 3.0}, {{2, 5}, 3.0}};
  auto r = rl::extract_rule(s, 3, 0.5, 1e-3);
  ASSERT_TRUE(r);
  EXPECT_DOUBLE_EQ(r->lower[0], 0.0);
  EXPECT_DOUBLE_EQ(r->upper[0], 4.0);
  EXPECT_DOUBLE_EQ(r->lower[1], 5.0 - 0.5e-3);
  EXPECT_DOUBLE_EQ(r->upper[1], 5.0 + 0.5e-3);
}

TEST(StreakTracker, ResetsOnNormalWindow) {
  rl::StreakTracker t(3, 0.0);
  std::vector<double> f{1, 2};
  EXPECT_FALSE(t.observe(f, 3, true));
  EXPECT_FALSE(t.observe(f, 3, true));
  EXPECT_FALSE(t.observe(f, 1, false));
  EXPECT_FALSE(t.observe(f, 3, true));
  EXPECT_FALSE(t.observe(f, 3, true));
  EXPECT_TRUE(t.observe(f, 3, true));
  EXPECT_EQ(t.length(), 0u);
}

// Frozen with an independent Python FNV-1a over the same text form:
//   text = "l:1.000000,10.000000|u:3.000000,12.000000|s:2.500000"
TEST(RuleId, StableAcrossRuns) {
  std::vector<double> lo{1, 10}, hi{3, 12};
  EXPECT_EQ(rl::rule_id_for(lo, hi, 2.5), "r010cb009e050f32a");
  EXPECT_EQ(rl::rule_id_for(lo, hi, 2.5000000001), "r010cb009e050f32a");
  EXPECT_NE(rl::rule_id_for(lo, hi, 2.51), "r010cb009e050f32a");
  std::vector<double> negzero{-1e-9, 10};
  std::vector<double> zero{0, 10};
  EXPECT_EQ(rl::rule_id_for(negzero, hi, 1), rl::rule_id_for(zero, hi, 1));
}

TEST(Jaccard, VolumeArithmetic) {
  std::vector<double> lo{0, 0}, hi{1, 1}, hi2{1, 0.9};
  EXPECT_NEAR(rl::jaccard(lo, hi, lo, hi2), 0.9, 1e-12);
  EXPECT_NEAR(rl::jaccard(lo, hi, lo, hi), 1.0, 1e-12);
  std::vector<double> lo3{2, 2}, hi3{3, 3};
  EXPECT_EQ(rl::jaccard(lo, hi, lo3, hi3), 0.0);
  std::vector<double> lo4{0.5, 0}, hi4{1.5, 1};
  EXPECT_NEAR(rl::jaccard(lo, hi, lo4, hi4), 0.5 / 1.5, 1e-12);
}

TEST(Jaccard, HighDimensionalLargeBoxes) {
  std::vector<double> lo(9, 1e5), hi(9, 2e5), hi2(9, 1.9e5);
  EXPECT_NEAR(rl::jaccard(lo, hi, lo, hi2), std::pow(0.9, 9), 1e-9);
}

TEST(Match, BoundsAndScore) {
  rl::DetectionRule r{"x", {0, 0}, {1, 1}, 2.0, 3};
  EXPECT_TRUE(rl::matches(r, std::vector<double>{0.5, 1.0}, 2.0));
  EXPECT_FALSE(rl::matches(r, std::vector<double>{0.5, 1.0}, 1.99));
  EXPECT_FALSE(rl::matches(r, std::vector<double>{1.5, 0.5}, 3.0));
  EXPECT_FALSE(rl::matches(r, std::vector<double>{0.5}, 3.0));
}
