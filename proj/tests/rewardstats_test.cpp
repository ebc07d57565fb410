#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "crosspref/error.hpp"
#include "crosspref/random.hpp"
#include "crosspref/rewardstats.hpp"
#include "helpers.hpp"

using namespace crosspref;
using testing_util::scored_set;

namespace {

// Brute-force nearest index to a target, ties to the lowest index.
std::size_t brute_nearest(const std::vector<double>& r, double target) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.size(); ++i) {
    if (std::abs(r[i] - target) < std::abs(r[best] - target)) best = i;
  }
  return best;
}

}  // namespace

TEST(Summarize, HandArithmetic) {
  const std::vector<double> a = {0, 2, 4, 6, 8};
  const auto s = summarize(a);
  EXPECT_DOUBLE_EQ(s.mean, 4.0);
  EXPECT_NEAR(s.std, std::sqrt(8.0), 1e-12);
  EXPECT_NEAR(s.std, 2.8284, 1e-4);
  EXPECT_EQ(s.min, 0.0);
  EXPECT_EQ(s.max, 8.0);
  EXPECT_EQ(s.quartiles, (std::array<double, 3>{2.0, 4.0, 6.0}));
  EXPECT_EQ(s.count, 5u);

  const std::vector<double> b = {3, 3, 3};
  EXPECT_EQ(summarize(b).mean, 3.0);
  EXPECT_EQ(summarize(b).std, 0.0);

  const std::vector<double> c = {1, 5, 9};
  EXPECT_DOUBLE_EQ(summarize(c).mean, 5.0);
  EXPECT_NEAR(summarize(c).std, std::sqrt(32.0 / 3.0), 1e-12);
  EXPECT_NEAR(summarize(c).std, 3.2660, 1e-4);
}

TEST(Summarize, InterpolatedQuartiles) {
  const std::vector<double> v = {1, 2, 3, 4};
  const auto s = summarize(v);
  EXPECT_DOUBLE_EQ(s.quartiles[0], 1.75);
  EXPECT_DOUBLE_EQ(s.quartiles[1], 2.5);
  EXPECT_DOUBLE_EQ(s.quartiles[2], 3.25);
}

TEST(Summarize, Errors) {
  const std::vector<double> one = {1.0};
  EXPECT_THROW(summarize(one), DataError);
  const std::vector<double> bad = {1.0, std::numeric_limits<double>::infinity()};
  EXPECT_THROW(summarize(bad), DataError);
}

TEST(Summarize, ZeroStdExactlyForEqualInputs) {
  const std::vector<double> v(17, 0.1);
  EXPECT_EQ(summarize(v).std, 0.0);
  const std::vector<double> w = {0.1, 0.1 + 1e-9};
  EXPECT_GT(summarize(w).std, 0.0);
}

TEST(SelectChosen, Examples) {
  EXPECT_EQ(select_chosen(std::vector<double>{0, 2, 4, 6, 8}), 4u);
  EXPECT_EQ(select_chosen(std::vector<double>{7, 7, 3}), 0u);
  EXPECT_EQ(select_chosen(std::vector<double>{-3, -1, -2}), 1u);
}

TEST(SelectChosen, MissingRewardNamesCandidate) {
  auto g = scored_set("p", "eng", {1, 2, 3});
  g.responses[1].reward.reset();
  EXPECT_THROW(select_chosen(g), DataError);
}

TEST(SweetSpot, Examples) {
  const std::vector<double> a = {0, 2, 4, 6, 8};
  EXPECT_NEAR(4.0 - 2.0 * summarize(a).std, -1.657, 1e-3);
  auto p = select_rejected_sweetspot(a);
  ASSERT_TRUE(p);
  EXPECT_EQ(p.index, 0u);

  auto d = select_rejected_sweetspot(std::vector<double>{10, 10, 10});
  EXPECT_FALSE(d);
  EXPECT_EQ(d.degenerate, SkipReason::kZeroVariance);

  const std::vector<double> c = {1, 5, 9};
  EXPECT_NEAR(5.0 - 2.0 * summarize(c).std, -1.532, 1e-3);
  p = select_rejected_sweetspot(c);
  ASSERT_TRUE(p);
  EXPECT_EQ(p.index, 0u);
}

TEST(Quantile, SameAsChosenIsDegenerate) {
  // q3 of [0, 10, 10] is 10, which lands on the chosen candidate.
  const auto p = select_rejected_quantile(std::vector<double>{0, 10, 10}, RejectedTarget::kQ3);
  EXPECT_FALSE(p);
  EXPECT_EQ(p.degenerate, SkipReason::kSameAsChosen);
}

TEST(Quantile, Examples) {
  const std::vector<double> a = {0, 2, 4, 6, 8};
  EXPECT_EQ(select_rejected_quantile(a, RejectedTarget::kMin).index, 0u);
  EXPECT_EQ(select_rejected_quantile(a, RejectedTarget::kQ2).index, 2u);
  EXPECT_EQ(select_rejected_quantile(a, RejectedTarget::kQ1).index, 1u);
  for (auto t : {RejectedTarget::kQ1, RejectedTarget::kQ2, RejectedTarget::kQ3,
                 RejectedTarget::kMuMinusSigma, RejectedTarget::kMuMinus2Sigma,
                 RejectedTarget::kMin}) {
    auto p = select_rejected_quantile(std::vector<double>{5, 5}, t);
    EXPECT_EQ(p.degenerate, SkipReason::kZeroVariance) << to_string(t);
  }
}

TEST(Quantile, ParseTargets) {
  EXPECT_EQ(parse_rejected_target("mu2sig"), RejectedTarget::kMuMinus2Sigma);
  EXPECT_EQ(parse_rejected_target("mu1sig"), RejectedTarget::kMuMinusSigma);
  EXPECT_EQ(parse_rejected_target("q3"), RejectedTarget::kQ3);
  EXPECT_EQ(parse_rejected_target(to_string(RejectedTarget::kMin)), RejectedTarget::kMin);
  EXPECT_THROW(parse_rejected_target("q4"), UsageError);
}

TEST(MaxR, Examples) {
  EXPECT_EQ(select_max_r(scored_set("p", "eng", {0.1, 0.9, 0.5})).text, "eng response 1");
  EXPECT_EQ(select_max_r(scored_set("p", "eng", {2, 2})).text, "eng response 0");
  EXPECT_EQ(select_max_r(scored_set("p", "eng", {-1, -2})).text, "eng response 0");
}

TEST(RegionSamples, MatchBruteForce) {
  const auto g = scored_set("p", "eng", {0, 2, 4, 6, 8});
  const auto rs = region_samples(g);
  // mean - std = 1.172 is 0.828 from 2 and 1.172 from 0.
  EXPECT_EQ(rs[0].index, 0u);
  EXPECT_EQ(rs[1].index, 1u);
  EXPECT_EQ(rs[2].index, 3u);
  EXPECT_EQ(rs[3].index, 4u);
  EXPECT_EQ(rs[0].region, Region::kMuMinus2Sigma);
  EXPECT_EQ(rs[3].region, Region::kMax);
  EXPECT_EQ(rs[1].response, g.responses[1]);

  const std::vector<double> r = {0, 2, 4, 6, 8};
  const auto s = summarize(r);
  EXPECT_EQ(rs[0].index, brute_nearest(r, s.mean - 2 * s.std));
  EXPECT_EQ(rs[1].index, brute_nearest(r, s.mean - s.std));
  EXPECT_EQ(rs[2].index, brute_nearest(r, s.mean + s.std));
}

TEST(RegionSamples, TwoCandidatesCoverBothEnds) {
  const auto rs = region_samples(scored_set("p", "eng", {1, 2}));
  EXPECT_EQ(rs[0].index, 0u);
  EXPECT_EQ(rs[1].index, 0u);
  EXPECT_EQ(rs[2].index, 1u);
  EXPECT_EQ(rs[3].index, 1u);
}

TEST(RegionSamples, ZeroVarianceThrows) {
  EXPECT_THROW(region_samples(scored_set("p", "eng", {5, 5})), DataError);
}

TEST(LanguageDistributions, SinglePoolAndSymmetry) {
  std::vector<GenerationSet> one = {scored_set("p", "dan", {0, 2, 4, 6, 8})};
  const auto d = per_language_distributions(one);
  ASSERT_EQ(d.by_lang.size(), 1u);
  EXPECT_EQ(d.by_lang.at("dan"), summarize(std::vector<double>{0, 2, 4, 6, 8}));
  EXPECT_EQ(d.max_mean_gap, 0.0);

  std::vector<GenerationSet> two = {scored_set("p", "dan", {1, 3, 8}),
                                    scored_set("p", "deu", {1, 3, 8})};
  const auto e = per_language_distributions(two);
  EXPECT_EQ(e.by_lang.at("dan"), e.by_lang.at("deu"));
  EXPECT_EQ(e.max_mean_gap, 0.0);

  const std::vector<std::string> need = {"dan", "fra"};
  EXPECT_THROW(per_language_distributions(two, need), DataError);
}

TEST(LanguageDistributions, ReportsSmallGapsUnderWideSpread) {
  // Per-language means 70.0, 70.5 and 70.9 with within-language spread 6.
  const std::vector<std::pair<std::string, double>> langs = {
      {"dan", 70.0}, {"deu", 70.5}, {"fra", 70.9}};
  std::vector<GenerationSet> gens;
  for (const auto& [lang, mean] : langs) {
    for (int i = 0; i < 50; ++i) {
      gens.push_back(scored_set("p" + std::to_string(i), lang, {mean - 6.0, mean + 6.0}));
    }
  }
  const auto d = per_language_distributions(gens);
  EXPECT_NEAR(d.max_mean_gap, 0.9, 1e-9);
  for (const auto& [lang, mean] : langs) {
    EXPECT_NEAR(d.by_lang.at(lang).mean, mean, 1e-9);
    EXPECT_NEAR(d.by_lang.at(lang).std, 6.0, 1e-9);
  }
}

TEST(SelectionProperties, OracleAffineAndPermutation) {
  auto rng = make_stream(11);
  std::uniform_int_distribution<int> kdist(2, 64);
  std::normal_distribution<double> nd(0.0, 3.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> r(static_cast<std::size_t>(kdist(rng)));
    for (auto& x : r) x = nd(rng);
    const auto s = summarize(r);
    const auto p = select_rejected_sweetspot(r);
    const auto want = brute_nearest(r, s.mean - 2 * s.std);
    EXPECT_EQ(p.index, want);
    EXPECT_EQ(select_rejected_quantile(r, RejectedTarget::kMuMinus2Sigma).index, p.index);
    if (p) {
      EXPECT_LE(r[p.index], r[select_chosen(r)]);
    }

    // Shift by c and scale by a > 0 keep the selection.
    auto shifted = r;
    for (auto& x : shifted) x = 2.5 * x + 7.0;
    EXPECT_EQ(select_rejected_sweetspot(shifted).index, p.index);
    EXPECT_EQ(select_chosen(shifted), select_chosen(r));

    // Reversal permutes the selected index.
    std::vector<double> rev(r.rbegin(), r.rend());
    EXPECT_EQ(select_rejected_sweetspot(rev).index, r.size() - 1 - p.index);
    EXPECT_EQ(select_chosen(rev), r.size() - 1 - select_chosen(r));
  }
}
