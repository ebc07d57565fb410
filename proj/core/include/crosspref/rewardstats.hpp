#pragma once

// Per-prompt reward statistics and the reward-based selection rules:
// argmax chosen, nearest-to-(mean - 2 std) rejected, quantile targets,
// best-of-K, region samples and per-language distributions.

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crosspref/corpus.hpp"

namespace crosspref {

struct RewardSummary {
  double mean = 0.0;
  double std = 0.0;  // population convention (divide by K)
  double min = 0.0;
  double max = 0.0;
  std::array<double, 3> quartiles{};  // linear interpolation between order statistics
  std::size_t count = 0;

  bool operator==(const RewardSummary&) const = default;
};

// Throws DataError for fewer than two values or a non-finite value.
// std is exactly 0 when all values are equal.
RewardSummary summarize(std::span<const double> rewards);

// Quantile at p in [0, 1] by linear interpolation on the sorted values
// (position p * (K - 1)).
double interpolated_quantile(std::span<const double> sorted, double p);

enum class RejectedTarget { kQ1, kQ2, kQ3, kMuMinusSigma, kMuMinus2Sigma, kMin };

std::string_view to_string(RejectedTarget t);
// Accepts the long tags (q1, mu_minus_2sigma, ...) and the CLI short forms
// mu2sig / mu1sig.
RejectedTarget parse_rejected_target(std::string_view s);

double target_value(const RewardSummary& s, RejectedTarget t);

enum class SkipReason { kZeroVariance, kSameAsChosen, kZeroMargin };
std::string_view to_string(SkipReason r);

// Margins below this are treated as zero and the prompt is skipped.
inline constexpr double kMinMargin = 1e-9;

struct RejectedPick {
  std::size_t index = 0;
  std::optional<SkipReason> degenerate;

  explicit operator bool() const { return !degenerate.has_value(); }
};

// Rewards of a fully scored set; throws DataError naming the first
// unscored candidate.
std::vector<double> rewards_of(const GenerationSet& gen);
std::vector<double> rewards_of(std::span<const Response> responses);

// argmin |r - target|, ties to the lowest index.
std::size_t nearest_index(std::span<const double> rewards, double target);

// argmax, ties to the lowest index.
std::size_t select_chosen(std::span<const double> rewards);
std::size_t select_chosen(const GenerationSet& gen);

RejectedPick select_rejected_sweetspot(std::span<const double> rewards);
RejectedPick select_rejected_sweetspot(const GenerationSet& gen);

RejectedPick select_rejected_quantile(std::span<const double> rewards, RejectedTarget target);
RejectedPick select_rejected_quantile(const GenerationSet& gen, RejectedTarget target);

const Response& select_max_r(const GenerationSet& gen);

enum class Region { kMuMinus2Sigma, kMuMinusSigma, kMuPlusSigma, kMax };
std::string_view to_string(Region r);

struct RegionSample {
  Region region = Region::kMax;
  std::size_t index = 0;
  Response response;
};

// Nearest candidates to mean-2std, mean-std, mean+std, and the argmax.
// Throws DataError when std == 0.
std::array<RegionSample, 4> region_samples(const GenerationSet& gen);

struct LanguageDistributions {
  std::map<std::string, RewardSummary> by_lang;
  double max_mean_gap = 0.0;  // largest pairwise difference of language means
};

// Pools rewards by response language. Every language in `required` must
// have a pool, otherwise DataError.
LanguageDistributions per_language_distributions(std::span<const GenerationSet> gens,
                                                 std::span<const std::string> required = {});

}  // namespace crosspref
