#include "crosspref/rewardstats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crosspref/error.hpp"

namespace crosspref {

double interpolated_quantile(std::span<const double> sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

RewardSummary summarize(std::span<const double> rewards) {
  if (rewards.size() < 2) throw DataError("reward summary needs at least 2 rewards");
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (!std::isfinite(rewards[i])) {
      throw DataError("non-finite reward at index " + std::to_string(i));
    }
  }
  std::vector<double> sorted(rewards.begin(), rewards.end());
  std::sort(sorted.begin(), sorted.end());

  RewardSummary s;
  s.count = rewards.size();
  s.min = sorted.front();
  s.max = sorted.back();
  if (s.min == s.max) {
    s.mean = s.min;
    s.std = 0.0;
    s.quartiles = {s.min, s.min, s.min};
    return s;
  }
  const double k = static_cast<double>(rewards.size());
  s.mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / k;
  double ss = 0.0;
  for (double r : rewards) ss += (r - s.mean) * (r - s.mean);
  s.std = std::sqrt(ss / k);
  s.quartiles = {interpolated_quantile(sorted, 0.25), interpolated_quantile(sorted, 0.5),
                 interpolated_quantile(sorted, 0.75)};
  return s;
}

std::string_view to_string(RejectedTarget t) {
  switch (t) {
    case RejectedTarget::kQ1: return "q1";
    case RejectedTarget::kQ2: return "q2";
    case RejectedTarget::kQ3: return "q3";
    case RejectedTarget::kMuMinusSigma: return "mu_minus_sigma";
    case RejectedTarget::kMuMinus2Sigma: return "mu_minus_2sigma";
    case RejectedTarget::kMin: return "min";
  }
  return "?";
}

RejectedTarget parse_rejected_target(std::string_view s) {
  if (s == "q1") return RejectedTarget::kQ1;
  if (s == "q2") return RejectedTarget::kQ2;
  if (s == "q3") return RejectedTarget::kQ3;
  if (s == "mu_minus_sigma" || s == "mu1sig") return RejectedTarget::kMuMinusSigma;
  if (s == "mu_minus_2sigma" || s == "mu2sig") return RejectedTarget::kMuMinus2Sigma;
  if (s == "min") return RejectedTarget::kMin;
  throw UsageError("unknown rejected target '" + std::string(s) +
                   "' (expected one of: mu2sig mu1sig q1 q2 q3 min)");
}

double target_value(const RewardSummary& s, RejectedTarget t) {
  switch (t) {
    case RejectedTarget::kQ1: return s.quartiles[0];
    case RejectedTarget::kQ2: return s.quartiles[1];
    case RejectedTarget::kQ3: return s.quartiles[2];
    case RejectedTarget::kMuMinusSigma: return s.mean - s.std;
    case RejectedTarget::kMuMinus2Sigma: return s.mean - 2.0 * s.std;
    case RejectedTarget::kMin: return s.min;
  }
  return s.mean;
}

std::string_view to_string(SkipReason r) {
  switch (r) {
    case SkipReason::kZeroVariance: return "zero_variance";
    case SkipReason::kSameAsChosen: return "same_as_chosen";
    case SkipReason::kZeroMargin: return "zero_margin";
  }
  return "?";
}

std::vector<double> rewards_of(std::span<const Response> responses) {
  std::vector<double> out;
  out.reserve(responses.size());
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (!responses[i].reward) {
      throw DataError("candidate " + std::to_string(i) + " of prompt '" +
                      responses[i].prompt_id + "' (" + responses[i].lang + ") is unscored");
    }
    out.push_back(*responses[i].reward);
  }
  return out;
}

std::vector<double> rewards_of(const GenerationSet& gen) { return rewards_of(gen.responses); }

std::size_t nearest_index(std::span<const double> rewards, double target) {
  std::size_t best = 0;
  double best_dist = std::abs(rewards[0] - target);
  for (std::size_t i = 1; i < rewards.size(); ++i) {
    const double d = std::abs(rewards[i] - target);
    if (d < best_dist) {
      best = i;
      best_dist = d;
    }
  }
  return best;
}

std::size_t select_chosen(std::span<const double> rewards) {
  if (rewards.empty()) throw DataError("cannot select from an empty candidate set");
  return static_cast<std::size_t>(std::max_element(rewards.begin(), rewards.end()) -
                                  rewards.begin());
}

std::size_t select_chosen(const GenerationSet& gen) { return select_chosen(rewards_of(gen)); }

RejectedPick select_rejected_quantile(std::span<const double> rewards, RejectedTarget target) {
  const auto s = summarize(rewards);
  if (s.std == 0.0) return {0, SkipReason::kZeroVariance};
  const auto idx = nearest_index(rewards, target_value(s, target));
  if (idx == select_chosen(rewards)) return {idx, SkipReason::kSameAsChosen};
  return {idx, std::nullopt};
}

RejectedPick select_rejected_quantile(const GenerationSet& gen, RejectedTarget target) {
  return select_rejected_quantile(rewards_of(gen), target);
}

RejectedPick select_rejected_sweetspot(std::span<const double> rewards) {
  return select_rejected_quantile(rewards, RejectedTarget::kMuMinus2Sigma);
}

RejectedPick select_rejected_sweetspot(const GenerationSet& gen) {
  return select_rejected_sweetspot(rewards_of(gen));
}

const Response& select_max_r(const GenerationSet& gen) {
  return gen.responses[select_chosen(gen)];
}

std::string_view to_string(Region r) {
  switch (r) {
    case Region::kMuMinus2Sigma: return "mu_minus_2sigma";
    case Region::kMuMinusSigma: return "mu_minus_sigma";
    case Region::kMuPlusSigma: return "mu_plus_sigma";
    case Region::kMax: return "max";
  }
  return "?";
}

std::array<RegionSample, 4> region_samples(const GenerationSet& gen) {
  const auto rewards = rewards_of(gen);
  const auto s = summarize(rewards);
  if (s.std == 0.0) {
    throw DataError("prompt '" + gen.prompt.id + "' has zero reward variance; no regions");
  }
  const std::size_t idx[4] = {nearest_index(rewards, s.mean - 2.0 * s.std),
                              nearest_index(rewards, s.mean - s.std),
                              nearest_index(rewards, s.mean + s.std), select_chosen(rewards)};
  constexpr Region kRegions[4] = {Region::kMuMinus2Sigma, Region::kMuMinusSigma,
                                  Region::kMuPlusSigma, Region::kMax};
  std::array<RegionSample, 4> out;
  for (int i = 0; i < 4; ++i) out[i] = {kRegions[i], idx[i], gen.responses[idx[i]]};
  return out;
}

LanguageDistributions per_language_distributions(std::span<const GenerationSet> gens,
                                                 std::span<const std::string> required) {
  std::map<std::string, std::vector<double>> pools;
  for (const auto& g : gens) {
    for (const auto& r : g.responses) {
      if (!r.reward) {
        throw DataError("prompt '" + g.prompt.id + "' has unscored candidates");
      }
      pools[r.lang].push_back(*r.reward);
    }
  }
  for (const auto& lang : required) {
    if (!pools.contains(lang)) throw DataError("no rewards for language '" + lang + "'");
  }
  LanguageDistributions out;
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& [lang, pool] : pools) {
    auto s = summarize(pool);
    lo = first ? s.mean : std::min(lo, s.mean);
    hi = first ? s.mean : std::max(hi, s.mean);
    first = false;
    out.by_lang.emplace(lang, s);
  }
  out.max_mean_gap = hi - lo;
  return out;
}

}  // namespace crosspref
