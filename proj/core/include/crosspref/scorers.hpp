#pragma once

// Reward scorers: deterministic stand-ins for an external reward model.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crosspref/corpus.hpp"

namespace crosspref {

class RewardScorer {
 public:
  virtual ~RewardScorer() = default;
  virtual std::string_view name() const = 0;
  // Deterministic in (prompt, response); always finite.
  virtual double score(const Prompt& prompt, const Response& response) const = 0;
};

struct ScorerConfig {
  std::string name = "overlap";
  double noise_sigma = 0.0;
  double alpha = 0.1;  // length_bias only: reward per response token
  std::uint64_t seed = 0;
};

// Whitespace-separated words of a response, skipping reserved markers such
// as "<eos>".
std::vector<std::string_view> content_words(std::string_view text);
std::size_t content_length(std::string_view text);

// Fraction of the distinct reference-completion words that occur in the
// response. Throws DataError when the prompt has no reference completion.
double reference_overlap(const Prompt& prompt, const Response& response);

// overlap + N(0, noise_sigma), the noise keyed by (seed, prompt, response).
class OverlapScorer : public RewardScorer {
 public:
  OverlapScorer(double noise_sigma, std::uint64_t seed);
  std::string_view name() const override { return "overlap"; }
  double score(const Prompt& prompt, const Response& response) const override;

 protected:
  double noise(const Prompt& prompt, const Response& response) const;

 private:
  double noise_sigma_;
  std::uint64_t seed_;
};

// alpha * content length + overlap scorer. Rewards verbosity on purpose, to
// reproduce reward exploitation in online training.
class LengthBiasScorer : public OverlapScorer {
 public:
  LengthBiasScorer(double alpha, double noise_sigma, std::uint64_t seed);
  std::string_view name() const override { return "length_bias"; }
  double score(const Prompt& prompt, const Response& response) const override;

 private:
  double alpha_;
};

std::vector<std::string> available_scorers();

// Throws UsageError listing the available scorers for an unknown name.
std::unique_ptr<RewardScorer> make_scorer(const ScorerConfig& cfg);

// Fills every reward in place; parallel over sets.
void score_all(std::span<GenerationSet> gens, const RewardScorer& scorer);

}  // namespace crosspref
