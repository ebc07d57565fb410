#include "crosspref/scorers.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "crosspref/error.hpp"
#include "crosspref/parallel.hpp"
#include "crosspref/random.hpp"

namespace crosspref {

std::vector<std::string_view> content_words(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto start = text.find_first_not_of(" \t\n", pos);
    if (start == std::string_view::npos) break;
    auto end = text.find_first_of(" \t\n", start);
    if (end == std::string_view::npos) end = text.size();
    auto word = text.substr(start, end - start);
    if (!(word.size() >= 2 && word.front() == '<' && word.back() == '>')) out.push_back(word);
    pos = end;
  }
  return out;
}

std::size_t content_length(std::string_view text) { return content_words(text).size(); }

double reference_overlap(const Prompt& prompt, const Response& response) {
  if (!prompt.reference_completion) {
    throw DataError("prompt '" + prompt.id + "' (" + prompt.lang +
                    ") has no reference completion to score against");
  }
  const auto ref_words = content_words(*prompt.reference_completion);
  std::set<std::string_view> ref(ref_words.begin(), ref_words.end());
  if (ref.empty()) return 0.0;
  const auto words = content_words(response.text);
  std::set<std::string_view> seen(words.begin(), words.end());
  std::size_t hit = 0;
  for (auto w : ref) hit += seen.contains(w);
  return static_cast<double>(hit) / static_cast<double>(ref.size());
}

OverlapScorer::OverlapScorer(double noise_sigma, std::uint64_t seed)
    : noise_sigma_(noise_sigma), seed_(seed) {
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw UsageError("scorer.noise_sigma must be finite and nonnegative");
  }
}

double OverlapScorer::noise(const Prompt& prompt, const Response& response) const {
  if (noise_sigma_ == 0.0) return 0.0;
  std::uint64_t key = fnv1a(prompt.id);
  key = fnv1a(prompt.lang, key ^ 0x9e3779b97f4a7c15ULL);
  key = fnv1a(response.text, key ^ 0x9e3779b97f4a7c15ULL);
  auto rng = make_stream(seed_, {key});
  std::normal_distribution<double> gauss(0.0, noise_sigma_);
  return gauss(rng);
}

double OverlapScorer::score(const Prompt& prompt, const Response& response) const {
  return reference_overlap(prompt, response) + noise(prompt, response);
}

LengthBiasScorer::LengthBiasScorer(double alpha, double noise_sigma, std::uint64_t seed)
    : OverlapScorer(noise_sigma, seed), alpha_(alpha) {
  if (!std::isfinite(alpha)) throw UsageError("scorer.alpha must be finite");
}

double LengthBiasScorer::score(const Prompt& prompt, const Response& response) const {
  return alpha_ * static_cast<double>(content_length(response.text)) +
         OverlapScorer::score(prompt, response);
}

std::vector<std::string> available_scorers() { return {"overlap", "length_bias"}; }

std::unique_ptr<RewardScorer> make_scorer(const ScorerConfig& cfg) {
  if (cfg.name == "overlap") return std::make_unique<OverlapScorer>(cfg.noise_sigma, cfg.seed);
  if (cfg.name == "length_bias") {
    return std::make_unique<LengthBiasScorer>(cfg.alpha, cfg.noise_sigma, cfg.seed);
  }
  std::string msg = "unknown scorer '" + cfg.name + "'; available:";
  for (const auto& n : available_scorers()) msg += " " + n;
  throw UsageError(msg);
}

void score_all(std::span<GenerationSet> gens, const RewardScorer& scorer) {
  parallel_for(gens.size(), [&](std::size_t i) {
    auto& g = gens[i];
    for (auto& r : g.responses) {
      const double v = scorer.score(g.prompt, r);
      if (!std::isfinite(v)) {
        throw NumericError("scorer '" + std::string(scorer.name()) +
                           "' returned a non-finite reward for prompt '" + g.prompt.id + "'");
      }
      r.reward = v;
    }
  });
}

}  // namespace crosspref
