#pragma once

// Training-set construction: paired (sweet-spot) preference data, best-of-K
// SFT, plain reference SFT, prompt-language variants and provenance tags.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "crosspref/corpus.hpp"
#include "crosspref/rewardstats.hpp"

namespace crosspref {

struct BuildSpec {
  Strategy strategy = Strategy::kPaired;
  Regime regime = Regime::kMultilingual;
  // Language filter; required (and only used) in the monolingual regime.
  std::string lang;
  RejectedTarget rejected_target = RejectedTarget::kMuMinus2Sigma;
  PromptLangVariant prompt_lang_variant = PromptLangVariant::kChosen;
  std::uint64_t seed = 0;
  std::string policy_id;

  // Throws UsageError for an inconsistent spec.
  void validate() const;
};

// Accounting for one build. Merging fragments is commutative, so totals do
// not depend on how work was split.
struct BuildReport {
  std::size_t inputs = 0;  // candidate pools considered
  std::size_t pairs_emitted = 0;
  std::map<std::string, std::size_t> skipped_degenerate;  // reason -> count
  std::map<std::string, std::size_t> chosen_lang_histogram;
  std::map<std::string, std::size_t> rejected_lang_histogram;
  bool off_policy = false;
  std::map<std::string, std::size_t> generator_counts;

  std::size_t skipped_total() const;
  void merge(const BuildReport& other);
  bool operator==(const BuildReport&) const = default;
};

struct PairedBuild {
  std::vector<PreferencePair> pairs;
  BuildReport report;
};

// Monolingual: one candidate pool per set of spec.lang. Multilingual: the
// sets sharing a prompt id are pooled across languages (sorted by language
// tag) before selection, so chosen and rejected may differ in language; the
// pair's prompt is the one in the chosen response's language. Degenerate
// pools are skipped and counted. Output is ordered by prompt id.
PairedBuild build_paired(std::span<const GenerationSet> gens, const BuildSpec& spec);

// Rewrites each pair's prompt to the parallel prompt in the chosen language,
// the rejected language, or a seeded uniform draw over that id's languages.
// Responses are left untouched.
std::vector<PreferencePair> apply_prompt_lang_variant(std::vector<PreferencePair> pairs,
                                                      const ParallelPrompts& parallel,
                                                      PromptLangVariant variant,
                                                      std::uint64_t seed);

// Prompts of the generation sets keyed by id then language.
ParallelPrompts parallel_prompts_of(std::span<const GenerationSet> gens);

// One best-of-K record per pool (same pooling rule as build_paired).
std::vector<SftRecord> build_max_r_sft(std::span<const GenerationSet> gens,
                                       const BuildSpec& spec);

// kInLang keeps prompts of `lang`; kAllLang keeps all of them. Every kept
// prompt must carry a reference completion.
std::vector<SftRecord> build_sft_plain(std::span<const Prompt> prompts, Strategy strategy,
                                       std::string_view lang = {});

// off_policy is set when any response came from a generator other than
// policy_id; generator_counts tallies responses per generator.
BuildReport tag_off_policy(std::span<const GenerationSet> gens, std::string_view policy_id);

std::string report_to_json(const BuildReport& report);

}  // namespace crosspref
