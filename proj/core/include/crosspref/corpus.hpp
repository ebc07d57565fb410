#pragma once

// On-disk data model: prompts, scored generations, preference pairs, SFT
// records and judge verdicts, plus stratified sampling and cross-language
// prompt alignment.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace crosspref {

using TokenId = std::int32_t;

enum class Strategy { kPaired, kMaxR, kInLang, kAllLang };
enum class PromptLangVariant { kChosen, kMixed, kRejected };
enum class Regime { kMonolingual, kMultilingual };
enum class Outcome { kAWins, kBWins, kTie };

std::string_view to_string(Strategy s);
std::string_view to_string(PromptLangVariant v);
std::string_view to_string(Regime r);
std::string_view to_string(Outcome o);

// Parsers accept the serialized tags; the regime parser also accepts the
// short CLI spellings "mono" and "multi". Unknown names throw UsageError.
Strategy parse_strategy(std::string_view s);
PromptLangVariant parse_prompt_lang_variant(std::string_view s);
Regime parse_regime(std::string_view s);
Outcome parse_outcome(std::string_view s);

// Judge categories accepted in verdict files.
inline constexpr std::string_view kVerdictCategories[] = {"coding", "creative_writing", "math",
                                                         "other"};

struct Prompt {
  std::string id;
  std::string lang;
  std::string text;
  std::string domain;
  std::optional<std::string> reference_completion;

  bool operator==(const Prompt&) const = default;
};

struct Response {
  std::string prompt_id;
  std::string lang;
  std::string text;
  std::vector<TokenId> token_ids;
  std::optional<double> reward;
  std::string generator_id;

  bool operator==(const Response&) const = default;
};

// One prompt and its K candidates. K >= 2 and every response shares the
// prompt id.
struct GenerationSet {
  Prompt prompt;
  std::vector<Response> responses;

  bool operator==(const GenerationSet&) const = default;
};

struct PreferencePair {
  Prompt prompt;
  Response chosen;
  Response rejected;
  double margin = 0.0;
  Strategy strategy = Strategy::kPaired;
  PromptLangVariant prompt_lang_variant = PromptLangVariant::kChosen;
  Regime regime = Regime::kMonolingual;

  bool operator==(const PreferencePair&) const = default;
};

// Supervised target. token_ids may be empty, in which case the completion
// text is tokenized at training time.
struct SftRecord {
  Prompt prompt;
  std::string completion;
  std::vector<TokenId> token_ids;
  std::string source;  // "reference" or "max_r"

  bool operator==(const SftRecord&) const = default;
};

struct VerdictRecord {
  std::string prompt_id;
  std::string lang;
  std::string category;
  std::string model_a;
  std::string model_b;
  Outcome outcome = Outcome::kTie;
  std::int64_t len_a = 0;
  std::int64_t len_b = 0;

  bool operator==(const VerdictRecord&) const = default;
};

// Whole-file JSONL loading. Any malformed line rejects the file with a
// DataError naming the line number and the offending field; record-level
// invariant violations name the record index. An empty file is an empty list.
template <class Record>
std::vector<Record> load_jsonl(const std::filesystem::path& path);

// Parses a JSONL document held in memory; `source` labels error messages.
template <class Record>
std::vector<Record> parse_jsonl(std::string_view text, std::string_view source = "<memory>");

template <class Record>
std::string to_jsonl(std::span<const Record> records);

template <class Record>
void store_jsonl(const std::filesystem::path& path, std::span<const Record> records);

extern template std::vector<Prompt> load_jsonl<Prompt>(const std::filesystem::path&);
extern template std::vector<Response> load_jsonl<Response>(const std::filesystem::path&);
extern template std::vector<PreferencePair> load_jsonl<PreferencePair>(const std::filesystem::path&);
extern template std::vector<SftRecord> load_jsonl<SftRecord>(const std::filesystem::path&);
extern template std::vector<VerdictRecord> load_jsonl<VerdictRecord>(const std::filesystem::path&);

// Groups flat generation records under their (prompt id, language) prompt.
// Output follows prompt order; prompts without generations are omitted.
// Throws DataError for responses with no matching prompt or sets with K < 2.
std::vector<GenerationSet> group_generations(std::span<const Prompt> prompts,
                                             std::span<const Response> responses);
std::vector<Response> flatten_generations(std::span<const GenerationSet> sets);

// Largest-remainder allocation of n over the domain strata of `prompts`,
// then a seeded uniform pick inside each stratum. Output keeps input order.
std::vector<Prompt> stratified_sample(std::span<const Prompt> prompts, std::size_t n,
                                      std::uint64_t seed);

// Per-domain allocation used by stratified_sample, exposed for audits.
std::map<std::string, std::size_t> stratum_allocation(std::span<const Prompt> prompts,
                                                      std::size_t n);

using ParallelPrompts = std::map<std::string, std::map<std::string, Prompt>>;

struct Alignment {
  ParallelPrompts aligned;
  // id -> requested languages with no prompt.
  std::map<std::string, std::vector<std::string>> dropped;
};

Alignment align_parallel(std::span<const Prompt> prompts, const std::set<std::string>& langs);

}  // namespace crosspref
