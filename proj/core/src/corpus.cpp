#include "crosspref/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "crosspref/digest.hpp"
#include "crosspref/error.hpp"
#include "crosspref/random.hpp"
#include "json_io.hpp"

namespace crosspref {

namespace {

template <class Enum, std::size_t N>
Enum parse_tag(std::string_view s, const std::pair<std::string_view, Enum> (&table)[N],
               std::string_view what) {
  for (const auto& [name, value] : table) {
    if (name == s) return value;
  }
  std::string msg = "unknown " + std::string(what) + " '" + std::string(s) + "' (expected one of:";
  for (const auto& [name, value] : table) msg += " " + std::string(name);
  throw UsageError(msg + ")");
}

constexpr std::pair<std::string_view, Strategy> kStrategies[] = {
    {"paired", Strategy::kPaired},
    {"max_r", Strategy::kMaxR},
    {"in_lang", Strategy::kInLang},
    {"all_lang", Strategy::kAllLang},
};
constexpr std::pair<std::string_view, PromptLangVariant> kVariants[] = {
    {"chosen", PromptLangVariant::kChosen},
    {"mixed", PromptLangVariant::kMixed},
    {"rejected", PromptLangVariant::kRejected},
};
constexpr std::pair<std::string_view, Regime> kRegimes[] = {
    {"monolingual", Regime::kMonolingual},
    {"multilingual", Regime::kMultilingual},
    {"mono", Regime::kMonolingual},
    {"multi", Regime::kMultilingual},
};
constexpr std::pair<std::string_view, Outcome> kOutcomes[] = {
    {"a_wins", Outcome::kAWins},
    {"b_wins", Outcome::kBWins},
    {"tie", Outcome::kTie},
};

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kPaired: return "paired";
    case Strategy::kMaxR: return "max_r";
    case Strategy::kInLang: return "in_lang";
    case Strategy::kAllLang: return "all_lang";
  }
  return "?";
}

std::string_view to_string(PromptLangVariant v) {
  switch (v) {
    case PromptLangVariant::kChosen: return "chosen";
    case PromptLangVariant::kMixed: return "mixed";
    case PromptLangVariant::kRejected: return "rejected";
  }
  return "?";
}

std::string_view to_string(Regime r) {
  return r == Regime::kMonolingual ? "monolingual" : "multilingual";
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::kAWins: return "a_wins";
    case Outcome::kBWins: return "b_wins";
    case Outcome::kTie: return "tie";
  }
  return "?";
}

Strategy parse_strategy(std::string_view s) { return parse_tag(s, kStrategies, "strategy"); }
PromptLangVariant parse_prompt_lang_variant(std::string_view s) {
  return parse_tag(s, kVariants, "prompt language variant");
}
Regime parse_regime(std::string_view s) { return parse_tag(s, kRegimes, "regime"); }
Outcome parse_outcome(std::string_view s) { return parse_tag(s, kOutcomes, "outcome"); }

namespace detail {

const json& require(const json& obj, std::string_view field) {
  if (!obj.is_object()) throw FieldError{std::string(field), "record is not a JSON object"};
  auto it = obj.find(std::string(field));
  if (it == obj.end()) throw FieldError{std::string(field), "missing field"};
  return *it;
}

std::string require_string(const json& obj, std::string_view field) {
  const auto& v = require(obj, field);
  if (!v.is_string()) throw FieldError{std::string(field), "expected a string"};
  return v.get<std::string>();
}

double require_finite(const json& obj, std::string_view field) {
  const auto& v = require(obj, field);
  if (!v.is_number()) throw FieldError{std::string(field), "expected a number"};
  double d = v.get<double>();
  if (!std::isfinite(d)) throw FieldError{std::string(field), "expected a finite number"};
  return d;
}

std::int64_t require_integer(const json& obj, std::string_view field) {
  const auto& v = require(obj, field);
  if (!v.is_number_integer()) throw FieldError{std::string(field), "expected an integer"};
  return v.get<std::int64_t>();
}

namespace {

template <class Enum>
Enum enum_field(const json& obj, std::string_view field, Enum (*parse)(std::string_view)) {
  auto s = require_string(obj, field);
  try {
    return parse(s);
  } catch (const UsageError& e) {
    throw FieldError{std::string(field), e.what()};
  }
}

// Nested objects report dotted field paths such as "chosen.reward".
template <class Fn>
auto nested(const json& obj, std::string_view field, Fn&& fn) {
  const auto& sub = require(obj, field);
  try {
    return fn(sub);
  } catch (FieldError& e) {
    e.field = std::string(field) + "." + e.field;
    throw;
  }
}

}  // namespace

json to_json(const Prompt& p) {
  json j = {{"id", p.id}, {"lang", p.lang}, {"text", p.text}, {"domain", p.domain}};
  if (p.reference_completion) j["reference_completion"] = *p.reference_completion;
  return j;
}

json to_json(const Response& r) {
  json j = {{"prompt_id", r.prompt_id}, {"lang", r.lang},         {"text", r.text},
            {"token_ids", r.token_ids}, {"generator_id", r.generator_id}};
  if (r.reward) j["reward"] = *r.reward;
  return j;
}

json to_json(const PreferencePair& p) {
  return json{{"prompt", to_json(p.prompt)},
              {"chosen", to_json(p.chosen)},
              {"rejected", to_json(p.rejected)},
              {"margin", p.margin},
              {"strategy", to_string(p.strategy)},
              {"prompt_lang_variant", to_string(p.prompt_lang_variant)},
              {"regime", to_string(p.regime)}};
}

json to_json(const SftRecord& s) {
  return json{{"prompt", to_json(s.prompt)},
              {"completion", s.completion},
              {"token_ids", s.token_ids},
              {"source", s.source}};
}

json to_json(const VerdictRecord& v) {
  return json{{"prompt_id", v.prompt_id}, {"lang", v.lang},       {"category", v.category},
              {"model_a", v.model_a},     {"model_b", v.model_b}, {"outcome", to_string(v.outcome)},
              {"len_a", v.len_a},         {"len_b", v.len_b}};
}

Prompt prompt_from_json(const json& j) {
  Prompt p;
  p.id = require_string(j, "id");
  p.lang = require_string(j, "lang");
  p.text = require_string(j, "text");
  p.domain = require_string(j, "domain");
  if (j.contains("reference_completion") && !j["reference_completion"].is_null()) {
    p.reference_completion = require_string(j, "reference_completion");
  }
  return p;
}

Response response_from_json(const json& j) {
  Response r;
  r.prompt_id = require_string(j, "prompt_id");
  r.lang = require_string(j, "lang");
  r.text = require_string(j, "text");
  const auto& ids = require(j, "token_ids");
  if (!ids.is_array()) throw FieldError{"token_ids", "expected an array of integers"};
  r.token_ids.reserve(ids.size());
  for (const auto& t : ids) {
    if (!t.is_number_integer() || t.get<std::int64_t>() < 0) {
      throw FieldError{"token_ids", "expected nonnegative integers"};
    }
    r.token_ids.push_back(static_cast<TokenId>(t.get<std::int64_t>()));
  }
  if (j.contains("reward") && !j["reward"].is_null()) r.reward = require_finite(j, "reward");
  r.generator_id = require_string(j, "generator_id");
  return r;
}

PreferencePair pair_from_json(const json& j) {
  PreferencePair p;
  p.prompt = nested(j, "prompt", prompt_from_json);
  p.chosen = nested(j, "chosen", response_from_json);
  p.rejected = nested(j, "rejected", response_from_json);
  p.margin = require_finite(j, "margin");
  p.strategy = enum_field(j, "strategy", parse_strategy);
  p.prompt_lang_variant = enum_field(j, "prompt_lang_variant", parse_prompt_lang_variant);
  p.regime = enum_field(j, "regime", parse_regime);
  return p;
}

SftRecord sft_from_json(const json& j) {
  SftRecord s;
  s.prompt = nested(j, "prompt", prompt_from_json);
  s.completion = require_string(j, "completion");
  const auto& ids = require(j, "token_ids");
  if (!ids.is_array()) throw FieldError{"token_ids", "expected an array of integers"};
  for (const auto& t : ids) {
    if (!t.is_number_integer() || t.get<std::int64_t>() < 0) {
      throw FieldError{"token_ids", "expected nonnegative integers"};
    }
    s.token_ids.push_back(static_cast<TokenId>(t.get<std::int64_t>()));
  }
  s.source = require_string(j, "source");
  return s;
}

VerdictRecord verdict_from_json(const json& j) {
  VerdictRecord v;
  v.prompt_id = require_string(j, "prompt_id");
  v.lang = require_string(j, "lang");
  v.category = require_string(j, "category");
  v.model_a = require_string(j, "model_a");
  v.model_b = require_string(j, "model_b");
  v.outcome = enum_field(j, "outcome", parse_outcome);
  v.len_a = require_integer(j, "len_a");
  v.len_b = require_integer(j, "len_b");
  return v;
}

std::string dump_line(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::strict); }

}  // namespace detail

namespace {

using detail::json;

// Returns an empty string when the record holds, else the violated invariant.
std::string check(const Prompt& p) {
  if (p.id.empty()) return "prompt id is empty";
  if (p.lang.empty()) return "prompt lang is empty";
  if (p.text.empty()) return "prompt text is empty";
  return {};
}

std::string check(const Response& r) {
  if (r.prompt_id.empty()) return "response prompt_id is empty";
  if (r.lang.empty()) return "response lang is empty";
  if (r.generator_id.empty()) return "generator_id is empty";
  return {};
}

std::string check(const PreferencePair& p) {
  if (auto e = check(p.prompt); !e.empty()) return e;
  if (auto e = check(p.chosen); !e.empty()) return "chosen: " + e;
  if (auto e = check(p.rejected); !e.empty()) return "rejected: " + e;
  if (!p.chosen.reward || !p.rejected.reward) return "chosen and rejected must carry rewards";
  if (p.chosen.prompt_id != p.rejected.prompt_id || p.chosen.prompt_id != p.prompt.id) {
    return "chosen, rejected and prompt must share prompt_id";
  }
  if (p.margin < 0) return "margin must be nonnegative";
  if (*p.chosen.reward < *p.rejected.reward) return "chosen reward below rejected reward";
  const double diff = *p.chosen.reward - *p.rejected.reward;
  if (std::abs(p.margin - diff) > 1e-9 * std::max(1.0, std::abs(diff))) {
    return "margin differs from chosen.reward - rejected.reward";
  }
  return {};
}

std::string check(const SftRecord& s) {
  if (auto e = check(s.prompt); !e.empty()) return e;
  if (s.completion.empty()) return "completion is empty";
  return {};
}

std::string check(const VerdictRecord& v) {
  if (v.prompt_id.empty()) return "prompt_id is empty";
  if (v.model_a == v.model_b) return "model_a equals model_b";
  if (v.len_a < 0 || v.len_b < 0) return "lengths must be nonnegative";
  if (std::find(std::begin(kVerdictCategories), std::end(kVerdictCategories), v.category) ==
      std::end(kVerdictCategories)) {
    return "unknown category '" + v.category + "'";
  }
  return {};
}

Prompt from_json(const json& j, Prompt*) { return detail::prompt_from_json(j); }
Response from_json(const json& j, Response*) { return detail::response_from_json(j); }
PreferencePair from_json(const json& j, PreferencePair*) { return detail::pair_from_json(j); }
SftRecord from_json(const json& j, SftRecord*) { return detail::sft_from_json(j); }
VerdictRecord from_json(const json& j, VerdictRecord*) { return detail::verdict_from_json(j); }

// Parallel translations share an id, so (id, lang) must be unique.
void check_file_level(const std::vector<Prompt>& prompts, std::string_view source) {
  std::map<std::pair<std::string, std::string>, std::size_t> seen;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    auto [it, fresh] = seen.emplace(std::pair{prompts[i].id, prompts[i].lang}, i);
    if (!fresh) {
      std::ostringstream msg;
      msg << source << ": record " << i << ": duplicate (id, lang) = (" << prompts[i].id << ", "
          << prompts[i].lang << "), first seen at record " << it->second;
      throw DataError(msg.str());
    }
  }
}

template <class Record>
void check_file_level(const std::vector<Record>&, std::string_view) {}

}  // namespace

template <class Record>
std::vector<Record> parse_jsonl(std::string_view text, std::string_view source) {
  std::vector<Record> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    std::ostringstream where;
    where << source << ":" << line_no;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where.str() + ": malformed JSON: " + e.what());
    }
    try {
      out.push_back(from_json(j, static_cast<Record*>(nullptr)));
    } catch (const detail::FieldError& e) {
      throw DataError(where.str() + ": field \"" + e.field + "\": " + e.message);
    }
    if (auto violated = check(out.back()); !violated.empty()) {
      std::ostringstream msg;
      msg << source << ": record " << out.size() - 1 << " (line " << line_no
          << "): invariant violated: " << violated;
      throw DataError(msg.str());
    }
  }
  check_file_level(out, source);
  return out;
}

template <class Record>
std::vector<Record> load_jsonl(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("no such file: " + path.string());
  return parse_jsonl<Record>(read_file(path), path.string());
}

template <class Record>
std::string to_jsonl(std::span<const Record> records) {
  std::string out;
  for (const auto& r : records) {
    out += detail::dump_line(detail::to_json(r));
    out += '\n';
  }
  return out;
}

template <class Record>
void store_jsonl(const std::filesystem::path& path, std::span<const Record> records) {
  write_file_atomic(path, to_jsonl(records));
}

#define CROSSPREF_INSTANTIATE(R)                                                         \
  template std::vector<R> parse_jsonl<R>(std::string_view, std::string_view);            \
  template std::vector<R> load_jsonl<R>(const std::filesystem::path&);                   \
  template std::string to_jsonl<R>(std::span<const R>);                                  \
  template void store_jsonl<R>(const std::filesystem::path&, std::span<const R>);

CROSSPREF_INSTANTIATE(Prompt)
CROSSPREF_INSTANTIATE(Response)
CROSSPREF_INSTANTIATE(PreferencePair)
CROSSPREF_INSTANTIATE(SftRecord)
CROSSPREF_INSTANTIATE(VerdictRecord)
#undef CROSSPREF_INSTANTIATE

std::vector<GenerationSet> group_generations(std::span<const Prompt> prompts,
                                             std::span<const Response> responses) {
  std::map<std::pair<std::string, std::string>, std::size_t> slot;
  std::vector<GenerationSet> sets;
  sets.reserve(prompts.size());
  for (const auto& p : prompts) {
    if (!slot.emplace(std::pair{p.id, p.lang}, sets.size()).second) {
      throw DataError("duplicate prompt (" + p.id + ", " + p.lang + ")");
    }
    sets.push_back(GenerationSet{p, {}});
  }
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const auto& r = responses[i];
    auto it = slot.find({r.prompt_id, r.lang});
    if (it == slot.end()) {
      throw DataError("generation " + std::to_string(i) + " references unknown prompt (" +
                      r.prompt_id + ", " + r.lang + ")");
    }
    sets[it->second].responses.push_back(r);
  }
  std::erase_if(sets, [](const GenerationSet& g) { return g.responses.empty(); });
  for (const auto& g : sets) {
    if (g.responses.size() < 2) {
      throw DataError("prompt (" + g.prompt.id + ", " + g.prompt.lang +
                      ") has fewer than 2 candidates");
    }
  }
  return sets;
}

std::vector<Response> flatten_generations(std::span<const GenerationSet> sets) {
  std::vector<Response> out;
  for (const auto& g : sets) out.insert(out.end(), g.responses.begin(), g.responses.end());
  return out;
}

std::map<std::string, std::size_t> stratum_allocation(std::span<const Prompt> prompts,
                                                      std::size_t n) {
  if (n > prompts.size()) {
    throw UsageError("cannot sample " + std::to_string(n) + " prompts from " +
                     std::to_string(prompts.size()));
  }
  std::map<std::string, std::size_t> sizes;
  for (const auto& p : prompts) ++sizes[p.domain];

  const double total = static_cast<double>(prompts.size());
  struct Share {
    std::string domain;
    std::size_t base;
    double remainder;
  };
  std::vector<Share> shares;
  std::size_t assigned = 0;
  for (const auto& [domain, size] : sizes) {
    // Exact integer floor; the fractional part only orders the remainders.
    const std::size_t base = size * n / prompts.size();
    const double exact = static_cast<double>(size) * static_cast<double>(n) / total;
    shares.push_back({domain, base, exact - static_cast<double>(base)});
    assigned += base;
  }
  // Largest remainder first; ties go to the lexicographically smaller domain.
  std::stable_sort(shares.begin(), shares.end(),
                   [](const Share& a, const Share& b) { return a.remainder > b.remainder; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++shares[i].base;

  std::map<std::string, std::size_t> alloc;
  for (const auto& s : shares) {
    if (s.base > sizes[s.domain]) {
      throw UsageError("allocation for stratum '" + s.domain + "' exceeds its size");
    }
    alloc[s.domain] = s.base;
  }
  return alloc;
}

std::vector<Prompt> stratified_sample(std::span<const Prompt> prompts, std::size_t n,
                                      std::uint64_t seed) {
  const auto alloc = stratum_allocation(prompts, n);
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < prompts.size(); ++i) members[prompts[i].domain].push_back(i);

  std::vector<std::size_t> picked;
  picked.reserve(n);
  for (auto& [domain, idx] : members) {
    auto rng = make_stream(seed, {fnv1a(domain)});
    const std::size_t want = alloc.at(domain);
    // Partial Fisher-Yates: the first `want` slots become a uniform subset.
    for (std::size_t i = 0; i < want; ++i) {
      const std::size_t span = idx.size() - i;
      const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(span));
      std::swap(idx[i], idx[std::min(j, idx.size() - 1)]);
    }
    picked.insert(picked.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(want));
  }
  std::sort(picked.begin(), picked.end());
  std::vector<Prompt> out;
  out.reserve(picked.size());
  for (auto i : picked) out.push_back(prompts[i]);
  return out;
}

Alignment align_parallel(std::span<const Prompt> prompts, const std::set<std::string>& langs) {
  ParallelPrompts by_id;
  std::vector<std::string> order;
  for (const auto& p : prompts) {
    auto [it, fresh_id] = by_id.try_emplace(p.id);
    if (fresh_id) order.push_back(p.id);
    if (!it->second.emplace(p.lang, p).second) {
      throw DataError("duplicate prompt (" + p.id + ", " + p.lang + ")");
    }
  }
  Alignment out;
  for (const auto& id : order) {
    auto& per_lang = by_id[id];
    std::vector<std::string> missing;
    for (const auto& l : langs) {
      if (!per_lang.contains(l)) missing.push_back(l);
    }
    if (!missing.empty()) {
      out.dropped.emplace(id, std::move(missing));
      continue;
    }
    std::map<std::string, Prompt> kept;
    for (const auto& l : langs) kept.emplace(l, per_lang.at(l));
    out.aligned.emplace(id, std::move(kept));
  }
  return out;
}

}  // namespace crosspref
