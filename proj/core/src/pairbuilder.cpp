#include "crosspref/pairbuilder.hpp"

#include <algorithm>
#include <optional>

#include "crosspref/error.hpp"
#include "crosspref/parallel.hpp"
#include "crosspref/random.hpp"
#include "json_io.hpp"

namespace crosspref {

void BuildSpec::validate() const {
  if (regime == Regime::kMonolingual && lang.empty()) {
    throw UsageError("the monolingual regime needs a language filter (--lang)");
  }
  if (strategy != Strategy::kPaired && prompt_lang_variant != PromptLangVariant::kChosen) {
    throw UsageError("prompt language variants apply to the paired strategy only");
  }
}

std::size_t BuildReport::skipped_total() const {
  std::size_t n = 0;
  for (const auto& [reason, count] : skipped_degenerate) n += count;
  return n;
}

void BuildReport::merge(const BuildReport& other) {
  inputs += other.inputs;
  pairs_emitted += other.pairs_emitted;
  for (const auto& [k, v] : other.skipped_degenerate) skipped_degenerate[k] += v;
  for (const auto& [k, v] : other.chosen_lang_histogram) chosen_lang_histogram[k] += v;
  for (const auto& [k, v] : other.rejected_lang_histogram) rejected_lang_histogram[k] += v;
  for (const auto& [k, v] : other.generator_counts) generator_counts[k] += v;
  off_policy = off_policy || other.off_policy;
}

namespace {

// A candidate pool: the generation sets that compete for one pair.
struct Pool {
  std::string id;
  std::vector<const GenerationSet*> sets;
};

std::vector<Pool> make_pools(std::span<const GenerationSet> gens, const BuildSpec& spec) {
  std::map<std::string, std::vector<const GenerationSet*>> by_id;
  for (const auto& g : gens) {
    if (spec.regime == Regime::kMonolingual && g.prompt.lang != spec.lang) continue;
    by_id[g.prompt.id].push_back(&g);
  }
  std::vector<Pool> pools;
  for (auto& [id, sets] : by_id) {
    std::stable_sort(sets.begin(), sets.end(), [](const auto* a, const auto* b) {
      return a->prompt.lang < b->prompt.lang;
    });
    if (spec.regime == Regime::kMonolingual) {
      // (id, lang) is unique, but keep one pool per set regardless.
      for (const auto* s : sets) pools.push_back({id, {s}});
    } else {
      pools.push_back({id, std::move(sets)});
    }
  }
  return pools;
}

struct Candidate {
  const GenerationSet* set;
  const Response* response;
};

std::vector<Candidate> candidates_of(const Pool& pool) {
  std::vector<Candidate> out;
  for (const auto* s : pool.sets) {
    for (const auto& r : s->responses) out.push_back({s, &r});
  }
  return out;
}

std::vector<double> rewards_of(const std::vector<Candidate>& cands) {
  std::vector<double> out;
  out.reserve(cands.size());
  for (const auto& c : cands) {
    if (!c.response->reward) {
      throw DataError("prompt '" + c.set->prompt.id + "' (" + c.set->prompt.lang +
                      ") has an unscored candidate");
    }
    out.push_back(*c.response->reward);
  }
  return out;
}

// Prompt in the requested language for a pool member, falling back to the
// member's own prompt.
const Prompt& prompt_for(const Pool& pool, const Candidate& c) {
  for (const auto* s : pool.sets) {
    if (s->prompt.lang == c.response->lang) return s->prompt;
  }
  return c.set->prompt;
}

}  // namespace

PairedBuild build_paired(std::span<const GenerationSet> gens, const BuildSpec& spec) {
  spec.validate();
  if (gens.empty()) throw DataError("no generation sets to build pairs from");
  const auto pools = make_pools(gens, spec);

  std::vector<std::optional<PreferencePair>> slots(pools.size());
  std::vector<BuildReport> fragments(pools.size());
  parallel_for(pools.size(), [&](std::size_t i) {
    const auto& pool = pools[i];
    auto& rep = fragments[i];
    rep.inputs = 1;
    const auto cands = candidates_of(pool);
    const auto rewards = rewards_of(cands);
    const auto pick = select_rejected_quantile(rewards, spec.rejected_target);
    if (!pick) {
      rep.skipped_degenerate[std::string(to_string(*pick.degenerate))] = 1;
      return;
    }
    const auto chosen_idx = select_chosen(rewards);
    const double margin = rewards[chosen_idx] - rewards[pick.index];
    if (margin < kMinMargin) {
      rep.skipped_degenerate[std::string(to_string(SkipReason::kZeroMargin))] = 1;
      return;
    }
    const auto& chosen = cands[chosen_idx];
    const auto& rejected = cands[pick.index];
    PreferencePair p;
    p.prompt = prompt_for(pool, chosen);
    p.chosen = *chosen.response;
    p.rejected = *rejected.response;
    p.margin = margin;
    p.strategy = Strategy::kPaired;
    p.prompt_lang_variant = PromptLangVariant::kChosen;
    p.regime = spec.regime;
    rep.pairs_emitted = 1;
    rep.chosen_lang_histogram[p.chosen.lang] = 1;
    rep.rejected_lang_histogram[p.rejected.lang] = 1;
    slots[i] = std::move(p);
  });

  PairedBuild out;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    out.report.merge(fragments[i]);
    if (slots[i]) out.pairs.push_back(std::move(*slots[i]));
  }
  if (!spec.policy_id.empty()) {
    std::vector<GenerationSet> used;
    for (const auto& pool : pools) {
      for (const auto* s : pool.sets) used.push_back(*s);
    }
    auto prov = tag_off_policy(used, spec.policy_id);
    out.report.off_policy = prov.off_policy;
    out.report.generator_counts = std::move(prov.generator_counts);
  }
  if (spec.prompt_lang_variant != PromptLangVariant::kChosen) {
    out.pairs = apply_prompt_lang_variant(std::move(out.pairs), parallel_prompts_of(gens),
                                          spec.prompt_lang_variant, spec.seed);
  }
  return out;
}

ParallelPrompts parallel_prompts_of(std::span<const GenerationSet> gens) {
  ParallelPrompts out;
  for (const auto& g : gens) out[g.prompt.id].emplace(g.prompt.lang, g.prompt);
  return out;
}

std::vector<PreferencePair> apply_prompt_lang_variant(std::vector<PreferencePair> pairs,
                                                      const ParallelPrompts& parallel,
                                                      PromptLangVariant variant,
                                                      std::uint64_t seed) {
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto& p = pairs[i];
    auto it = parallel.find(p.prompt.id);
    if (it == parallel.end() || it->second.empty()) {
      throw DataError("no parallel prompts for id '" + p.prompt.id + "'");
    }
    const auto& langs = it->second;
    std::string want;
    switch (variant) {
      case PromptLangVariant::kChosen: want = p.chosen.lang; break;
      case PromptLangVariant::kRejected: want = p.rejected.lang; break;
      case PromptLangVariant::kMixed: {
        auto rng = make_stream(seed, {static_cast<std::uint64_t>(i), fnv1a(p.prompt.id)});
        auto pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(langs.size()));
        want = std::next(langs.begin(), static_cast<std::ptrdiff_t>(pick))->first;
        break;
      }
    }
    auto lit = langs.find(want);
    if (lit == langs.end()) {
      throw DataError("pair for id '" + p.prompt.id + "' needs a parallel prompt in '" + want +
                      "'");
    }
    p.prompt = lit->second;
    p.prompt_lang_variant = variant;
  }
  return pairs;
}

std::vector<SftRecord> build_max_r_sft(std::span<const GenerationSet> gens,
                                       const BuildSpec& spec) {
  spec.validate();
  const auto pools = make_pools(gens, spec);
  std::vector<SftRecord> out(pools.size());
  parallel_for(pools.size(), [&](std::size_t i) {
    const auto cands = candidates_of(pools[i]);
    const auto rewards = rewards_of(cands);
    const auto& best = cands[select_chosen(rewards)];
    out[i] = SftRecord{prompt_for(pools[i], best), best.response->text, best.response->token_ids,
                       "max_r"};
  });
  return out;
}

std::vector<SftRecord> build_sft_plain(std::span<const Prompt> prompts, Strategy strategy,
                                       std::string_view lang) {
  if (strategy != Strategy::kInLang && strategy != Strategy::kAllLang) {
    throw UsageError("plain SFT needs the in_lang or all_lang strategy");
  }
  if (strategy == Strategy::kInLang && lang.empty()) {
    throw UsageError("in_lang SFT needs a language filter");
  }
  std::vector<SftRecord> out;
  for (const auto& p : prompts) {
    if (strategy == Strategy::kInLang && p.lang != lang) continue;
    if (!p.reference_completion) {
      throw DataError("prompt '" + p.id + "' (" + p.lang + ") has no reference_completion");
    }
    out.push_back(SftRecord{p, *p.reference_completion, {}, "reference"});
  }
  return out;
}

BuildReport tag_off_policy(std::span<const GenerationSet> gens, std::string_view policy_id) {
  BuildReport rep;
  for (const auto& g : gens) {
    for (const auto& r : g.responses) {
      ++rep.generator_counts[r.generator_id];
      if (r.generator_id != policy_id) rep.off_policy = true;
    }
  }
  return rep;
}

std::string report_to_json(const BuildReport& report) {
  detail::json j = {{"inputs", report.inputs},
                    {"pairs_emitted", report.pairs_emitted},
                    {"skipped_degenerate", report.skipped_degenerate},
                    {"chosen_lang_histogram", report.chosen_lang_histogram},
                    {"rejected_lang_histogram", report.rejected_lang_histogram},
                    {"off_policy", report.off_policy},
                    {"generator_counts", report.generator_counts}};
  return j.dump(2) + "\n";
}

}  // namespace crosspref
