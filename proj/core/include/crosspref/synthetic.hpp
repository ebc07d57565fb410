#pragma once

// Bundled synthetic multilingual corpus: toy "languages" over a shared
// concept space, a matching toy vocabulary, and symmetric scored generation
// sets for selection audits.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crosspref/corpus.hpp"
#include "crosspref/toylm.hpp"

namespace crosspref {

// The first n of eng, dan, deu, fra, ita, nld, spa. Throws UsageError for
// n outside [1, 7].
std::vector<std::string> toy_language_tags(std::size_t n);

// <bos>, <eos>, <pad>, then per language an equal share of the remaining
// slots, half question words "lang:qI" and half answer words "lang:aI".
// Throws UsageError when a language would get fewer than two of each.
Vocab make_toy_vocab(std::span<const std::string> langs, std::size_t vocab_size = 64);

// Number of question (and answer) words per language in make_toy_vocab.
std::size_t concepts_per_language(std::size_t n_langs, std::size_t vocab_size = 64);

struct SynthConfig {
  std::vector<std::string> langs = toy_language_tags(3);
  std::size_t n_prompts = 500;  // parallel prompt ids; each exists in every language
  std::size_t prompt_len = 3;
  std::size_t vocab_size = 64;
  std::vector<std::string> domains = {"coding", "math", "chat", "reasoning"};
  std::uint64_t seed = 0;
};

struct SyntheticCorpus {
  Vocab vocab;
  std::vector<Prompt> prompts;  // ordered by id, then language
};

// Prompt i draws prompt_len concept indices and a domain; every language
// renders the same concepts, and the reference completion is the answer word
// of each concept in order.
SyntheticCorpus make_synthetic_corpus(const SynthConfig& cfg);

// Generation sets for every prompt of the corpus with k random answer-word
// responses each, rewards drawn i.i.d. N(0, 1) irrespective of language.
std::vector<GenerationSet> symmetric_generation_sets(const SyntheticCorpus& corpus, std::size_t k,
                                                     std::uint64_t seed);

}  // namespace crosspref
