#include "crosspref/synthetic.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "crosspref/error.hpp"
#include "crosspref/random.hpp"

namespace crosspref {

namespace {

constexpr std::array<const char*, 7> kToyLangs = {"eng", "dan", "deu", "fra", "ita", "nld", "spa"};

std::size_t draw_index(Rng& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

std::string word(const std::string& lang, char kind, std::size_t i) {
  return lang + ":" + kind + std::to_string(i);
}

std::string prompt_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%05zu", i);
  return buf;
}

}  // namespace

std::vector<std::string> toy_language_tags(std::size_t n) {
  if (n < 1 || n > kToyLangs.size()) {
    throw UsageError("toy corpora support 1 to 7 languages, got " + std::to_string(n));
  }
  return {kToyLangs.begin(), kToyLangs.begin() + static_cast<std::ptrdiff_t>(n)};
}

std::size_t concepts_per_language(std::size_t n_langs, std::size_t vocab_size) {
  if (n_langs == 0 || vocab_size < 3) return 0;
  return (vocab_size - 3) / n_langs / 2;
}

Vocab make_toy_vocab(std::span<const std::string> langs, std::size_t vocab_size) {
  const auto per = concepts_per_language(langs.size(), vocab_size);
  if (per < 2) {
    throw UsageError("vocabulary of " + std::to_string(vocab_size) + " is too small for " +
                     std::to_string(langs.size()) + " languages");
  }
  std::vector<std::string> tokens = {"<bos>", "<eos>", "<pad>"};
  for (const auto& lang : langs) {
    for (std::size_t i = 0; i < per; ++i) tokens.push_back(word(lang, 'q', i));
    for (std::size_t i = 0; i < per; ++i) tokens.push_back(word(lang, 'a', i));
  }
  return Vocab(std::move(tokens));
}

SyntheticCorpus make_synthetic_corpus(const SynthConfig& cfg) {
  if (cfg.langs.empty()) throw UsageError("synthetic corpus needs at least one language");
  if (cfg.n_prompts == 0 || cfg.prompt_len == 0) {
    throw UsageError("synthetic corpus needs positive n_prompts and prompt_len");
  }
  if (cfg.domains.empty()) throw UsageError("synthetic corpus needs at least one domain");
  SyntheticCorpus out{make_toy_vocab(cfg.langs, cfg.vocab_size), {}};
  const auto per = concepts_per_language(cfg.langs.size(), cfg.vocab_size);
  out.prompts.reserve(cfg.n_prompts * cfg.langs.size());
  for (std::size_t i = 0; i < cfg.n_prompts; ++i) {
    auto rng = make_stream(cfg.seed, {0x73796e7468ULL, i});
    const auto& domain = cfg.domains[draw_index(rng, cfg.domains.size())];
    std::vector<std::size_t> concepts(cfg.prompt_len);
    for (auto& c : concepts) c = draw_index(rng, per);
    for (const auto& lang : cfg.langs) {
      std::string text, ref;
      for (std::size_t j = 0; j < concepts.size(); ++j) {
        if (j) {
          text += ' ';
          ref += ' ';
        }
        text += word(lang, 'q', concepts[j]);
        ref += word(lang, 'a', concepts[j]);
      }
      out.prompts.push_back({prompt_id(i), lang, text, domain, ref});
    }
  }
  return out;
}

std::vector<GenerationSet> symmetric_generation_sets(const SyntheticCorpus& corpus, std::size_t k,
                                                     std::uint64_t seed) {
  if (k < 2) throw UsageError("generation sets need k >= 2");
  std::vector<GenerationSet> out;
  out.reserve(corpus.prompts.size());
  for (const auto& p : corpus.prompts) {
    auto rng = make_stream(seed, {fnv1a(p.id), fnv1a(p.lang)});
    std::normal_distribution<double> reward(0.0, 1.0);
    std::vector<TokenId> answers;
    for (std::size_t t = 0; t < corpus.vocab.size(); ++t) {
      const auto& tok = corpus.vocab.token(static_cast<TokenId>(t));
      if (tok.starts_with(p.lang + ":a")) answers.push_back(static_cast<TokenId>(t));
    }
    if (answers.empty()) throw DataError("no answer words for language '" + p.lang + "'");
    GenerationSet g{p, {}};
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<TokenId> ids(1 + draw_index(rng, 4));
      for (auto& id : ids) id = answers[draw_index(rng, answers.size())];
      ids.push_back(kEos);
      g.responses.push_back(
          {p.id, p.lang, corpus.vocab.decode(ids), ids, reward(rng), "synthetic"});
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace crosspref
