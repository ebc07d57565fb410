#include "crosspref/commands.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>

#include "crosspref/config.hpp"
#include "crosspref/digest.hpp"
#include "crosspref/error.hpp"
#include "crosspref/evalkit.hpp"
#include "crosspref/manifest.hpp"
#include "crosspref/pairbuilder.hpp"
#include "crosspref/parallel.hpp"
#include "crosspref/random.hpp"
#include "crosspref/synthetic.hpp"
#include "crosspref/toylm.hpp"
#include "json.hpp"

namespace crosspref::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

bool g_quiet = false;

// Canonical "key=value" listing of a command's settings; its digest is the
// manifest config hash.
class Settings {
 public:
  template <class T>
  Settings& add(std::string_view key, const T& value) {
    std::ostringstream os;
    os.precision(17);
    if constexpr (std::is_same_v<T, path>) {
      os << value.string();
    } else if constexpr (std::is_same_v<T, bool>) {
      os << (value ? "true" : "false");
    } else {
      os << value;
    }
    text_ += std::string(key) + "=" + os.str() + "\n";
    return *this;
  }
  std::string hash() const { return sha256_hex(text_); }

 private:
  std::string text_;
};

std::string join(const std::vector<std::string>& xs) {
  std::string out;
  for (const auto& x : xs) out += (out.empty() ? "" : ",") + x;
  return out;
}

fs::path parent_dir(const path& p) {
  return p.has_parent_path() ? p.parent_path() : fs::path(".");
}

void ensure_parent(const path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// Collects the manifest fields shared by every command.
class Run {
 public:
  Run(std::string command, const Settings& settings, std::uint64_t seed,
      const std::vector<path>& inputs) {
    for (const auto& in : inputs) {
      if (!fs::exists(in)) throw DataError("input file not found: " + in.string());
    }
    m_.command = std::move(command);
    m_.config_hash = settings.hash();
    m_.seed = seed;
    m_.tool_version = tool_version();
    m_.started = utc_timestamp();
    m_.input_digests = digest_files(inputs);
  }
  void finish(const std::vector<path>& outputs) { write_manifests(m_, outputs); }

 private:
  RunManifest m_;
};

void check_vocab(const ToyPolicy& policy, const Vocab& vocab, const path& model) {
  if (static_cast<std::size_t>(policy.shape().vocab_size) != vocab.size()) {
    throw DataError(model.string() + ": model vocabulary size " +
                    std::to_string(policy.shape().vocab_size) + " does not match vocab.json (" +
                    std::to_string(vocab.size()) + ")");
  }
}

std::string prompt_key(const std::string& id, const std::string& lang) { return id + '\n' + lang; }

std::map<std::string, const Prompt*> index_prompts(const std::vector<Prompt>& prompts) {
  std::map<std::string, const Prompt*> out;
  for (const auto& p : prompts) out[prompt_key(p.id, p.lang)] = &p;
  return out;
}

// ---------------------------------------------------------------- settings

Settings describe(const SynthOptions& o) {
  Settings s;
  s.add("command", "synth").add("langs", join(o.langs)).add("n_prompts", o.n_prompts)
      .add("prompt_len", o.prompt_len).add("vocab_size", o.vocab_size).add("seed", o.seed);
  return s;
}

Settings describe(const InitModelOptions& o) {
  Settings s;
  s.add("command", "init-model").add("id", o.id).add("embed_dim", o.embed_dim)
      .add("hidden_dim", o.hidden_dim).add("context", o.context).add("init_scale", o.init_scale)
      .add("seed", o.seed);
  return s;
}

Settings describe(const SampleOptions& o) {
  Settings s;
  s.add("command", "sample").add("k", o.k).add("temperature", o.temperature)
      .add("max_len", o.max_len).add("seed", o.seed);
  return s;
}

Settings describe(const ScorerConfig& c, Settings s) {
  s.add("scorer.name", c.name).add("scorer.noise_sigma", c.noise_sigma)
      .add("scorer.alpha", c.alpha).add("scorer.seed", c.seed);
  return s;
}

Settings describe(const ScoreOptions& o) {
  Settings s;
  s.add("command", "score").add("force", o.force);
  return describe(o.scorer, s);
}

Settings describe(const BuildPairsOptions& o) {
  Settings s;
  s.add("command", "build-pairs").add("strategy", to_string(o.strategy))
      .add("regime", to_string(o.regime)).add("lang", o.lang)
      .add("target", to_string(o.rejected_target)).add("variant", to_string(o.variant))
      .add("policy_id", o.policy_id).add("seed", o.seed);
  return s;
}

Settings describe(const TrainOptions& o, const TrainSettings& t) {
  Settings s;
  s.add("command", "train").add("mode", to_string(o.mode)).add("online", o.online).add("id", o.id)
      .add("lr", t.train.learning_rate).add("epochs", t.train.epochs)
      .add("global_batch", t.train.global_batch).add("microbatch", t.train.microbatch)
      .add("schedule", t.train.schedule).add("warmup", t.train.warmup_fraction)
      .add("weight_decay", t.train.weight_decay).add("beta", t.train.beta)
      .add("max_seq", t.train.max_seq).add("seed", t.train.seed);
  if (o.online) {
    s.add("online.k", t.online.k).add("online.steps", t.online.steps)
        .add("online.prompts_per_step", t.online.prompts_per_step)
        .add("online.temperature", t.online.temperature).add("online.max_len", t.online.max_len)
        .add("online.target", to_string(t.online.rejected_target));
    s = describe(t.scorer, s);
  }
  return s;
}

Settings describe(const JudgeOptions& o) {
  Settings s;
  s.add("command", "judge").add("max_len", o.max_len).add("temperature", o.temperature)
      .add("seed", o.seed);
  return describe(o.scorer, s);
}

Settings describe(const EvalOptions& o) {
  Settings s;
  s.add("command", "eval").add("model_a", o.model_a).add("model_b", o.model_b)
      .add("resamples", o.resamples).add("seed", o.seed);
  return s;
}

std::vector<path> train_inputs(const TrainOptions& o) {
  std::vector<path> in = {o.model, o.vocab};
  in.push_back(o.online ? o.prompts : o.data);
  if (!o.config.empty()) in.push_back(o.config);
  return in;
}

path report_path(const BuildPairsOptions& o) {
  if (!o.report.empty()) return o.report;
  auto p = o.out;
  p += ".report.json";
  return p;
}

std::vector<path> build_pairs_inputs(const BuildPairsOptions& o) {
  if (o.strategy == Strategy::kInLang || o.strategy == Strategy::kAllLang) return {o.prompts};
  return {o.generations, o.prompts};
}

}  // namespace

void set_quiet(bool quiet) { g_quiet = quiet; }

void log(const std::string& line) {
  if (!g_quiet) std::cerr << line << '\n';
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return 1;
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  return 2;
}

// ------------------------------------------------------------------- synth

void cmd_synth(const SynthOptions& o) {
  DirectoryLock lock(o.out_dir);
  Run run("synth", describe(o), o.seed, {});
  SynthConfig cfg;
  cfg.langs = o.langs;
  cfg.n_prompts = o.n_prompts;
  cfg.prompt_len = o.prompt_len;
  cfg.vocab_size = o.vocab_size;
  cfg.seed = o.seed;
  const auto corpus = make_synthetic_corpus(cfg);
  const auto prompts = o.out_dir / "prompts.jsonl";
  const auto vocab = o.out_dir / "vocab.json";
  store_jsonl<Prompt>(prompts, corpus.prompts);
  save_vocab(vocab, corpus.vocab);
  run.finish({prompts, vocab});
  log("synth: " + std::to_string(corpus.prompts.size()) + " prompts, vocabulary of " +
      std::to_string(corpus.vocab.size()));
}

void cmd_init_model(const InitModelOptions& o) {
  DirectoryLock lock(parent_dir(o.out));
  Run run("init-model", describe(o), o.seed, {o.vocab});
  const auto vocab = load_vocab(o.vocab);
  ModelShape shape{static_cast<int>(vocab.size()), o.embed_dim, o.hidden_dim, o.context};
  shape.validate();
  if (!(o.init_scale >= 0.0) || !std::isfinite(o.init_scale)) {
    throw UsageError("init scale must be a finite non-negative number");
  }
  ensure_parent(o.out);
  save_checkpoint(o.out, ToyPolicy::random(o.id, shape, o.seed, o.init_scale));
  run.finish({o.out});
  log("init-model: " + o.id + " -> " + o.out.string());
}

// ------------------------------------------------------------------ sample

void cmd_sample(const SampleOptions& o) {
  DirectoryLock lock(parent_dir(o.out));
  Run run("sample", describe(o), o.seed, {o.model, o.prompts, o.vocab});
  const SamplerConfig sampler{o.temperature, o.k, o.max_len, o.seed};
  sampler.validate();
  const auto policy = load_checkpoint(o.model);
  const auto vocab = load_vocab(o.vocab);
  check_vocab(policy, vocab, o.model);
  const auto prompts = load_jsonl<Prompt>(o.prompts);

  std::vector<std::vector<Response>> per_prompt(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    const auto& p = prompts[i];
    const auto ptoks = vocab.encode(p.text);
    const auto samples = sample(policy, ptoks, sampler, fnv1a(prompt_key(p.id, p.lang)));
    auto& out = per_prompt[i];
    out.reserve(samples.size());
    for (const auto& s : samples) {
      out.push_back({p.id, p.lang, vocab.decode(s), s, std::nullopt, policy.id()});
    }
  });
  std::vector<Response> flat;
  flat.reserve(prompts.size() * static_cast<std::size_t>(o.k));
  for (auto& v : per_prompt) std::move(v.begin(), v.end(), std::back_inserter(flat));
  ensure_parent(o.out);
  store_jsonl<Response>(o.out, flat);
  run.finish({o.out});
  log("sample: " + std::to_string(flat.size()) + " completions from " + policy.id());
}

// ------------------------------------------------------------------- score

void cmd_score(const ScoreOptions& o) {
  DirectoryLock lock(parent_dir(o.out));
  Run run("score", describe(o), o.scorer.seed, {o.generations, o.prompts});
  const auto scorer = make_scorer(o.scorer);
  auto responses = load_jsonl<Response>(o.generations);
  const auto prompts = load_jsonl<Prompt>(o.prompts);
  const auto index = index_prompts(prompts);

  std::vector<const Prompt*> owner(responses.size());
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const auto& r = responses[i];
    if (r.reward && !o.force) {
      throw UsageError(o.generations.string() + ": record " + std::to_string(i) +
                       " already has a reward; pass --force to overwrite");
    }
    auto it = index.find(prompt_key(r.prompt_id, r.lang));
    if (it == index.end()) {
      throw DataError(o.generations.string() + ": record " + std::to_string(i) +
                      ": no prompt with id '" + r.prompt_id + "' in language '" + r.lang + "'");
    }
    owner[i] = it->second;
  }
  parallel_for(responses.size(), [&](std::size_t i) {
    const double s = scorer->score(*owner[i], responses[i]);
    if (!std::isfinite(s)) {
      throw NumericError("scorer returned a non-finite reward for record " + std::to_string(i));
    }
    responses[i].reward = s;
  });
  ensure_parent(o.out);
  store_jsonl<Response>(o.out, responses);
  run.finish({o.out});
  log("score: " + std::to_string(responses.size()) + " rewards with " + o.scorer.name);
}

// ------------------------------------------------------------------- stats

void cmd_stats(const StatsOptions& o) {
  DirectoryLock lock(o.out_dir);
  Settings s;
  s.add("command", "stats").add("langs", join(o.langs));
  Run run("stats", s, 0, {o.generations, o.prompts});
  const auto gens = group_generations(load_jsonl<Prompt>(o.prompts),
                                      load_jsonl<Response>(o.generations));
  const auto dist = per_language_distributions(gens, o.langs);

  ordered_json j;
  ordered_json langs = ordered_json::object();
  for (const auto& [lang, sum] : dist.by_lang) {
    langs[lang] = {{"mean", sum.mean},         {"std", sum.std},
                   {"min", sum.min},           {"max", sum.max},
                   {"quartiles", sum.quartiles}, {"count", sum.count}};
  }
  j["by_lang"] = langs;
  j["max_mean_gap"] = dist.max_mean_gap;
  j["sets"] = gens.size();

  std::string regions;
  std::size_t region_sets = 0;
  for (const auto& g : gens) {
    if (summarize(rewards_of(g)).std == 0.0) continue;
    ++region_sets;
    for (const auto& r : region_samples(g)) {
      ordered_json line = {{"prompt_id", g.prompt.id},
                           {"lang", r.response.lang},
                           {"region", to_string(r.region)},
                           {"response_text", r.response.text},
                           {"reward", *r.response.reward}};
      regions += line.dump() + "\n";
    }
  }
  j["region_sets"] = region_sets;

  const auto stats_path = o.out_dir / "stats.json";
  const auto regions_path = o.out_dir / "regions.jsonl";
  write_file_atomic(stats_path, j.dump(2) + "\n");
  write_file_atomic(regions_path, regions);
  run.finish({stats_path, regions_path});
  log("stats: " + std::to_string(dist.by_lang.size()) + " languages, max mean gap " +
      std::to_string(dist.max_mean_gap));
}

// ------------------------------------------------------------- build-pairs

void cmd_build_pairs(const BuildPairsOptions& o) {
  DirectoryLock lock(parent_dir(o.out));
  Run run("build-pairs", describe(o), o.seed, build_pairs_inputs(o));
  BuildSpec spec;
  spec.strategy = o.strategy;
  spec.regime = o.regime;
  spec.lang = o.lang;
  spec.rejected_target = o.rejected_target;
  spec.prompt_lang_variant = o.variant;
  spec.seed = o.seed;
  spec.policy_id = o.policy_id;
  spec.validate();

  const auto prompts = load_jsonl<Prompt>(o.prompts);
  ensure_parent(o.out);
  BuildReport report;
  std::size_t emitted = 0;
  if (o.strategy == Strategy::kInLang || o.strategy == Strategy::kAllLang) {
    const auto records = build_sft_plain(prompts, o.strategy, o.lang);
    store_jsonl<SftRecord>(o.out, records);
    report.inputs = prompts.size();
    emitted = records.size();
  } else {
    const auto gens = group_generations(prompts, load_jsonl<Response>(o.generations));
    if (o.strategy == Strategy::kPaired) {
      auto built = build_paired(gens, spec);
      store_jsonl<PreferencePair>(o.out, built.pairs);
      report = std::move(built.report);
      emitted = report.pairs_emitted;
    } else {
      const auto records = build_max_r_sft(gens, spec);
      store_jsonl<SftRecord>(o.out, records);
      if (!o.policy_id.empty()) report = tag_off_policy(gens, o.policy_id);
      report.inputs = records.size();
      emitted = records.size();
    }
  }
  report.pairs_emitted = emitted;
  const auto rep = report_path(o);
  write_file_atomic(rep, report_to_json(report));
  run.finish({o.out, rep});
  log("build-pairs: " + std::to_string(emitted) + " " + std::string(to_string(o.strategy)) +
      " records, " + std::to_string(report.skipped_total()) + " skipped");
}

// ------------------------------------------------------------------- train

TrainSettings train_settings(TrainMode mode, const path& config,
                             std::optional<std::uint64_t> seed, bool online) {
  TrainSettings t;
  t.train = online ? toy_online_config() : toy_config(mode);
  Config c;
  if (!config.empty()) {
    c = Config::load(config);
    c.require_known({"seed", "lr", "epochs", "global_batch", "microbatch", "schedule", "warmup",
                     "weight_decay", "beta", "max_seq", "online.k", "online.steps",
                     "online.prompts_per_step", "online.temperature", "online.max_len",
                     "online.target", "scorer.name", "scorer.noise_sigma", "scorer.alpha",
                     "scorer.seed"});
  }
  c.apply_environment();
  auto& tr = t.train;
  tr.seed = c.get_u64("seed", tr.seed);
  if (seed) tr.seed = *seed;
  tr.learning_rate = c.get_double("lr", tr.learning_rate);
  tr.epochs = static_cast<int>(c.get_int("epochs", tr.epochs));
  tr.global_batch = static_cast<int>(c.get_int("global_batch", tr.global_batch));
  tr.microbatch = static_cast<int>(c.get_int("microbatch", tr.microbatch));
  tr.schedule = c.get("schedule", tr.schedule);
  tr.warmup_fraction = c.get_double("warmup", tr.warmup_fraction);
  tr.weight_decay = c.get_double("weight_decay", tr.weight_decay);
  tr.beta = c.get_double("beta", tr.beta);
  tr.max_seq = static_cast<int>(c.get_int("max_seq", tr.max_seq));
  tr.validate();

  auto& on = t.online;
  on.k = static_cast<int>(c.get_int("online.k", on.k));
  on.steps = static_cast<int>(c.get_int("online.steps", on.steps));
  on.prompts_per_step = static_cast<int>(c.get_int("online.prompts_per_step", on.prompts_per_step));
  on.temperature = c.get_double("online.temperature", on.temperature);
  on.max_len = static_cast<int>(c.get_int("online.max_len", on.max_len));
  if (c.has("online.target")) on.rejected_target = parse_rejected_target(c.get("online.target"));

  auto& sc = t.scorer;
  sc.name = c.get("scorer.name", sc.name);
  sc.noise_sigma = c.get_double("scorer.noise_sigma", online ? kDefaultNoiseSigma : sc.noise_sigma);
  sc.alpha = c.get_double("scorer.alpha", sc.alpha);
  sc.seed = c.get_u64("scorer.seed", tr.seed);
  return t;
}

void cmd_train(const TrainOptions& opts) {
  if (opts.online && opts.mode != TrainMode::kDpo) {
    throw UsageError("--online requires --mode dpo");
  }
  if (opts.online && opts.prompts.empty()) throw UsageError("--online requires --prompts");
  if (!opts.online && opts.data.empty()) throw UsageError("train requires --data");
  DirectoryLock lock(parent_dir(opts.out));
  const auto settings = train_settings(opts.mode, opts.config, opts.seed, opts.online);

  auto policy = load_checkpoint(opts.model);
  TrainOptions o = opts;
  if (o.id.empty()) {
    o.id = policy.id() + "-" + (o.online ? std::string("online") : std::string(to_string(o.mode)));
  }
  std::vector<path> outputs = {o.out};
  if (!o.metrics.empty()) outputs.push_back(o.metrics);
  Run run("train", describe(o, settings), settings.train.seed, train_inputs(o));
  const auto vocab = load_vocab(o.vocab);
  check_vocab(policy, vocab, o.model);
  const auto base_id = policy.id();

  TrainResult result{policy, {}};
  std::string metrics_header;
  if (o.online) {
    const auto prompts = load_jsonl<Prompt>(o.prompts);
    const auto scorer = make_scorer(settings.scorer);
    result = online_dpo_loop(std::move(policy), prompts, vocab, *scorer, settings.train,
                             settings.online);
    metrics_header = "# online dpo; reference = initial checkpoint '" + base_id +
                     "', frozen for the whole run\n";
  } else if (o.mode == TrainMode::kSft) {
    const auto records = load_jsonl<SftRecord>(o.data);
    const auto examples = to_sft_examples(records, vocab);
    result = train(std::move(policy), examples, settings.train);
  } else {
    const auto pairs = load_jsonl<PreferencePair>(o.data);
    auto items = to_dpo_items(pairs, vocab);
    result = train(policy, items, settings.train);
    cache_reference_logps(freeze_reference(policy), items);
    const auto before = evaluate_dpo(policy, items, settings.train.beta);
    const auto after = evaluate_dpo(result.policy, items, settings.train.beta);
    log("train: implicit accuracy " + std::to_string(before.implicit_accuracy) + " -> " +
        std::to_string(after.implicit_accuracy) + ", mean margin " +
        std::to_string(before.mean_margin) + " -> " + std::to_string(after.mean_margin));
  }
  result.policy.set_id(o.id);
  ensure_parent(o.out);
  save_checkpoint(o.out, result.policy);
  if (!o.metrics.empty()) {
    ensure_parent(o.metrics);
    write_file_atomic(o.metrics, metrics_header + metrics_csv(result.steps));
  }
  run.finish(outputs);
  log("train: " + std::to_string(result.steps.size()) + " steps -> " + o.out.string());
}

// ------------------------------------------------------------------- judge

void cmd_judge(const JudgeOptions& o) {
  DirectoryLock lock(parent_dir(o.out));
  Run run("judge", describe(o), o.seed, {o.model_a, o.model_b, o.prompts, o.vocab});
  if (o.max_len < 1) throw UsageError("max_len must be positive");
  if (!(o.temperature >= 0.0) || !std::isfinite(o.temperature)) {
    throw UsageError("judge temperature must be finite and non-negative");
  }
  const auto a = load_checkpoint(o.model_a);
  const auto b = load_checkpoint(o.model_b);
  if (a.id() == b.id()) throw UsageError("both models have id '" + a.id() + "'");
  const auto vocab = load_vocab(o.vocab);
  check_vocab(a, vocab, o.model_a);
  check_vocab(b, vocab, o.model_b);
  const auto prompts = load_jsonl<Prompt>(o.prompts);
  const auto scorer = make_scorer(o.scorer);

  std::vector<VerdictRecord> verdicts(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    const auto& p = prompts[i];
    const auto ptoks = vocab.encode(p.text);
    auto draw = [&](const ToyPolicy& m, std::uint64_t which) {
      if (o.temperature == 0.0) return greedy_decode(m, ptoks, o.max_len);
      auto rng = make_stream(o.seed, {fnv1a(prompt_key(p.id, p.lang)), which});
      return sample_one(m, ptoks, o.temperature, o.max_len, rng);
    };
    const auto ca = draw(a, 0);
    const auto cb = draw(b, 1);
    const double sa = scorer->score(p, {p.id, p.lang, vocab.decode(ca), ca, std::nullopt, a.id()});
    const double sb = scorer->score(p, {p.id, p.lang, vocab.decode(cb), cb, std::nullopt, b.id()});
    auto& v = verdicts[i];
    v.prompt_id = p.id;
    v.lang = p.lang;
    const bool known = std::find(std::begin(kVerdictCategories), std::end(kVerdictCategories),
                                 p.domain) != std::end(kVerdictCategories);
    v.category = known ? p.domain : "other";
    v.model_a = a.id();
    v.model_b = b.id();
    v.outcome = std::abs(sa - sb) <= 1e-12 ? Outcome::kTie
                : sa > sb                  ? Outcome::kAWins
                                           : Outcome::kBWins;
    v.len_a = static_cast<std::int64_t>(completion_length(ca));
    v.len_b = static_cast<std::int64_t>(completion_length(cb));
  });
  ensure_parent(o.out);
  store_jsonl<VerdictRecord>(o.out, verdicts);
  run.finish({o.out});
  log("judge: " + std::to_string(verdicts.size()) + " verdicts, " + a.id() + " vs " + b.id());
}

// -------------------------------------------------------------- eval/report

void cmd_eval(const EvalOptions& o) {
  DirectoryLock lock(parent_dir(o.out));
  Run run("eval", describe(o), o.seed, {o.verdicts});
  const auto verdicts = load_jsonl<VerdictRecord>(o.verdicts);
  const auto result = evaluate(verdicts, o.model_a, o.model_b, o.resamples, o.seed);
  ensure_parent(o.out);
  write_file_atomic(o.out, result_to_json(result));
  run.finish({o.out});
  log("eval: " + o.model_a + " vs " + o.model_b + " win rate " + std::to_string(result.win_rate) +
      " (LC " + std::to_string(result.lc_win_rate) + ", bootstrap std " +
      std::to_string(result.bootstrap_std) + ")");
}

void cmd_report(const ReportOptions& o) {
  DirectoryLock lock(parent_dir(o.out));
  Settings s;
  s.add("command", "report").add("baseline", o.baseline);
  Run run("report", s, 0, {o.scores});
  auto models = load_scores_csv(o.scores);
  auto it = models.find(o.baseline);
  if (it == models.end()) {
    throw DataError(o.scores.string() + ": baseline model '" + o.baseline + "' has no scores");
  }
  const auto baseline = it->second;
  models.erase(it);
  if (models.empty()) throw DataError(o.scores.string() + ": no models besides the baseline");
  const auto table = delta_table(baseline, models);
  ensure_parent(o.out);
  write_file_atomic(o.out, score_table_csv(table));
  run.finish({o.out});
  log("report: " + std::to_string(table.rows.size()) + " rows, " +
      std::to_string(table.configs.size()) + " configs");
}

// ---------------------------------------------------------------- pipeline

namespace {

struct Stage {
  std::string name;
  std::string command;
  std::string config_hash;
  std::vector<path> inputs;
  std::vector<path> outputs;
  std::function<void()> run;
};

bool up_to_date(const Stage& s) {
  std::optional<RunManifest> first;
  for (const auto& out : s.outputs) {
    if (!fs::exists(out)) return false;
    const auto m = read_manifest(out);
    if (!m) return false;
    const auto it = m->output_digests.find(out.string());
    if (it == m->output_digests.end()) return false;
    if (file_sha256(out) != it->second) {
      throw DataError("stage '" + s.name + "': " + out.string() +
                      " does not match the digest recorded in its manifest");
    }
    if (!first) first = m;
  }
  for (const auto& in : s.inputs) {
    if (!fs::exists(in)) return false;
  }
  return first && first->command == s.command && first->config_hash == s.config_hash &&
         first->input_digests == digest_files(s.inputs);
}

void write_if_changed(const path& p, const std::string& text) {
  if (fs::exists(p) && read_file(p) == text) return;
  write_file_atomic(p, text);
}

// Train-config text for one [section] of the pipeline config, on top of
// the section defaults.
std::string section_config(const Config& c, const std::string& section, std::uint64_t seed,
                           std::map<std::string, std::string> defaults) {
  const auto prefix = section + ".";
  for (const auto& [k, v] : c.values()) {
    if (k.starts_with(prefix)) defaults[k.substr(prefix.size())] = v;
  }
  std::string out = "seed = " + std::to_string(seed) + "\n";
  for (const auto& [k, v] : defaults) out += k + " = " + v + "\n";
  return out;
}

}  // namespace

std::vector<std::string> pipeline_config_keys() {
  std::vector<std::string> keys = {
      "seed",          "workdir",         "corpus.langs",      "corpus.prompts",
      "corpus.prompt_len", "corpus.vocab_size", "model.embed_dim", "model.hidden_dim",
      "model.context", "model.init_scale", "sample.k",         "sample.temperature",
      "sample.max_len", "scorer.name",    "scorer.noise_sigma", "scorer.alpha",
      "scorer.seed",   "pairs.regime",    "pairs.lang",        "pairs.target",
      "pairs.variant", "judge.max_len",   "judge.temperature", "eval.resamples"};
  for (const std::string section : {"sft", "dpo"}) {
    for (const std::string k : {"lr", "epochs", "global_batch", "microbatch", "schedule", "warmup",
                                "weight_decay", "beta", "max_seq"}) {
      keys.push_back(section + "." + k);
    }
  }
  return keys;
}

std::vector<StageOutcome> cmd_pipeline(const PipelineOptions& o) {
  auto c = Config::load(o.config);
  c.require_known(pipeline_config_keys());
  c.apply_environment();
  const auto seed = o.seed ? *o.seed : c.get_u64("seed", 0);
  const auto base = parent_dir(o.config);
  const path work = base / c.get("workdir", "run");
  fs::create_directories(work);
  DirectoryLock lock(work);

  ScorerConfig scorer;
  scorer.name = c.get("scorer.name", scorer.name);
  scorer.noise_sigma = c.get_double("scorer.noise_sigma", kDefaultNoiseSigma);
  scorer.alpha = c.get_double("scorer.alpha", scorer.alpha);
  scorer.seed = c.get_u64("scorer.seed", seed);

  SynthOptions synth;
  synth.out_dir = work;
  synth.langs = c.get_list("corpus.langs", synth.langs);
  synth.n_prompts = static_cast<std::size_t>(c.get_u64("corpus.prompts", synth.n_prompts));
  synth.prompt_len = static_cast<std::size_t>(c.get_u64("corpus.prompt_len", synth.prompt_len));
  synth.vocab_size = static_cast<std::size_t>(c.get_u64("corpus.vocab_size", synth.vocab_size));
  synth.seed = seed;
  const path prompts = work / "prompts.jsonl";
  const path vocab = work / "vocab.json";

  InitModelOptions init;
  init.vocab = vocab;
  init.out = work / "base-init.bin";
  init.id = "base";
  init.embed_dim = static_cast<int>(c.get_int("model.embed_dim", init.embed_dim));
  init.hidden_dim = static_cast<int>(c.get_int("model.hidden_dim", init.hidden_dim));
  init.context = static_cast<int>(c.get_int("model.context", init.context));
  init.init_scale = c.get_double("model.init_scale", init.init_scale);
  init.seed = seed;

  BuildPairsOptions sft_data;
  sft_data.prompts = prompts;
  sft_data.out = work / "sft.jsonl";
  sft_data.strategy = Strategy::kAllLang;
  sft_data.seed = seed;

  const path sft_conf = work / "sft.conf";
  const path dpo_conf = work / "dpo.conf";
  // The warm start runs several epochs so the base samples mostly on-topic.
  write_if_changed(sft_conf, section_config(c, "sft", seed, {{"epochs", "4"}}));
  write_if_changed(dpo_conf, section_config(c, "dpo", seed, {}));

  TrainOptions sft;
  sft.mode = TrainMode::kSft;
  sft.data = sft_data.out;
  sft.model = init.out;
  sft.vocab = vocab;
  sft.config = sft_conf;
  sft.metrics = work / "sft_metrics.csv";
  sft.out = work / "base.bin";
  sft.id = "base";
  sft.seed = seed;

  SampleOptions samp;
  samp.model = sft.out;
  samp.prompts = prompts;
  samp.vocab = vocab;
  samp.out = work / "generations.jsonl";
  samp.k = static_cast<int>(c.get_int("sample.k", 16));
  samp.temperature = c.get_double("sample.temperature", samp.temperature);
  samp.max_len = static_cast<int>(c.get_int("sample.max_len", samp.max_len));
  samp.seed = seed;

  ScoreOptions score;
  score.generations = samp.out;
  score.prompts = prompts;
  score.out = work / "scored.jsonl";
  score.scorer = scorer;

  BuildPairsOptions pairs;
  pairs.generations = score.out;
  pairs.prompts = prompts;
  pairs.out = work / "pairs.jsonl";
  pairs.strategy = Strategy::kPaired;
  pairs.regime = parse_regime(c.get("pairs.regime", "multilingual"));
  pairs.lang = c.get("pairs.lang");
  pairs.rejected_target = parse_rejected_target(c.get("pairs.target", "mu_minus_2sigma"));
  pairs.variant = parse_prompt_lang_variant(c.get("pairs.variant", "chosen"));
  pairs.policy_id = sft.id;
  pairs.seed = seed;

  TrainOptions dpo;
  dpo.mode = TrainMode::kDpo;
  dpo.data = pairs.out;
  dpo.model = sft.out;
  dpo.vocab = vocab;
  dpo.config = dpo_conf;
  dpo.metrics = work / "dpo_metrics.csv";
  dpo.out = work / "tuned.bin";
  dpo.id = "tuned";
  dpo.seed = seed;

  JudgeOptions judge;
  judge.model_a = dpo.out;
  judge.model_b = sft.out;
  judge.prompts = prompts;
  judge.vocab = vocab;
  judge.out = work / "verdicts.jsonl";
  judge.scorer = scorer;
  judge.max_len = static_cast<int>(c.get_int("judge.max_len", judge.max_len));
  judge.temperature = c.get_double("judge.temperature", judge.temperature);
  judge.seed = seed;

  EvalOptions eval;
  eval.verdicts = judge.out;
  eval.model_a = dpo.id;
  eval.model_b = sft.id;
  eval.resamples = static_cast<int>(c.get_int("eval.resamples", eval.resamples));
  eval.seed = seed;
  eval.out = work / "result.json";

  const auto sft_settings = train_settings(TrainMode::kSft, sft_conf, seed);
  const auto dpo_settings = train_settings(TrainMode::kDpo, dpo_conf, seed);

  const std::vector<Stage> stages = {
      {"synth", "synth", describe(synth).hash(), {}, {prompts, vocab}, [&] { cmd_synth(synth); }},
      {"init", "init-model", describe(init).hash(), {vocab}, {init.out},
       [&] { cmd_init_model(init); }},
      {"sft-data", "build-pairs", describe(sft_data).hash(), build_pairs_inputs(sft_data),
       {sft_data.out, report_path(sft_data)}, [&] { cmd_build_pairs(sft_data); }},
      {"sft", "train", describe(sft, sft_settings).hash(), train_inputs(sft),
       {sft.out, sft.metrics}, [&] { cmd_train(sft); }},
      {"sample", "sample", describe(samp).hash(), {samp.model, samp.prompts, samp.vocab},
       {samp.out}, [&] { cmd_sample(samp); }},
      {"score", "score", describe(score).hash(), {score.generations, score.prompts}, {score.out},
       [&] { cmd_score(score); }},
      {"build-pairs", "build-pairs", describe(pairs).hash(), build_pairs_inputs(pairs),
       {pairs.out, report_path(pairs)}, [&] { cmd_build_pairs(pairs); }},
      {"dpo", "train", describe(dpo, dpo_settings).hash(), train_inputs(dpo),
       {dpo.out, dpo.metrics}, [&] { cmd_train(dpo); }},
      {"judge", "judge", describe(judge).hash(),
       {judge.model_a, judge.model_b, judge.prompts, judge.vocab}, {judge.out},
       [&] { cmd_judge(judge); }},
      {"eval", "eval", describe(eval).hash(), {eval.verdicts}, {eval.out},
       [&] { cmd_eval(eval); }},
  };

  std::vector<StageOutcome> outcomes;
  for (const auto& st : stages) {
    if (up_to_date(st)) {
      log("pipeline: " + st.name + " up to date, skipped");
      outcomes.push_back({st.name, true});
      continue;
    }
    log("pipeline: running " + st.name);
    try {
      st.run();
    } catch (const UsageError& e) {
      throw UsageError("stage '" + st.name + "': " + e.what());
    } catch (const NumericError& e) {
      throw NumericError("stage '" + st.name + "': " + e.what());
    } catch (const std::exception& e) {
      throw DataError("stage '" + st.name + "': " + e.what());
    }
    outcomes.push_back({st.name, false});
  }
  return outcomes;
}

}  // namespace crosspref::cli
