// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "crosspref/commands.hpp"
#include "crosspref/digest.hpp"
#include "crosspref/evalkit.hpp"
#include "crosspref/pairbuilder.hpp"
#include "crosspref/parallel.hpp"
#include "crosspref/random.hpp"
#include "crosspref/rewardstats.hpp"
#include "crosspref/scorers.hpp"
#include "crosspref/synthetic.hpp"
#include "crosspref/toylm.hpp"
#include "crosspref/trainer.hpp"
#include "helpers.hpp"

using namespace crosspref;
namespace cli = crosspref::cli;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

// Shared pipeline run: criterion 5 checks it, criterion 8 starts from its base.
struct PipelineRun {
  testing_util::TempDir dir;
  fs::path work;
  double seconds = 0.0;
};

PipelineRun& pipeline_run() {
  static PipelineRun run;
  if (run.work.empty()) {
    std::ofstream(run.dir / "pipeline.conf") << "seed = 0\n"
                                                "[corpus]\nlangs = eng, dan, deu\nprompts = 500\n"
                                                "[sample]\nk = 16\n"
                                                "[scorer]\nname = overlap\n";
    set_thread_count(1);
    const auto t0 = Clock::now();
    cli::cmd_pipeline({run.dir / "pipeline.conf", std::nullopt});
    run.seconds = seconds_since(t0);
    run.work = run.dir.path() / "run";
  }
  return run;
}

std::vector<double> brute_force_pop(const std::vector<double>& r, double& mean) {
  long double s = 0;
  for (double x : r) s += x;
  mean = static_cast<double>(s / r.size());
  return r;
}

// --------------------------------------------------------------- criteria

void c1_sweet_spot(Verdict& v) {
  auto rng = make_stream(2024);
  std::uniform_int_distribution<int> kdist(2, 64), family(0, 4), small_int(0, 5);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(-10.0, 10.0);
  std::exponential_distribution<double> expo(0.5);
  std::vector<std::vector<double>> lists(1000);
  for (auto& r : lists) {
    r.resize(static_cast<std::size_t>(kdist(rng)));
    const int f = family(rng);
    for (auto& x : r) {
      switch (f) {
        case 0: x = normal(rng); break;
        case 1: x = unif(rng); break;
        case 2: x = expo(rng); break;
        case 3: x = static_cast<double>(small_int(rng)); break;  // ties
        default: x = normal(rng) < 0 ? -1.0 + 0.1 * normal(rng) : 4.0 + normal(rng); break;
      }
    }
  }
  const auto t0 = Clock::now();
  int mismatches = 0;
  for (const auto& r : lists) {
    double mean = 0.0;
    brute_force_pop(r, mean);
    long double ss = 0;
    for (double x : r) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(static_cast<double>(ss / r.size()));
    const double target = mean - 2.0 * sd;
    std::size_t best = 0;
    for (std::size_t i = 1; i < r.size(); ++i) {
      if (std::abs(r[i] - target) < std::abs(r[best] - target)) best = i;
    }
    std::size_t top = 0;
    for (std::size_t i = 1; i < r.size(); ++i) {
      if (r[i] > r[top]) top = i;
    }
    const bool constant = std::all_of(r.begin(), r.end(), [&](double x) { return x == r[0]; });

    for (const auto& pick : {select_rejected_sweetspot(r),
                             select_rejected_quantile(r, RejectedTarget::kMuMinus2Sigma)}) {
      bool ok;
      if (constant) {
        ok = pick.degenerate == SkipReason::kZeroVariance;
      } else if (best == top) {
        ok = pick.index == best && pick.degenerate == SkipReason::kSameAsChosen;
      } else {
        ok = pick.index == best && !pick.degenerate;
      }
      if (!ok) ++mismatches;
    }
  }
  const double secs = seconds_since(t0);
  v.detail << "1000 lists, mismatches=" << mismatches << ", " << secs << " s";
  v.require(mismatches == 0, "index equality with brute force");
  v.require(secs < 1.0, "runtime < 1 s");
}

void c2_dpo_values(Verdict& v) {
  const auto p = ToyPolicy::random("p", {16, 4, 8, 4}, 1, 0.5);
  std::vector<DpoBatchItem> items = {{{3, 4}, {5, 6, kEos}, {7, kEos}, 0, 0}};
  cache_reference_logps(freeze_reference(p), items);
  const double same = dpo_loss(p, items[0], 0.1).loss;
  const double worked = dpo_loss_value(dpo_margin(0.1, -1.0, -2.0, -3.0, -2.0));
  v.detail << "identity loss=" << same << ", worked case=" << worked;
  v.require(std::abs(same - std::log(2.0)) <= 1e-12, "ln 2 at pi = pi_ref");
  v.require(std::abs(worked - 0.598139) <= 1e-6, "0.598139 worked case");
}

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8);
}

void c3_gradients(Verdict& v) {
  const auto t0 = Clock::now();
  const ModelShape shape{20, 4, 10, 4};
  double worst_lp = 0.0, worst_dpo = 0.0;
  int checks = 0;
  for (int draw = 0; draw < 5; ++draw) {
    auto p = ToyPolicy::random("p", shape, 500 + draw, 0.7);
    auto rng = make_stream(900 + draw);
    std::uniform_int_distribution<TokenId> tok(3, 19);
    std::vector<TokenId> prompt(3), a(5), b(4);
    for (auto& t : prompt) t = tok(rng);
    for (auto& t : a) t = tok(rng);
    for (auto& t : b) t = tok(rng);
    DpoBatchItem item{prompt, a, b, -4.0 - draw, -3.5};
    const auto g = grad_log_prob(p, prompt, a);
    const auto d = dpo_loss(p, item, 0.5);
    std::uniform_int_distribution<std::size_t> pick(0, p.params().size() - 1);
    for (int n = 0; n < 20; ++n) {
      const auto i = pick(rng);
      const double orig = p.params().flat(i);
      const double eps = 1e-5;
      p.params().flat(i) = orig + eps;
      const double lp_up = log_prob(p, prompt, a);
      const double dpo_up = dpo_loss(p, item, 0.5).loss;
      p.params().flat(i) = orig - eps;
      const double lp_down = log_prob(p, prompt, a);
      const double dpo_down = dpo_loss(p, item, 0.5).loss;
      p.params().flat(i) = orig;
      const double lp_num = (lp_up - lp_down) / (2 * eps);
      const double dpo_num = (dpo_up - dpo_down) / (2 * eps);
      if (!(g.grad.flat(i) == 0.0 && lp_num == 0.0)) {
        worst_lp = std::max(worst_lp, rel_err(g.grad.flat(i), lp_num));
      }
      if (!(d.grad.flat(i) == 0.0 && dpo_num == 0.0)) {
        worst_dpo = std::max(worst_dpo, rel_err(d.grad.flat(i), dpo_num));
      }
      ++checks;
    }
  }
  const double secs = seconds_since(t0);
  v.detail << "5 draws x 20 params, worst rel err log_prob=" << worst_lp << " dpo=" << worst_dpo
           << ", " << secs << " s";
  v.require(worst_lp < 1e-4, "grad_log_prob");
  v.require(worst_dpo < 1e-4, "dpo_loss gradient");
  v.require(secs < 10.0, "runtime < 10 s");
}

void c4_accumulation(Verdict& v) {
  const ModelShape shape{24, 4, 12, 4};
  const auto p = ToyPolicy::random("p", shape, 77, 0.6);
  auto rng = make_stream(78);
  std::uniform_int_distribution<TokenId> tok(3, 23);
  std::uniform_int_distribution<int> len(1, 12);
  std::vector<SftExample> batch(64);
  for (auto& e : batch) {
    e.prompt.resize(static_cast<std::size_t>(len(rng)));
    for (auto& t : e.prompt) t = tok(rng);
    e.completion.resize(static_cast<std::size_t>(len(rng)));
    for (auto& t : e.completion) t = tok(rng);
  }
  const auto whole = sft_loss(p, batch);
  const auto ref = whole.grad.flatten();
  double worst = 0.0;
  for (std::size_t parts : {1, 2, 4, 8}) {
    const std::vector<std::size_t> sizes(parts, 64 / parts);
    const auto split = sft_loss(p, batch, sizes);
    worst = std::max(worst, std::abs(split.loss - whole.loss));
    const auto g = split.grad.flatten();
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(g[i] - ref[i]));
  }
  v.detail << "partitions {1,2,4,8} of 64, max divergence=" << worst;
  v.require(worst <= 1e-12, "divergence <= 1e-12");
}

void c5_end_to_end(Verdict& v) {
  auto& run = pipeline_run();
  const auto vocab = load_vocab(run.work / "vocab.json");
  const auto base = load_checkpoint(run.work / "base.bin");
  const auto tuned = load_checkpoint(run.work / "tuned.bin");
  const auto pairs = load_jsonl<PreferencePair>(run.work / "pairs.jsonl");
  auto items = to_dpo_items(pairs, vocab);
  cache_reference_logps(base, items);
  const double beta = toy_config(TrainMode::kDpo).beta;
  const auto before = evaluate_dpo(base, items, beta);
  const auto after = evaluate_dpo(tuned, items, beta);

  std::ifstream metrics(run.work / "dpo_metrics.csv");
  std::size_t steps = 0;
  for (std::string line; std::getline(metrics, line);) ++steps;
  steps -= 1;
  const auto epoch_steps = (pairs.size() + 15) / 16;

  v.detail << pairs.size() << " pairs, " << steps << " steps; accuracy " << before.implicit_accuracy
           << " -> " << after.implicit_accuracy << ", mean margin " << before.mean_margin << " -> "
           << after.mean_margin << ", pipeline " << run.seconds << " s";
  v.require(steps == epoch_steps, "one epoch");
  v.require(after.implicit_accuracy >= 0.9, "implicit_accuracy >= 0.9");
  v.require(after.mean_margin > before.mean_margin, "mean_margin increases");
  v.require(run.seconds < 300.0, "runtime < 5 min");
}

void c6_non_collapse(Verdict& v) {
  SynthConfig cfg;
  cfg.langs = toy_language_tags(3);
  cfg.n_prompts = 500;
  cfg.seed = 6;
  const auto corpus = make_synthetic_corpus(cfg);
  const auto gens = symmetric_generation_sets(corpus, 16, 6);
  const auto b = build_paired(gens, BuildSpec{});
  const auto n = b.report.pairs_emitted;
  double worst = 0.0;
  v.detail << n << " pairs; chosen shares";
  for (const auto& l : cfg.langs) {
    const auto it = b.report.chosen_lang_histogram.find(l);
    const double share = it == b.report.chosen_lang_histogram.end()
                             ? 0.0
                             : static_cast<double>(it->second) / static_cast<double>(n);
    worst = std::max(worst, std::abs(share - 1.0 / 3.0));
    v.detail << ' ' << l << '=' << share;
  }
  v.require(n >= 500, ">= 500 pairs");
  v.require(worst <= 0.05, "within 5 points of uniform");
}

void c7_prompt_variants(Verdict& v) {
  SynthConfig cfg;
  cfg.langs = toy_language_tags(7);
  cfg.n_prompts = 7000;
  cfg.seed = 7;
  const auto corpus = make_synthetic_corpus(cfg);
  const auto gens = symmetric_generation_sets(corpus, 2, 7);
  const auto built = build_paired(gens, BuildSpec{});
  const auto parallel = parallel_prompts_of(gens);

  const auto chosen = apply_prompt_lang_variant(built.pairs, parallel, PromptLangVariant::kChosen, 7);
  const auto rejected =
      apply_prompt_lang_variant(built.pairs, parallel, PromptLangVariant::kRejected, 7);
  const auto mixed = apply_prompt_lang_variant(built.pairs, parallel, PromptLangVariant::kMixed, 7);
  std::size_t chosen_ok = 0, rejected_ok = 0;
  std::map<std::string, std::size_t> freq;
  for (std::size_t i = 0; i < built.pairs.size(); ++i) {
    chosen_ok += chosen[i].prompt.lang == chosen[i].chosen.lang;
    rejected_ok += rejected[i].prompt.lang == rejected[i].rejected.lang;
    ++freq[mixed[i].prompt.lang];
  }
  const double n = static_cast<double>(built.pairs.size());
  double worst = 0.0;
  for (const auto& l : cfg.langs) worst = std::max(worst, std::abs(freq[l] / n - 1.0 / 7.0));
  v.detail << built.pairs.size() << " pairs; chosen match " << chosen_ok << ", rejected match "
           << rejected_ok << ", mixed max deviation " << worst;
  v.require(built.pairs.size() >= 7000, "7000 pairs");
  v.require(chosen_ok == built.pairs.size(), "chosen variant 100%");
  v.require(rejected_ok == built.pairs.size(), "rejected variant 100%");
  v.require(worst <= 0.02, "mixed within 2 points");
}

std::vector<double> moving_average(const std::vector<StepMetrics>& steps, std::size_t w) {
  std::vector<double> out;
  double acc = 0.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    acc += steps[i].mean_len;
    if (i >= w) acc -= steps[i - w].mean_len;
    if (i + 1 >= w) out.push_back(acc / static_cast<double>(w));
  }
  return out;
}

void c8_online(Verdict& v) {
  auto& run = pipeline_run();
  const auto vocab = load_vocab(run.work / "vocab.json");
  const auto base = load_checkpoint(run.work / "base.bin");
  const auto prompts = load_jsonl<Prompt>(run.work / "prompts.jsonl");
  const auto cfg = toy_online_config();
  OnlineConfig on;
  v.require(on.k == 16 && on.steps == 200, "k = 16, 200 steps");

  ScorerConfig sc;
  sc.noise_sigma = cli::kDefaultNoiseSigma;
  sc.name = "length_bias";
  const auto biased = online_dpo_loop(base, prompts, vocab, *make_scorer(sc), cfg, on);
  sc.name = "overlap";
  const auto plain = online_dpo_loop(base, prompts, vocab, *make_scorer(sc), cfg, on);

  const auto ma = moving_average(biased.steps, 50);
  std::size_t non_increasing = 0;
  for (std::size_t i = 1; i < ma.size(); ++i) non_increasing += !(ma[i] > ma[i - 1]);
  const auto ma_plain = moving_average(plain.steps, 50);
  const double ratio = ma_plain.back() / ma_plain.front();
  v.detail << "length_bias MA " << ma.front() << " -> " << ma.back() << " (" << non_increasing
           << " non-increasing windows); overlap MA " << ma_plain.front() << " -> "
           << ma_plain.back();
  v.require(biased.steps.size() == 200 && ma.size() == 151, "200 steps");
  v.require(non_increasing == 0, "strictly increasing 50-step MA under length bias");
  v.require(std::abs(ratio - 1.0) <= 0.2, "overlap MA within 20%");
}

void c9_evalkit(Verdict& v) {
  auto rng = make_stream(99);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> outcome(0, 2);
  std::vector<VerdictRecord> mixed, equal_len, bern;
  for (int i = 0; i < 400; ++i) {
    const auto id = "p" + std::to_string(i);
    mixed.push_back({id, "eng", "math", "A", "B", static_cast<Outcome>(outcome(rng)), 5 + i % 7,
                     9 - i % 5});
    equal_len.push_back({id, "eng", "math", "A", "B", static_cast<Outcome>(outcome(rng)), 8, 8});
    bern.push_back({id, "eng", "math", "A", "B", coin(rng) ? Outcome::kAWins : Outcome::kBWins, 8,
                    8});
  }
  const bool complement = win_rate(mixed, "A") + win_rate(mixed, "B") == 1.0;
  const bool lc_plain = lc_win_rate(equal_len, "A") == win_rate(equal_len, "A");
  const double sd = bootstrap_std(bern, "A", Statistic::kWinRate, 1000, 5);
  const double theory = 0.5 / std::sqrt(400.0);
  const VerdictRecord w{"p", "eng", "math", "A", "B", Outcome::kAWins, 1, 1};
  const VerdictRecord t{"p", "eng", "math", "A", "B", Outcome::kTie, 1, 1};
  const VerdictRecord l{"p", "eng", "math", "A", "B", Outcome::kBWins, 1, 1};
  const bool scoring =
      outcome_score(w, "A") == 1.0 && outcome_score(t, "A") == 0.5 && outcome_score(l, "A") == 0.0;
  v.detail << "complement=" << complement << " lc==plain=" << lc_plain << " bootstrap std=" << sd
           << " (0.5/sqrt(400)=" << theory << ") scoring=" << scoring;
  v.require(complement, "win_rate complementarity");
  v.require(lc_plain, "lc = plain at equal lengths");
  v.require(std::abs(sd - theory) <= 0.2 * theory, "bootstrap within 20%");
  v.require(scoring, "1/0.5/0 scoring");
}

void c10_defaults(Verdict& v) {
  const auto s = default_config(TrainMode::kSft);
  const auto d = default_config(TrainMode::kDpo);
  v.detail << "sft lr=" << s.learning_rate << " dpo lr=" << d.learning_rate << " beta=" << d.beta
           << " warmup=" << d.warmup_fraction << " wd=" << d.weight_decay
           << " epochs=" << d.epochs << " batch=" << d.global_batch;
  v.require(s.learning_rate == 2e-4, "sft lr 2e-4");
  v.require(d.learning_rate == 5e-6, "dpo lr 5e-6");
  v.require(d.beta == 0.1, "beta 0.1");
  for (const auto& c : {s, d}) {
    v.require(c.warmup_fraction == 0.05, "warmup 0.05");
    v.require(c.weight_decay == 1e-2, "weight decay 1e-2");
    v.require(c.epochs == 1, "epochs 1");
    v.require(c.global_batch == 64, "global batch 64");
    v.require(c.schedule == "cosine", "cosine schedule");
  }
}

// Runs sample -> score -> build-pairs -> train into `out` with `threads`
// workers and returns the bytes of every produced artifact.
std::map<std::string, std::string> determinism_run(const fs::path& out, unsigned threads) {
  set_thread_count(threads);
  fs::create_directories(out);
  cli::SynthOptions synth;
  synth.out_dir = out;
  synth.n_prompts = 60;
  synth.seed = 11;
  cli::cmd_synth(synth);
  cli::InitModelOptions init;
  init.vocab = out / "vocab.json";
  init.out = out / "init.bin";
  init.seed = 11;
  cli::cmd_init_model(init);

  cli::SampleOptions samp;
  samp.model = init.out;
  samp.prompts = out / "prompts.jsonl";
  samp.vocab = init.vocab;
  samp.out = out / "generations.jsonl";
  samp.k = 8;
  samp.seed = 11;
  cli::cmd_sample(samp);

  cli::ScoreOptions score;
  score.generations = samp.out;
  score.prompts = samp.prompts;
  score.out = out / "scored.jsonl";
  score.scorer.noise_sigma = 0.05;
  score.scorer.seed = 11;
  cli::cmd_score(score);

  cli::BuildPairsOptions bp;
  bp.generations = score.out;
  bp.prompts = samp.prompts;
  bp.out = out / "pairs.jsonl";
  bp.variant = PromptLangVariant::kMixed;
  bp.seed = 11;
  cli::cmd_build_pairs(bp);

  cli::TrainOptions tr;
  tr.mode = TrainMode::kDpo;
  tr.data = bp.out;
  tr.model = init.out;
  tr.vocab = init.vocab;
  tr.metrics = out / "metrics.csv";
  tr.out = out / "tuned.bin";
  tr.seed = 11;
  cli::cmd_train(tr);

  std::map<std::string, std::string> bytes;
  for (const char* f : {"generations.jsonl", "pairs.jsonl", "pairs.jsonl.report.json",
                        "metrics.csv", "tuned.bin"}) {
    bytes[f] = read_file(out / f);
  }
  set_thread_count(1);
  return bytes;
}

void c11_determinism(Verdict& v) {
  testing_util::TempDir dir;
  const auto a = determinism_run(dir / "a", 1);
  const auto b = determinism_run(dir / "b", 1);
  const auto c = determinism_run(dir / "c", 4);
  std::size_t same = 0;
  for (const auto& [name, data] : a) {
    const bool eq = data == b.at(name) && data == c.at(name);
    same += eq;
    v.require(eq, name + " byte-identical");
  }

  auto rng = make_stream(12);
  std::uniform_int_distribution<int> outcome(0, 2), len(1, 30);
  std::vector<VerdictRecord> verdicts;
  for (int i = 0; i < 300; ++i) {
    verdicts.push_back({"p" + std::to_string(i / 2), i % 2 ? "dan" : "deu", "math", "A", "B",
                        static_cast<Outcome>(outcome(rng)), len(rng), len(rng)});
  }
  set_thread_count(1);
  const double b1 = bootstrap_std(verdicts, "A", Statistic::kLcWinRate, 200, 3);
  const double b2 = bootstrap_std(verdicts, "A", Statistic::kLcWinRate, 200, 3);
  set_thread_count(4);
  const double b4 = bootstrap_std(verdicts, "A", Statistic::kLcWinRate, 200, 3);
  set_thread_count(1);
  v.require(b1 == b2 && b1 == b4, "bootstrap identical");
  v.detail << same << "/" << a.size() << " artifacts identical across 2 runs and 1 vs 4 threads; "
           << "bootstrap " << (b1 == b4 ? "identical" : "differs");
}

}  // namespace

int main() {
  cli::set_quiet(true);
  const std::vector<std::pair<std::string, std::function<void(Verdict&)>>> criteria = {
      {"1 sweet-spot oracle equivalence", c1_sweet_spot},
      {"2 DPO analytic values", c2_dpo_values},
      {"3 gradient correctness", c3_gradients},
      {"4 accumulation invariance", c4_accumulation},
      {"5 end-to-end toy DPO", c5_end_to_end},
      {"6 language-selection non-collapse", c6_non_collapse},
      {"7 prompt-language variants", c7_prompt_variants},
      {"8 online feedback loop", c8_online},
      {"9 evaluation kit", c9_evalkit},
      {"10 provenance defaults", c10_defaults},
      {"11 determinism", c11_determinism},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Verdict v;
    const auto t0 = Clock::now();
    try {
      fn(v);
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << " [exception: " << e.what() << "]";
    }
    failed += !v.pass;
    std::printf("%s criterion %s: %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", name.c_str(),
                v.detail.str().c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed;
}
