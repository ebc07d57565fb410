#pragma once

// Command implementations behind the crosspref executable. Each command
// reads its inputs, writes outputs atomically, and leaves a manifest beside
// every output. Errors propagate as UsageError / DataError / NumericError.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "crosspref/corpus.hpp"
#include "crosspref/rewardstats.hpp"
#include "crosspref/scorers.hpp"
#include "crosspref/trainer.hpp"

namespace crosspref::cli {

using std::filesystem::path;

// Progress lines go to stderr unless quiet.
void set_quiet(bool quiet);
void log(const std::string& line);

int exit_code_for(const std::exception& e);

// Reward noise used by the pipeline and online training unless configured.
// A little noise breaks the exact ties of the overlap fractions.
inline constexpr double kDefaultNoiseSigma = 0.05;

struct SynthOptions {
  path out_dir = ".";
  std::vector<std::string> langs = {"eng", "dan", "deu"};
  std::size_t n_prompts = 500;
  std::size_t prompt_len = 3;
  std::size_t vocab_size = 64;
  std::uint64_t seed = 0;
};
// Writes prompts.jsonl and vocab.json.
void cmd_synth(const SynthOptions& o);

struct InitModelOptions {
  path vocab;
  path out;
  std::string id = "base";
  int embed_dim = 8;
  int hidden_dim = 32;
  int context = 6;
  double init_scale = 0.1;
  std::uint64_t seed = 0;
};
void cmd_init_model(const InitModelOptions& o);

struct SampleOptions {
  path model;
  path prompts;
  path vocab;
  path out;
  int k = 64;
  double temperature = 0.7;
  int max_len = 16;
  std::uint64_t seed = 0;
};
// Alternative decoding temperature for the low-temperature preset.
inline constexpr double kLowTemperature = 0.1;
void cmd_sample(const SampleOptions& o);

struct ScoreOptions {
  path generations;
  path prompts;
  path out;
  ScorerConfig scorer;
  bool force = false;
};
void cmd_score(const ScoreOptions& o);

struct StatsOptions {
  path generations;
  path prompts;
  path out_dir = ".";
  std::vector<std::string> langs;  // languages that must be present
};
// Writes stats.json and regions.jsonl.
void cmd_stats(const StatsOptions& o);

struct BuildPairsOptions {
  path generations;  // unused by in_lang / all_lang
  path prompts;
  path out;
  path report;  // defaults to "<out>.report.json"
  Strategy strategy = Strategy::kPaired;
  Regime regime = Regime::kMultilingual;
  std::string lang;
  RejectedTarget rejected_target = RejectedTarget::kMuMinus2Sigma;
  PromptLangVariant variant = PromptLangVariant::kChosen;
  std::string policy_id;
  std::uint64_t seed = 0;
};
void cmd_build_pairs(const BuildPairsOptions& o);

struct TrainOptions {
  TrainMode mode = TrainMode::kDpo;
  bool online = false;
  path data;  // pairs (dpo) or SFT records (sft); unused online
  path prompts;  // online only
  path model;
  path vocab;
  path config;  // optional
  path metrics;
  path out;
  std::string id;  // defaults to "<model id>-<mode>"
  std::optional<std::uint64_t> seed;
};
void cmd_train(const TrainOptions& o);

// Training settings after layering: toy defaults, then the config file.
struct TrainSettings {
  TrainConfig train;
  OnlineConfig online;
  ScorerConfig scorer;
};
TrainSettings train_settings(TrainMode mode, const path& config,
                             std::optional<std::uint64_t> seed, bool online = false);

struct JudgeOptions {
  path model_a;
  path model_b;
  path prompts;
  path vocab;
  path out;
  ScorerConfig scorer;
  int max_len = 16;
  double temperature = 0.7;  // 0 decodes greedily
  std::uint64_t seed = 0;
};
// Draws one completion per model and prompt, scores both with the scorer and
// records one verdict per prompt.
void cmd_judge(const JudgeOptions& o);

struct EvalOptions {
  path verdicts;
  std::string model_a;
  std::string model_b;
  int resamples = 1000;
  std::uint64_t seed = 0;
  path out;
};
void cmd_eval(const EvalOptions& o);

struct ReportOptions {
  path scores;
  std::string baseline;
  path out;
};
void cmd_report(const ReportOptions& o);

struct PipelineOptions {
  path config;
  std::optional<std::uint64_t> seed;
};

struct StageOutcome {
  std::string name;
  bool skipped = false;
};
std::vector<StageOutcome> cmd_pipeline(const PipelineOptions& o);

// Keys accepted by pipeline configs, for documentation and validation.
std::vector<std::string> pipeline_config_keys();

}  // namespace crosspref::cli
