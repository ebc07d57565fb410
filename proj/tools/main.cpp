#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "crosspref/commands.hpp"
#include "crosspref/error.hpp"
#include "crosspref/parallel.hpp"

namespace cli = crosspref::cli;

int main(int argc, char** argv) {
  CLI::App app{"crosspref: cross-lingual preference tuning laboratory"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  bool quiet = false;
  app.add_option("--seed", seed, "Master seed (overrides config and CROCO_SEED)");
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", quiet, "Suppress progress output");

  std::function<void()> action;

  cli::SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "Write the bundled synthetic corpus and vocabulary");
  c_synth->add_option("--out-dir", synth.out_dir, "Output directory");
  c_synth->add_option("--langs", synth.langs, "Toy language tags")->delimiter(',');
  c_synth->add_option("--prompts", synth.n_prompts, "Parallel prompt ids");
  c_synth->add_option("--prompt-len", synth.prompt_len, "Question words per prompt");
  c_synth->add_option("--vocab-size", synth.vocab_size, "Vocabulary budget");
  c_synth->callback([&] {
    synth.seed = seed.value_or(0);
    action = [&] { cli::cmd_synth(synth); };
  });

  cli::InitModelOptions init;
  auto* c_init = app.add_subcommand("init-model", "Write a randomly initialised toy policy");
  c_init->add_option("--vocab", init.vocab, "vocab.json")->required();
  c_init->add_option("--out", init.out, "Checkpoint path")->required();
  c_init->add_option("--id", init.id, "Model id");
  c_init->add_option("--embed-dim", init.embed_dim);
  c_init->add_option("--hidden-dim", init.hidden_dim);
  c_init->add_option("--context", init.context);
  c_init->add_option("--init-scale", init.init_scale);
  c_init->callback([&] {
    init.seed = seed.value_or(0);
    action = [&] { cli::cmd_init_model(init); };
  });

  cli::SampleOptions samp;
  bool low_temp = false;
  auto* c_sample = app.add_subcommand("sample", "Sample K completions per prompt");
  c_sample->add_option("--model", samp.model, "Checkpoint")->required();
  c_sample->add_option("--prompts", samp.prompts, "prompts.jsonl")->required();
  c_sample->add_option("--vocab", samp.vocab, "vocab.json")->required();
  c_sample->add_option("--out", samp.out, "generations.jsonl")->required();
  c_sample->add_option("--k", samp.k, "Completions per prompt");
  auto* t_opt = c_sample->add_option("--temperature", samp.temperature, "Sampling temperature");
  c_sample->add_flag("--low-temp", low_temp, "Use the low-temperature preset (0.1)")
      ->excludes(t_opt);
  c_sample->add_option("--max-len", samp.max_len, "Maximum completion tokens");
  c_sample->callback([&] {
    samp.seed = seed.value_or(0);
    if (low_temp) samp.temperature = cli::kLowTemperature;
    action = [&] { cli::cmd_sample(samp); };
  });

  cli::ScoreOptions score;
  auto* c_score = app.add_subcommand("score", "Fill rewards with a scorer");
  c_score->add_option("--generations", score.generations, "generations.jsonl")->required();
  c_score->add_option("--prompts", score.prompts, "prompts.jsonl")->required();
  c_score->add_option("--out", score.out, "Scored generations.jsonl")->required();
  c_score->add_option("--scorer", score.scorer.name, "overlap or length_bias");
  c_score->add_option("--noise-sigma", score.scorer.noise_sigma);
  c_score->add_option("--alpha", score.scorer.alpha, "length_bias reward per token");
  c_score->add_flag("--force", score.force, "Overwrite existing rewards");
  c_score->callback([&] {
    score.scorer.seed = seed.value_or(0);
    action = [&] { cli::cmd_score(score); };
  });

  cli::StatsOptions stats;
  auto* c_stats = app.add_subcommand("stats", "Per-language reward summaries and region samples");
  c_stats->add_option("--generations", stats.generations, "Scored generations.jsonl")->required();
  c_stats->add_option("--prompts", stats.prompts, "prompts.jsonl")->required();
  c_stats->add_option("--out-dir", stats.out_dir, "Directory for stats.json and regions.jsonl");
  c_stats->add_option("--langs", stats.langs, "Languages that must be present")->delimiter(',');
  c_stats->callback([&] { action = [&] { cli::cmd_stats(stats); }; });

  cli::BuildPairsOptions bp;
  std::string strategy = "paired", regime = "multi", target = "mu2sig", variant = "chosen";
  auto* c_bp = app.add_subcommand("build-pairs", "Build preference pairs or SFT records");
  c_bp->add_option("--generations", bp.generations, "Scored generations.jsonl");
  c_bp->add_option("--prompts", bp.prompts, "prompts.jsonl")->required();
  c_bp->add_option("--out", bp.out, "Output JSONL")->required();
  c_bp->add_option("--report", bp.report, "Report JSON (default <out>.report.json)");
  c_bp->add_option("--strategy", strategy, "paired | max_r | in_lang | all_lang");
  c_bp->add_option("--regime", regime, "mono | multi");
  c_bp->add_option("--lang", bp.lang, "Language for mono / in_lang");
  c_bp->add_option("--rejected-target", target, "mu2sig | mu1sig | q1 | q2 | q3 | min");
  c_bp->add_option("--variant,--prompt-lang", variant, "chosen | mixed | rejected");
  c_bp->add_option("--policy-id", bp.policy_id, "Policy id for provenance tagging");
  c_bp->callback([&] {
    bp.seed = seed.value_or(0);
    action = [&] {
      bp.strategy = crosspref::parse_strategy(strategy);
      bp.regime = crosspref::parse_regime(regime);
      bp.rejected_target = crosspref::parse_rejected_target(target);
      bp.variant = crosspref::parse_prompt_lang_variant(variant);
      if (bp.strategy != crosspref::Strategy::kInLang &&
          bp.strategy != crosspref::Strategy::kAllLang && bp.generations.empty()) {
        throw crosspref::UsageError("--generations is required for this strategy");
      }
      cli::cmd_build_pairs(bp);
    };
  });

  cli::TrainOptions tr;
  std::string mode = "dpo";
  auto* c_train = app.add_subcommand("train", "SFT, offline DPO or online DPO");
  c_train->add_option("--mode", mode, "sft | dpo");
  c_train->add_flag("--online", tr.online, "Online DPO with a live scorer");
  c_train->add_option("--pairs,--data", tr.data, "Pairs (dpo) or SFT records (sft)");
  c_train->add_option("--prompts", tr.prompts, "prompts.jsonl (online)");
  c_train->add_option("--model", tr.model, "Initial checkpoint")->required();
  c_train->add_option("--vocab", tr.vocab, "vocab.json")->required();
  c_train->add_option("--config", tr.config, "Training config file");
  c_train->add_option("--metrics", tr.metrics, "metrics.csv");
  c_train->add_option("--out", tr.out, "Output checkpoint")->required();
  c_train->add_option("--id", tr.id, "Output model id");
  c_train->callback([&] {
    tr.seed = seed;
    action = [&] {
      tr.mode = crosspref::parse_train_mode(mode);
      cli::cmd_train(tr);
    };
  });

  cli::JudgeOptions judge;
  auto* c_judge = app.add_subcommand("judge", "Scorer-as-judge verdicts between two models");
  c_judge->add_option("--model-a", judge.model_a, "Checkpoint A")->required();
  c_judge->add_option("--model-b", judge.model_b, "Checkpoint B")->required();
  c_judge->add_option("--prompts", judge.prompts, "prompts.jsonl")->required();
  c_judge->add_option("--vocab", judge.vocab, "vocab.json")->required();
  c_judge->add_option("--out", judge.out, "verdicts.jsonl")->required();
  c_judge->add_option("--scorer", judge.scorer.name);
  c_judge->add_option("--noise-sigma", judge.scorer.noise_sigma);
  c_judge->add_option("--alpha", judge.scorer.alpha);
  c_judge->add_option("--max-len", judge.max_len);
  c_judge->add_option("--temperature", judge.temperature, "Sampling temperature (0 = greedy)");
  c_judge->callback([&] {
    judge.scorer.seed = seed.value_or(0);
    judge.seed = seed.value_or(0);
    action = [&] { cli::cmd_judge(judge); };
  });

  cli::EvalOptions ev;
  auto* c_eval = app.add_subcommand("eval", "Win rates with bootstrap uncertainty");
  c_eval->add_option("--verdicts", ev.verdicts, "verdicts.jsonl")->required();
  c_eval->add_option("--model-a", ev.model_a)->required();
  c_eval->add_option("--model-b", ev.model_b)->required();
  c_eval->add_option("--resamples", ev.resamples);
  c_eval->add_option("--out", ev.out, "result.json")->required();
  c_eval->callback([&] {
    ev.seed = seed.value_or(0);
    action = [&] { cli::cmd_eval(ev); };
  });

  cli::ReportOptions rep;
  auto* c_report = app.add_subcommand("report", "Difference-from-baseline score table");
  c_report->add_option("--scores", rep.scores, "scores.csv")->required();
  c_report->add_option("--baseline", rep.baseline)->required();
  c_report->add_option("--out", rep.out, "table.csv")->required();
  c_report->callback([&] { action = [&] { cli::cmd_report(rep); }; });

  cli::PipelineOptions pipe;
  auto* c_pipe = app.add_subcommand("pipeline", "Run or resume the full pipeline");
  c_pipe->add_option("config", pipe.config, "Pipeline config file")->required();
  c_pipe->callback([&] {
    pipe.seed = seed;
    action = [&] { cli::cmd_pipeline(pipe); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    crosspref::set_thread_count(threads);
    cli::set_quiet(quiet);
    action();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::exit_code_for(e);
  }
  return 0;
}
