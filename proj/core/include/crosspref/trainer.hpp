#pragma once

// SFT and DPO objectives, the SGD training loop with warmup + cosine decay,
// and the online DPO loop.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "crosspref/corpus.hpp"
#include "crosspref/rewardstats.hpp"
#include "crosspref/scorers.hpp"
#include "crosspref/toylm.hpp"

namespace crosspref {

enum class TrainMode { kSft, kDpo };
std::string_view to_string(TrainMode m);
TrainMode parse_train_mode(std::string_view s);

struct TrainConfig {
  TrainMode mode = TrainMode::kDpo;
  double learning_rate = 1e-2;
  int epochs = 1;
  int global_batch = 64;
  int microbatch = 64;
  std::string schedule = "cosine";  // or "constant"
  double warmup_fraction = 0.05;
  double weight_decay = 1e-2;
  double beta = 0.1;
  std::uint64_t seed = 0;
  int max_seq = 4096;  // <bos> + prompt + completion; longer completions are cut

  // Throws UsageError: microbatch must divide global_batch,
  // 0 <= warmup_fraction < 1, beta > 0 for DPO, known schedule.
  void validate() const;
};

// The published large-model settings, unchanged: cosine, 5% warmup,
// weight decay 1e-2, 1 epoch, global batch 64, context 4096; SFT lr 2e-4;
// DPO lr 5e-6 and beta 0.1.
TrainConfig default_config(TrainMode mode);

// default_config recalibrated for plain SGD on the toy model: larger
// learning rate, smaller batches, and weight decay scaled down so the
// per-step shrink lr * weight_decay matches default_config.
TrainConfig toy_config(TrainMode mode);

// toy_config(kDpo) for the online loop: constant lr 1.0, one optimizer
// step per online step.
TrainConfig toy_online_config();

struct SftExample {
  std::vector<TokenId> prompt;
  std::vector<TokenId> completion;
};

struct DpoBatchItem {
  std::vector<TokenId> prompt;
  std::vector<TokenId> chosen;
  std::vector<TokenId> rejected;
  double ref_chosen = 0.0;    // log pi_ref(chosen | prompt)
  double ref_rejected = 0.0;  // log pi_ref(rejected | prompt)
};

struct StepMetrics {
  int step = 0;
  double loss = 0.0;
  double mean_margin = 0.0;        // mean implicit-reward margin
  double implicit_accuracy = 0.0;  // fraction of pairs with margin > 0
  double lr = 0.0;
  double grad_norm = 0.0;
  double mean_len = 0.0;     // online only
  double mean_reward = 0.0;  // online only
  int pairs = 0;
};

struct LossAndGrad {
  double loss = 0.0;
  Params grad;
};

// Mean over every token of every sequence (not the mean of per-sequence
// means). Throws DataError when there are no tokens.
double per_token_mean(std::span<const std::vector<double>> token_losses);

// Mean of per-group means: the aggregation that over-weights short groups.
// Kept for loss-aggregation audits.
double mean_of_group_means(std::span<const std::vector<double>> token_losses);

// Completion-only cross-entropy normalised by the completion-token count of
// the whole batch. `microbatches` lists consecutive microbatch sizes summing
// to the batch size (empty = one microbatch); every microbatch accumulates
// with the global denominator, so the result is partition-invariant.
LossAndGrad sft_loss(const ToyPolicy& policy, std::span<const SftExample> batch,
                     std::span<const std::size_t> microbatches = {});

// -log sigmoid(margin) computed as softplus(-margin).
double dpo_loss_value(double margin);

// beta * ((policy_c - ref_c) - (policy_r - ref_r)).
double dpo_margin(double beta, double policy_chosen, double ref_chosen, double policy_rejected,
                  double ref_rejected);

struct DpoLoss {
  double loss = 0.0;
  double margin = 0.0;
  Params grad;
};

// Loss and gradient for one pair against cached reference log-probs.
DpoLoss dpo_loss(const ToyPolicy& policy, const DpoBatchItem& item, double beta);

// Fills ref_chosen / ref_rejected from the reference policy.
void cache_reference_logps(const ToyPolicy& reference, std::span<DpoBatchItem> items);

int warmup_steps(int total_steps, double warmup_fraction);
// Linear warmup from 0 to peak over warmup_steps, then cosine decay to 0 at
// the final step (or a flat peak for the constant schedule).
double lr_at(int step, int total_steps, double peak, double warmup_fraction,
             std::string_view schedule = "cosine");

struct TrainResult {
  ToyPolicy policy;
  std::vector<StepMetrics> steps;
};

// epochs * ceil(N / global_batch) SGD steps with decoupled weight decay.
// Batches follow a seeded per-epoch shuffle. Throws NumericError naming the
// step on a non-finite loss.
TrainResult train(ToyPolicy policy, std::span<const SftExample> data, const TrainConfig& cfg);

// Reference log-probs come from a frozen copy of the initial policy and are
// computed once before the first step.
TrainResult train(ToyPolicy policy, std::span<const DpoBatchItem> data, const TrainConfig& cfg);

struct DpoEvaluation {
  double loss = 0.0;
  double mean_margin = 0.0;
  double implicit_accuracy = 0.0;
};
// Items must carry reference log-probs.
DpoEvaluation evaluate_dpo(const ToyPolicy& policy, std::span<const DpoBatchItem> items,
                           double beta);

struct OnlineConfig {
  int k = 16;
  int steps = 200;
  int prompts_per_step = 128;
  double temperature = 1.0;
  int max_len = 64;
  RejectedTarget rejected_target = RejectedTarget::kMuMinus2Sigma;
};

// Each step samples k completions per prompt from the current policy, scores
// them with the live scorer, builds one pair per prompt, and takes one DPO
// step against the frozen initial policy. Steps whose prompts are all
// degenerate are recorded with zero loss and leave the policy unchanged.
TrainResult online_dpo_loop(ToyPolicy policy, std::span<const Prompt> prompts, const Vocab& vocab,
                            const RewardScorer& scorer, const TrainConfig& cfg,
                            const OnlineConfig& online);

// Columns: step,loss,mean_margin,implicit_accuracy,lr,grad_norm,mean_len,mean_reward
std::string metrics_csv(std::span<const StepMetrics> steps);
void write_metrics_csv(const std::filesystem::path& path, std::span<const StepMetrics> steps);

// Tokenization helpers shared by the commands.
std::vector<SftExample> to_sft_examples(std::span<const SftRecord> records, const Vocab& vocab);
std::vector<DpoBatchItem> to_dpo_items(std::span<const PreferencePair> pairs, const Vocab& vocab);

}  // namespace crosspref
