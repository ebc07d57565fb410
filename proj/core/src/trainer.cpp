#include "crosspref/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>

#include "crosspref/digest.hpp"
#include "crosspref/error.hpp"
#include "crosspref/parallel.hpp"
#include "crosspref/random.hpp"
#include "crosspref/rewardstats.hpp"

namespace crosspref {

std::string_view to_string(TrainMode m) { return m == TrainMode::kSft ? "sft" : "dpo"; }

TrainMode parse_train_mode(std::string_view s) {
  if (s == "sft") return TrainMode::kSft;
  if (s == "dpo") return TrainMode::kDpo;
  throw UsageError("unknown training mode '" + std::string(s) + "' (expected sft or dpo)");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw UsageError("learning_rate must be finite and nonnegative");
  }
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  if (global_batch < 1 || microbatch < 1) throw UsageError("batch sizes must be >= 1");
  if (global_batch % microbatch != 0) {
    throw UsageError("microbatch (" + std::to_string(microbatch) +
                     ") must divide global_batch (" + std::to_string(global_batch) + ")");
  }
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw UsageError("warmup_fraction must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw UsageError("weight_decay must be nonnegative");
  if (mode == TrainMode::kDpo && !(beta > 0.0)) throw UsageError("beta must be positive for DPO");
  if (schedule != "cosine" && schedule != "constant") {
    throw UsageError("unknown schedule '" + schedule + "' (expected cosine or constant)");
  }
  if (max_seq < 2) throw UsageError("max_seq must be >= 2");
}

TrainConfig default_config(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = 1;
  c.global_batch = 64;
  c.microbatch = 64;
  c.schedule = "cosine";
  c.warmup_fraction = 0.05;
  c.weight_decay = 1e-2;
  c.max_seq = 4096;
  if (mode == TrainMode::kSft) {
    c.learning_rate = 2e-4;
    c.beta = 0.0;
  } else {
    c.learning_rate = 5e-6;
    c.beta = 0.1;
  }
  return c;
}

TrainConfig toy_config(TrainMode mode) {
  TrainConfig c = default_config(mode);
  // Plain SGD on a few thousand dense parameters needs far larger steps
  // than adapter training at billion-parameter scale. Decay is rescaled so
  // the per-step shrink lr * weight_decay stays what it was.
  const double shrink = c.learning_rate * c.weight_decay;
  c.learning_rate = mode == TrainMode::kSft ? 1.5 : 2.0;
  c.weight_decay = shrink / c.learning_rate;
  c.global_batch = 16;
  c.microbatch = 4;
  c.max_seq = 64;
  return c;
}

TrainConfig toy_online_config() {
  TrainConfig c = toy_config(TrainMode::kDpo);
  const double shrink = c.learning_rate * c.weight_decay;
  c.learning_rate = 1.0;
  c.weight_decay = shrink / c.learning_rate;
  c.schedule = "constant";
  return c;
}

// ------------------------------------------------------------------- losses

double per_token_mean(std::span<const std::vector<double>> token_losses) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& seq : token_losses) {
    for (double v : seq) sum += v;
    n += seq.size();
  }
  if (n == 0) throw DataError("no completion tokens to average");
  return sum / static_cast<double>(n);
}

double mean_of_group_means(std::span<const std::vector<double>> token_losses) {
  if (token_losses.empty()) throw DataError("no groups to average");
  double acc = 0.0;
  for (const auto& seq : token_losses) {
    if (seq.empty()) throw DataError("empty group");
    acc += std::accumulate(seq.begin(), seq.end(), 0.0) / static_cast<double>(seq.size());
  }
  return acc / static_cast<double>(token_losses.size());
}

LossAndGrad sft_loss(const ToyPolicy& policy, std::span<const SftExample> batch,
                     std::span<const std::size_t> microbatches) {
  if (batch.empty()) throw DataError("empty SFT batch");
  std::size_t tokens = 0;
  for (const auto& ex : batch) tokens += ex.completion.size();
  if (tokens == 0) throw DataError("SFT batch has no completion tokens");

  std::vector<std::size_t> parts(microbatches.begin(), microbatches.end());
  if (parts.empty()) parts.push_back(batch.size());
  if (std::accumulate(parts.begin(), parts.end(), std::size_t{0}) != batch.size()) {
    throw UsageError("microbatch sizes do not sum to the batch size");
  }

  const double inv_tokens = 1.0 / static_cast<double>(tokens);
  LossAndGrad out{0.0, Params::zeros(policy.shape())};
  std::size_t begin = 0;
  for (auto size : parts) {
    // Each microbatch is normalised by the global token count, never its own.
    std::vector<double> seq_nll(size);
    std::vector<Params> seq_grad(size, Params::zeros(policy.shape()));
    parallel_for(size, [&](std::size_t j) {
      const auto& ex = batch[begin + j];
      if (ex.completion.empty()) return;
      seq_nll[j] = -accumulate_log_prob_grad(policy, ex.prompt, ex.completion, -inv_tokens,
                                             seq_grad[j]);
    });
    double micro_loss = 0.0;
    Params micro_grad = Params::zeros(policy.shape());
    for (std::size_t j = 0; j < size; ++j) {
      micro_loss += seq_nll[j] * inv_tokens;
      micro_grad += seq_grad[j];
    }
    out.loss += micro_loss;
    out.grad += micro_grad;
    begin += size;
  }
  return out;
}

double dpo_loss_value(double margin) {
  // softplus(-m) = max(-m, 0) + log1p(exp(-|m|))
  return std::max(-margin, 0.0) + std::log1p(std::exp(-std::abs(margin)));
}

double dpo_margin(double beta, double policy_chosen, double ref_chosen, double policy_rejected,
                  double ref_rejected) {
  return beta * ((policy_chosen - ref_chosen) - (policy_rejected - ref_rejected));
}

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_item(const DpoBatchItem& item) {
  if (!std::isfinite(item.ref_chosen) || !std::isfinite(item.ref_rejected)) {
    throw NumericError("non-finite reference log-prob");
  }
}

}  // namespace

DpoLoss dpo_loss(const ToyPolicy& policy, const DpoBatchItem& item, double beta) {
  if (!(beta > 0.0)) throw UsageError("beta must be positive");
  check_item(item);
  const double lc = log_prob(policy, item.prompt, item.chosen);
  const double lr = log_prob(policy, item.prompt, item.rejected);
  if (!std::isfinite(lc) || !std::isfinite(lr)) throw NumericError("non-finite policy log-prob");
  DpoLoss out;
  out.margin = dpo_margin(beta, lc, item.ref_chosen, lr, item.ref_rejected);
  out.loss = dpo_loss_value(out.margin);
  // dL/dmargin = -sigmoid(-margin); dmargin/dtheta = beta (grad lc - grad lr)
  const double coef = -beta * sigmoid(-out.margin);
  out.grad = Params::zeros(policy.shape());
  accumulate_log_prob_grad(policy, item.prompt, item.chosen, coef, out.grad);
  accumulate_log_prob_grad(policy, item.prompt, item.rejected, -coef, out.grad);
  return out;
}

void cache_reference_logps(const ToyPolicy& reference, std::span<DpoBatchItem> items) {
  parallel_for(items.size(), [&](std::size_t i) {
    items[i].ref_chosen = log_prob(reference, items[i].prompt, items[i].chosen);
    items[i].ref_rejected = log_prob(reference, items[i].prompt, items[i].rejected);
  });
}

// ----------------------------------------------------------------- schedule

int warmup_steps(int total_steps, double warmup_fraction) {
  return static_cast<int>(std::lround(warmup_fraction * total_steps));
}

double lr_at(int step, int total_steps, double peak, double warmup_fraction,
             std::string_view schedule) {
  const int warm = warmup_steps(total_steps, warmup_fraction);
  if (step < warm) return peak * static_cast<double>(step) / static_cast<double>(warm);
  if (schedule == "constant") return peak;
  const int decay = total_steps - 1 - warm;
  if (decay <= 0) return peak;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(decay);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

// --------------------------------------------------------------------- loop

namespace {

void sgd_update(Params& params, const Params& grad, double lr, double weight_decay) {
  params *= 1.0 - lr * weight_decay;
  params.axpy(-lr, grad);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_stream(seed, {0x65706f6368ULL, static_cast<std::uint64_t>(epoch)});
  for (std::size_t i = n; i > 1; --i) {
    auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  return order;
}

std::vector<std::size_t> microbatch_sizes(std::size_t batch, int micro) {
  std::vector<std::size_t> parts;
  for (std::size_t done = 0; done < batch;) {
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(micro), batch - done);
    parts.push_back(take);
    done += take;
  }
  return parts;
}

struct DpoStep {
  double loss = 0.0;
  double mean_margin = 0.0;
  double accuracy = 0.0;
  Params grad;
};

// Mean DPO loss and gradient over a batch, reduced in index order.
DpoStep dpo_batch(const ToyPolicy& policy, std::span<const DpoBatchItem* const> batch,
                  double beta) {
  std::vector<std::optional<DpoLoss>> slots(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { slots[i] = dpo_loss(policy, *batch[i], beta); });
  DpoStep out{0.0, 0.0, 0.0, Params::zeros(policy.shape())};
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& s : slots) {
    out.loss += s->loss * inv;
    out.mean_margin += s->margin * inv;
    out.accuracy += (s->margin > 0.0 ? 1.0 : 0.0) * inv;
    out.grad.axpy(inv, s->grad);
  }
  return out;
}

void check_loss(double loss, int step) {
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite loss at step " + std::to_string(step));
  }
}

// Keeps prompt + completion (plus <bos>) within max_seq by cutting the
// completion tail; at least one completion token always survives.
std::vector<TokenId> clip_completion(std::span<const TokenId> prompt,
                                     std::span<const TokenId> completion, int max_seq) {
  const auto room = static_cast<std::ptrdiff_t>(max_seq) - 1 -
                    static_cast<std::ptrdiff_t>(prompt.size());
  const auto keep = std::min<std::size_t>(completion.size(),
                                          static_cast<std::size_t>(std::max<std::ptrdiff_t>(room, 1)));
  return {completion.begin(), completion.begin() + static_cast<std::ptrdiff_t>(keep)};
}

int total_steps_for(std::size_t n, const TrainConfig& cfg) {
  const auto per_epoch = (n + static_cast<std::size_t>(cfg.global_batch) - 1) /
                         static_cast<std::size_t>(cfg.global_batch);
  return static_cast<int>(per_epoch) * cfg.epochs;
}

}  // namespace

TrainResult train(ToyPolicy policy, std::span<const SftExample> data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw DataError("empty SFT dataset");
  const int total = total_steps_for(data.size(), cfg);
  TrainResult out{std::move(policy), {}};
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(data.size(), cfg.seed, epoch);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.global_batch)) {
      const auto end = std::min(order.size(), b + static_cast<std::size_t>(cfg.global_batch));
      std::vector<SftExample> batch;
      for (auto i = b; i < end; ++i) {
        const auto& ex = data[order[i]];
        batch.push_back({ex.prompt, clip_completion(ex.prompt, ex.completion, cfg.max_seq)});
      }
      const auto parts = microbatch_sizes(batch.size(), cfg.microbatch);
      auto lg = sft_loss(out.policy, batch, parts);
      check_loss(lg.loss, step);
      StepMetrics m;
      m.step = step;
      m.loss = lg.loss;
      m.lr = lr_at(step, total, cfg.learning_rate, cfg.warmup_fraction, cfg.schedule);
      m.grad_norm = std::sqrt(lg.grad.squared_norm());
      m.pairs = static_cast<int>(batch.size());
      sgd_update(out.policy.params(), lg.grad, m.lr, cfg.weight_decay);
      out.steps.push_back(m);
      ++step;
    }
  }
  return out;
}

TrainResult train(ToyPolicy policy, std::span<const DpoBatchItem> data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw DataError("empty DPO dataset");
  std::vector<DpoBatchItem> items(data.begin(), data.end());
  for (auto& it : items) {
    it.chosen = clip_completion(it.prompt, it.chosen, cfg.max_seq);
    it.rejected = clip_completion(it.prompt, it.rejected, cfg.max_seq);
  }
  cache_reference_logps(freeze_reference(policy), items);

  const int total = total_steps_for(items.size(), cfg);
  TrainResult out{std::move(policy), {}};
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(items.size(), cfg.seed, epoch);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.global_batch)) {
      const auto end = std::min(order.size(), b + static_cast<std::size_t>(cfg.global_batch));
      std::vector<const DpoBatchItem*> batch;
      for (auto i = b; i < end; ++i) batch.push_back(&items[order[i]]);
      auto st = dpo_batch(out.policy, batch, cfg.beta);
      check_loss(st.loss, step);
      StepMetrics m;
      m.step = step;
      m.loss = st.loss;
      m.mean_margin = st.mean_margin;
      m.implicit_accuracy = st.accuracy;
      m.lr = lr_at(step, total, cfg.learning_rate, cfg.warmup_fraction, cfg.schedule);
      m.grad_norm = std::sqrt(st.grad.squared_norm());
      m.pairs = static_cast<int>(batch.size());
      sgd_update(out.policy.params(), st.grad, m.lr, cfg.weight_decay);
      out.steps.push_back(m);
      ++step;
    }
  }
  return out;
}

DpoEvaluation evaluate_dpo(const ToyPolicy& policy, std::span<const DpoBatchItem> items,
                           double beta) {
  if (items.empty()) throw DataError("no pairs to evaluate");
  std::vector<double> margins(items.size());
  parallel_for(items.size(), [&](std::size_t i) {
    const auto& it = items[i];
    margins[i] = dpo_margin(beta, log_prob(policy, it.prompt, it.chosen), it.ref_chosen,
                            log_prob(policy, it.prompt, it.rejected), it.ref_rejected);
  });
  DpoEvaluation ev;
  const double inv = 1.0 / static_cast<double>(items.size());
  for (double m : margins) {
    ev.loss += dpo_loss_value(m) * inv;
    ev.mean_margin += m * inv;
    ev.implicit_accuracy += (m > 0.0 ? 1.0 : 0.0) * inv;
  }
  return ev;
}

// ------------------------------------------------------------------- online

TrainResult online_dpo_loop(ToyPolicy policy, std::span<const Prompt> prompts, const Vocab& vocab,
                            const RewardScorer& scorer, const TrainConfig& cfg,
                            const OnlineConfig& online) {
  cfg.validate();
  if (online.k < 2) throw UsageError("online DPO needs k >= 2");
  if (online.prompts_per_step < 1 || online.steps < 1) {
    throw UsageError("online DPO needs positive steps and prompts_per_step");
  }
  if (prompts.empty()) throw DataError("online DPO needs prompts");

  std::vector<std::vector<TokenId>> prompt_tokens;
  prompt_tokens.reserve(prompts.size());
  for (const auto& p : prompts) prompt_tokens.push_back(vocab.encode(p.text));

  // The reference stays the initial policy for the whole run.
  const ToyPolicy reference = freeze_reference(policy);
  TrainResult out{std::move(policy), {}};
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  int epoch = 0;

  for (int step = 0; step < online.steps; ++step) {
    std::vector<std::size_t> chosen_prompts;
    for (int j = 0; j < online.prompts_per_step; ++j) {
      if (cursor == order.size()) {
        order = epoch_order(prompts.size(), cfg.seed, epoch++);
        cursor = 0;
      }
      chosen_prompts.push_back(order[cursor++]);
    }

    struct Slot {
      std::optional<DpoBatchItem> item;
      double len_sum = 0.0;
      double reward_sum = 0.0;
    };
    std::vector<Slot> slots(chosen_prompts.size());
    const SamplerConfig sampler{online.temperature, online.k, online.max_len, cfg.seed};
    parallel_for(chosen_prompts.size(), [&](std::size_t j) {
      const auto pi = chosen_prompts[j];
      const auto& prompt = prompts[pi];
      const auto stream = (static_cast<std::uint64_t>(step) << 32) | static_cast<std::uint64_t>(j);
      const auto samples = sample(out.policy, prompt_tokens[pi], sampler, stream);
      std::vector<double> rewards;
      rewards.reserve(samples.size());
      auto& slot = slots[j];
      for (const auto& s : samples) {
        Response r{prompt.id, prompt.lang, vocab.decode(s), s, std::nullopt, out.policy.id()};
        rewards.push_back(scorer.score(prompt, r));
        slot.len_sum += static_cast<double>(completion_length(s));
        slot.reward_sum += rewards.back();
      }
      const auto pick = select_rejected_quantile(rewards, online.rejected_target);
      if (!pick) return;
      const auto c = select_chosen(rewards);
      if (rewards[c] - rewards[pick.index] < kMinMargin) return;
      DpoBatchItem item{prompt_tokens[pi], samples[c], samples[pick.index], 0.0, 0.0};
      item.ref_chosen = log_prob(reference, item.prompt, item.chosen);
      item.ref_rejected = log_prob(reference, item.prompt, item.rejected);
      slot.item = std::move(item);
    });

    StepMetrics m;
    m.step = step;
    m.lr = lr_at(step, online.steps, cfg.learning_rate, cfg.warmup_fraction, cfg.schedule);
    double samples_seen = 0.0;
    std::vector<const DpoBatchItem*> batch;
    for (const auto& s : slots) {
      m.mean_len += s.len_sum;
      m.mean_reward += s.reward_sum;
      samples_seen += online.k;
      if (s.item) batch.push_back(&*s.item);
    }
    m.mean_len /= samples_seen;
    m.mean_reward /= samples_seen;
    m.pairs = static_cast<int>(batch.size());
    if (!batch.empty()) {
      auto st = dpo_batch(out.policy, batch, cfg.beta);
      check_loss(st.loss, step);
      m.loss = st.loss;
      m.mean_margin = st.mean_margin;
      m.implicit_accuracy = st.accuracy;
      m.grad_norm = std::sqrt(st.grad.squared_norm());
      sgd_update(out.policy.params(), st.grad, m.lr, cfg.weight_decay);
    }
    out.steps.push_back(m);
  }
  return out;
}

// ------------------------------------------------------------------ helpers

std::string metrics_csv(std::span<const StepMetrics> steps) {
  std::ostringstream os;
  os.precision(17);
  os << "step,loss,mean_margin,implicit_accuracy,lr,grad_norm,mean_len,mean_reward\n";
  for (const auto& m : steps) {
    os << m.step << ',' << m.loss << ',' << m.mean_margin << ',' << m.implicit_accuracy << ','
       << m.lr << ',' << m.grad_norm << ',' << m.mean_len << ',' << m.mean_reward << '\n';
  }
  return os.str();
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const StepMetrics> steps) {
  write_file_atomic(path, metrics_csv(steps));
}

namespace {

std::vector<TokenId> with_eos(std::vector<TokenId> ids) {
  if (ids.empty() || ids.back() != kEos) ids.push_back(kEos);
  return ids;
}

}  // namespace

std::vector<SftExample> to_sft_examples(std::span<const SftRecord> records, const Vocab& vocab) {
  std::vector<SftExample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    SftExample ex;
    ex.prompt = vocab.encode(r.prompt.text);
    ex.completion = r.token_ids.empty() ? with_eos(vocab.encode(r.completion)) : r.token_ids;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<DpoBatchItem> to_dpo_items(std::span<const PreferencePair> pairs, const Vocab& vocab) {
  std::vector<DpoBatchItem> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    check_decodes(vocab, p.chosen);
    check_decodes(vocab, p.rejected);
    if (p.chosen.token_ids.empty() || p.rejected.token_ids.empty()) {
      throw DataError("pair for prompt '" + p.prompt.id + "' has an empty response");
    }
    out.push_back({vocab.encode(p.prompt.text), p.chosen.token_ids, p.rejected.token_ids, 0.0, 0.0});
  }
  return out;
}

}  // namespace crosspref
