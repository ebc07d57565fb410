#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "crosspref/error.hpp"
#include "crosspref/parallel.hpp"
#include "crosspref/random.hpp"
#include "crosspref/trainer.hpp"
#include "helpers.hpp"

using namespace crosspref;

namespace {

ModelShape shape() { return {10, 3, 6, 3}; }

std::vector<SftExample> random_sft(std::size_t n, std::uint64_t seed) {
  auto rng = make_stream(seed);
  std::uniform_int_distribution<TokenId> tok(3, 9);
  std::uniform_int_distribution<int> len(1, 6);
  std::vector<SftExample> out(n);
  for (auto& e : out) {
    e.prompt.resize(static_cast<std::size_t>(len(rng)));
    for (auto& t : e.prompt) t = tok(rng);
    e.completion.resize(static_cast<std::size_t>(len(rng)));
    for (auto& t : e.completion) t = tok(rng);
    e.completion.push_back(kEos);
  }
  return out;
}

std::vector<DpoBatchItem> random_pairs(std::size_t n, std::uint64_t seed) {
  const auto sft = random_sft(2 * n, seed);
  std::vector<DpoBatchItem> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].prompt = sft[2 * i].prompt;
    out[i].chosen = sft[2 * i].completion;
    out[i].rejected = sft[2 * i + 1].completion;
  }
  return out;
}

class ConstantScorer : public RewardScorer {
 public:
  std::string_view name() const override { return "constant"; }
  double score(const Prompt&, const Response&) const override { return 1.0; }
};

double max_abs_diff(const Params& a, const Params& b) {
  const auto x = a.flatten(), y = b.flatten();
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

}  // namespace

TEST(Aggregation, PerTokenMeanVersusMeanOfMeans) {
  const std::vector<std::vector<double>> batch = {{1, 1}, {4, 4, 4, 4}};
  EXPECT_DOUBLE_EQ(per_token_mean(batch), 3.0);
  EXPECT_DOUBLE_EQ(mean_of_group_means(batch), 2.5);
  const std::vector<std::vector<double>> single = {{2, 2}};
  EXPECT_DOUBLE_EQ(per_token_mean(single), 2.0);
  const std::vector<std::vector<double>> none = {{}, {}};
  EXPECT_THROW(per_token_mean(none), DataError);
}

TEST(SftLoss, PartitionInvariant) {
  const auto p = ToyPolicy::random("p", shape(), 1, 0.6);
  const auto batch = random_sft(16, 2);
  const auto whole = sft_loss(p, batch);
  const std::vector<std::size_t> halves = {8, 8};
  const std::vector<std::size_t> uneven = {1, 5, 10};
  for (const auto& parts : {halves, uneven}) {
    const auto split = sft_loss(p, batch, parts);
    EXPECT_LE(std::abs(split.loss - whole.loss), 1e-12);
    EXPECT_LE(max_abs_diff(split.grad, whole.grad), 1e-12);
  }
  const std::vector<std::size_t> wrong = {8, 7};
  EXPECT_THROW(sft_loss(p, batch, wrong), UsageError);
  EXPECT_THROW(sft_loss(p, std::span<const SftExample>{}), DataError);
}

TEST(SftLoss, MatchesTokenMeanOfLogProbs) {
  const auto p = ToyPolicy::random("p", shape(), 3, 0.6);
  const auto batch = random_sft(5, 4);
  double nll = 0.0;
  double tokens = 0.0;
  for (const auto& e : batch) {
    nll -= log_prob(p, e.prompt, e.completion);
    tokens += static_cast<double>(e.completion.size());
  }
  EXPECT_NEAR(sft_loss(p, batch).loss, nll / tokens, 1e-12);
}

TEST(DpoLoss, AnalyticValues) {
  const auto p = ToyPolicy::random("p", shape(), 5, 0.6);
  auto items = random_pairs(4, 6);
  cache_reference_logps(freeze_reference(p), items);
  for (const auto& it : items) {
    const auto l = dpo_loss(p, it, 0.1);
    EXPECT_NEAR(l.loss, std::log(2.0), 1e-12);
    EXPECT_EQ(l.margin, 0.0);
  }

  const double m = dpo_margin(0.1, -1.0, -2.0, -3.0, -2.0);
  EXPECT_NEAR(m, 0.2, 1e-15);
  EXPECT_NEAR(dpo_loss_value(m), 0.598139, 1e-6);
  EXPECT_NEAR(dpo_loss_value(m), std::log1p(std::exp(-0.2)), 1e-15);

  EXPECT_NEAR(dpo_loss_value(dpo_margin(1e-12, -1.0, -9.0, -30.0, -2.0)), std::log(2.0), 1e-9);
}

TEST(DpoLoss, PositiveAndStable) {
  for (double m : {-50.0, -5.0, -0.1, 0.0, 0.1, 5.0, 30.0}) {
    EXPECT_GT(dpo_loss_value(m), 0.0) << m;
  }
  EXPECT_TRUE(std::isfinite(dpo_loss_value(-1e6)));
  EXPECT_NEAR(dpo_loss_value(-1e6), 1e6, 1e-6);
}

TEST(DpoLoss, GradientMatchesCentralDifferences) {
  for (int draw = 0; draw < 5; ++draw) {
    auto p = ToyPolicy::random("p", shape(), 40 + draw, 0.7);
    auto items = random_pairs(1, 50 + draw);
    items[0].ref_chosen = -3.0 - draw;
    items[0].ref_rejected = -2.0;
    const double beta = 0.5;
    const auto l = dpo_loss(p, items[0], beta);
    auto rng = make_stream(60 + draw);
    std::uniform_int_distribution<std::size_t> pick(0, p.params().size() - 1);
    int checked = 0;
    while (checked < 20) {
      const auto i = pick(rng);
      const double orig = p.params().flat(i);
      const double eps = 1e-5;
      p.params().flat(i) = orig + eps;
      const double up = dpo_loss(p, items[0], beta).loss;
      p.params().flat(i) = orig - eps;
      const double down = dpo_loss(p, items[0], beta).loss;
      p.params().flat(i) = orig;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = l.grad.flat(i);
      if (analytic == 0.0 && numeric == 0.0) continue;
      EXPECT_LT(std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8), 1e-4);
      ++checked;
    }
  }
}

TEST(DpoLoss, SinglePairDescent) {
  auto p = ToyPolicy::random("p", shape(), 7, 0.6);
  auto items = random_pairs(1, 8);
  cache_reference_logps(freeze_reference(p), items);
  const auto l = dpo_loss(p, items[0], 0.1);
  p.params().axpy(-1e-2, l.grad);
  EXPECT_LT(dpo_loss(p, items[0], 0.1).loss, l.loss);
}

TEST(Schedule, WarmupAndCosine) {
  EXPECT_EQ(lr_at(0, 1, 0.3, 0.0), 0.3);
  EXPECT_EQ(warmup_steps(100, 0.05), 5);
  EXPECT_DOUBLE_EQ(lr_at(5, 100, 2.0, 0.05), 2.0);
  EXPECT_LT(lr_at(2, 100, 2.0, 0.05), 2.0);
  EXPECT_NEAR(lr_at(99, 100, 2.0, 0.05), 0.0, 1e-12);
  for (int s = 0; s < 100; ++s) EXPECT_GE(lr_at(s, 100, 2.0, 0.05), 0.0);
  for (int s = 6; s < 100; ++s) EXPECT_LE(lr_at(s, 100, 2.0, 0.05), lr_at(s - 1, 100, 2.0, 0.05));
  EXPECT_EQ(lr_at(50, 100, 2.0, 0.0, "constant"), 2.0);
  for (int total : {1, 7, 19, 64, 333}) {
    EXPECT_EQ(warmup_steps(total, 0.05), static_cast<int>(std::lround(0.05 * total)));
  }
}

TEST(Config, DefaultsAndValidation) {
  const auto d = default_config(TrainMode::kDpo);
  EXPECT_EQ(d.beta, 0.1);
  EXPECT_EQ(d.learning_rate, 5e-6);
  EXPECT_EQ(d.warmup_fraction, 0.05);
  EXPECT_EQ(default_config(TrainMode::kSft).learning_rate, 2e-4);

  for (auto mode : {TrainMode::kSft, TrainMode::kDpo}) {
    const auto t = toy_config(mode);
    const auto r = default_config(mode);
    EXPECT_NEAR(t.learning_rate * t.weight_decay, r.learning_rate * r.weight_decay, 1e-18);
    EXPECT_NO_THROW(t.validate());
  }
  const auto on = toy_online_config();
  EXPECT_EQ(on.schedule, "constant");
  EXPECT_NEAR(on.learning_rate * on.weight_decay, d.learning_rate * d.weight_decay, 1e-18);

  TrainConfig c = d;
  c.microbatch = 48;
  EXPECT_THROW(c.validate(), UsageError);
  c = d;
  c.warmup_fraction = 1.0;
  EXPECT_THROW(c.validate(), UsageError);
  c = d;
  c.beta = 0.0;
  EXPECT_THROW(c.validate(), UsageError);
  c = d;
  c.schedule = "linear";
  EXPECT_THROW(c.validate(), UsageError);
  EXPECT_THROW(parse_train_mode("ppo"), UsageError);
}

TEST(Train, StepCountScheduleAndDeterminism) {
  const auto data = random_sft(37, 9);
  TrainConfig cfg = toy_config(TrainMode::kSft);
  cfg.global_batch = 8;
  cfg.microbatch = 4;
  cfg.epochs = 2;
  const auto init = ToyPolicy::random("p", shape(), 2, 0.3);
  const auto a = train(init, data, cfg);
  ASSERT_EQ(a.steps.size(), 10u);
  EXPECT_NEAR(a.steps.back().lr, 0.0, 1e-12);
  EXPECT_LT(a.steps.back().loss, a.steps.front().loss);

  set_thread_count(3);
  const auto b = train(init, data, cfg);
  set_thread_count(1);
  EXPECT_EQ(a.policy.params().flatten(), b.policy.params().flatten());
  EXPECT_EQ(metrics_csv(a.steps), metrics_csv(b.steps));
}

TEST(Train, DpoImprovesMargin) {
  auto items = random_pairs(32, 10);
  const auto init = ToyPolicy::random("p", shape(), 3, 0.3);
  TrainConfig cfg = toy_config(TrainMode::kDpo);
  cfg.global_batch = 8;
  cfg.microbatch = 8;
  cfg.epochs = 5;
  const auto r = train(init, items, cfg);
  cache_reference_logps(freeze_reference(init), items);
  const auto before = evaluate_dpo(init, items, cfg.beta);
  const auto after = evaluate_dpo(r.policy, items, cfg.beta);
  EXPECT_EQ(before.mean_margin, 0.0);
  EXPECT_GT(after.mean_margin, before.mean_margin);
  EXPECT_GT(after.implicit_accuracy, 0.8);
}

TEST(Train, NonFiniteLossAborts) {
  auto p = ToyPolicy::random("p", shape(), 3, 0.3);
  p.params().b_out(4) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg = toy_config(TrainMode::kSft);
  cfg.global_batch = 4;
  cfg.microbatch = 4;
  try {
    train(p, random_sft(8, 1), cfg);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

TEST(Online, ConstantScorerLeavesPolicyUnchanged) {
  const Vocab vocab({"<bos>", "<eos>", "<pad>", "a", "b", "c", "d", "e", "f", "g"});
  std::vector<Prompt> prompts;
  for (int i = 0; i < 6; ++i) {
    prompts.push_back({"p" + std::to_string(i), "eng", "a b", "chat", std::string("c d")});
  }
  const auto init = ToyPolicy::random("p", shape(), 4, 0.5);
  OnlineConfig on;
  on.steps = 5;
  on.prompts_per_step = 3;
  on.max_len = 6;
  const auto r = online_dpo_loop(init, prompts, vocab, ConstantScorer{}, toy_online_config(), on);
  ASSERT_EQ(r.steps.size(), 5u);
  for (const auto& m : r.steps) {
    EXPECT_EQ(m.pairs, 0);
    EXPECT_EQ(m.loss, 0.0);
    EXPECT_EQ(m.mean_reward, 1.0);
  }
  EXPECT_EQ(r.policy.params().flatten(), init.params().flatten());
}

TEST(Metrics, CsvHeader) {
  StepMetrics m;
  m.step = 3;
  const std::vector<StepMetrics> steps = {m};
  const auto csv = metrics_csv(steps);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "step,loss,mean_margin,implicit_accuracy,lr,grad_norm,mean_len,mean_reward");
}
