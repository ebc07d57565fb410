#pragma once

// Pairwise win rates from judge verdicts: plain and length-controlled rates,
// bootstrap uncertainty, breakdowns, and difference-from-baseline tables.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crosspref/corpus.hpp"

namespace crosspref {

// 1 for a win, 0.5 for a tie, 0 for a loss, seen from `perspective`, which
// must be one of the verdict's two models.
double outcome_score(const VerdictRecord& v, std::string_view perspective);

// Mean outcome score. Throws DataError on an empty list.
double win_rate(std::span<const VerdictRecord> verdicts, std::string_view perspective);

struct LcFit {
  double lc_win_rate = 0.0;
  double intercept = 0.0;
  double length_coef = 0.0;  // per standardized length difference
  double length_scale = 0.0;  // std of the raw length differences
  int iterations = 0;
  bool degenerate = false;  // fell back to the plain win rate
};

// Logistic regression of the outcome score (ties as 0.5) on an intercept and
// the length difference (perspective minus opponent) divided by its standard
// deviation, fit by Newton/IRLS with a 1e-6 ridge on the length coefficient.
// The length-controlled rate is sigmoid(intercept): the predicted win
// probability at equal lengths. With no length variation, or identical
// outcomes, the plain win rate is returned and `degenerate` reports the
// fallback for the latter.
LcFit fit_lc(std::span<const VerdictRecord> verdicts, std::string_view perspective);
double lc_win_rate(std::span<const VerdictRecord> verdicts, std::string_view perspective);

enum class Statistic { kWinRate, kLcWinRate };

// Standard deviation of the statistic over `resamples` bootstrap replicates
// drawn with replacement at the prompt level. Verdicts are canonically
// sorted first, and replicate r uses its own substream of `seed`, so the
// result ignores input order and worker count.
double bootstrap_std(std::span<const VerdictRecord> verdicts, std::string_view perspective,
                     Statistic statistic, int resamples, std::uint64_t seed);

struct RateCell {
  double win_rate = 0.0;
  double lc_win_rate = 0.0;
  std::size_t n = 0;
};

struct WinRateResult {
  std::string model_a;
  std::string model_b;
  std::size_t n = 0;
  double win_rate = 0.0;  // from model_a's perspective
  double lc_win_rate = 0.0;
  bool lc_degenerate = false;
  double bootstrap_std = 0.0;  // of the plain win rate
  double lc_bootstrap_std = 0.0;
  int resamples = 0;
  std::map<std::string, RateCell> by_category;
  std::map<std::string, RateCell> by_lang;
};

// Uses the verdicts between the two models, in either orientation.
WinRateResult evaluate(std::span<const VerdictRecord> verdicts, const std::string& model_a,
                       const std::string& model_b, int resamples, std::uint64_t seed);

std::string result_to_json(const WinRateResult& r);

// (language, dataset) -> score.
using ScoreKey = std::pair<std::string, std::string>;
using ScoreMap = std::map<ScoreKey, double>;

struct ScoreRow {
  std::string lang;
  std::string dataset;  // "Avg." for the per-language average row
  double baseline = 0.0;
  std::map<std::string, double> deltas;  // config -> score - baseline
};

struct ScoreTable {
  std::vector<std::string> configs;
  std::vector<ScoreRow> rows;  // per language: datasets in order, then "Avg."
};

inline constexpr std::string_view kAverageRow = "Avg.";

// Per-row differences from the baseline. Every config must cover exactly the
// baseline's keys (DataError naming the first mismatch). Average rows are
// unweighted dataset means.
ScoreTable delta_table(const ScoreMap& baseline, const std::map<std::string, ScoreMap>& configs);

// Long-format scores.csv: lang,dataset,model,score.
std::map<std::string, ScoreMap> load_scores_csv(const std::filesystem::path& path);
// lang,dataset,baseline,<config deltas...>
std::string score_table_csv(const ScoreTable& table);

}  // namespace crosspref
