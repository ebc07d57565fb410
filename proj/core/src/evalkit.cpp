#include "crosspref/evalkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <tuple>

#include "crosspref/error.hpp"
#include "crosspref/parallel.hpp"
#include "crosspref/random.hpp"
#include "json.hpp"

namespace crosspref {

double outcome_score(const VerdictRecord& v, std::string_view perspective) {
  const bool is_a = perspective == v.model_a;
  if (!is_a && perspective != v.model_b) {
    throw UsageError("model '" + std::string(perspective) + "' is not part of the verdict for '" +
                     v.prompt_id + "'");
  }
  switch (v.outcome) {
    case Outcome::kTie: return 0.5;
    case Outcome::kAWins: return is_a ? 1.0 : 0.0;
    case Outcome::kBWins: return is_a ? 0.0 : 1.0;
  }
  return 0.5;
}

double win_rate(std::span<const VerdictRecord> verdicts, std::string_view perspective) {
  if (verdicts.empty()) throw DataError("win rate of an empty verdict list");
  double acc = 0.0;
  for (const auto& v : verdicts) acc += outcome_score(v, perspective);
  return acc / static_cast<double>(verdicts.size());
}

namespace {

constexpr double kRidge = 1e-6;
constexpr int kMaxIterations = 100;
constexpr double kTolerance = 1e-8;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log sigmoid(x), stable for large |x|.
double log_sigmoid(double x) { return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)))); }

double length_diff(const VerdictRecord& v, std::string_view perspective) {
  const double d = static_cast<double>(v.len_a) - static_cast<double>(v.len_b);
  return perspective == v.model_a ? d : -d;
}

double penalized_loglik(const std::vector<double>& y, const std::vector<double>& x, double b0,
                        double b1) {
  double ll = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double eta = b0 + b1 * x[i];
    ll += y[i] * log_sigmoid(eta) + (1.0 - y[i]) * log_sigmoid(-eta);
  }
  return ll - 0.5 * kRidge * b1 * b1;
}

}  // namespace

LcFit fit_lc(std::span<const VerdictRecord> verdicts, std::string_view perspective) {
  LcFit fit;
  const double plain = win_rate(verdicts, perspective);
  const auto n = verdicts.size();
  std::vector<double> y(n), raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = outcome_score(verdicts[i], perspective);
    raw[i] = length_diff(verdicts[i], perspective);
  }
  double mean = 0.0;
  for (double d : raw) mean += d;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double d : raw) var += (d - mean) * (d - mean);
  fit.length_scale = std::sqrt(var / static_cast<double>(n));

  const bool identical = std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
  if (identical || fit.length_scale == 0.0) {
    fit.lc_win_rate = plain;
    fit.degenerate = identical;
    return fit;
  }
  // Differences are scaled, not centred: x = 0 still means equal lengths.
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = raw[i] / fit.length_scale;

  double b0 = 0.0, b1 = 0.0;
  double ll = penalized_loglik(y, x, b0, b1);
  for (fit.iterations = 1; fit.iterations <= kMaxIterations; ++fit.iterations) {
    double g0 = 0.0, g1 = -kRidge * b1, h00 = 0.0, h01 = 0.0, h11 = kRidge;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(b0 + b1 * x[i]);
      const double w = p * (1.0 - p);
      g0 += y[i] - p;
      g1 += (y[i] - p) * x[i];
      h00 += w;
      h01 += w * x[i];
      h11 += w * x[i] * x[i];
    }
    const double det = h00 * h11 - h01 * h01;
    if (!(det > 0.0) || !std::isfinite(det)) break;
    double d0 = (h11 * g0 - h01 * g1) / det;
    double d1 = (h00 * g1 - h01 * g0) / det;
    // Step halving keeps the penalized likelihood from decreasing.
    double next = penalized_loglik(y, x, b0 + d0, b1 + d1);
    for (int halve = 0; halve < 50 && next < ll; ++halve) {
      d0 *= 0.5;
      d1 *= 0.5;
      next = penalized_loglik(y, x, b0 + d0, b1 + d1);
    }
    if (next < ll) break;
    b0 += d0;
    b1 += d1;
    ll = next;
    if (std::max(std::abs(d0), std::abs(d1)) < kTolerance) break;
  }
  fit.iterations = std::min(fit.iterations, kMaxIterations);
  fit.intercept = b0;
  fit.length_coef = b1;
  fit.lc_win_rate = sigmoid(b0);
  return fit;
}

double lc_win_rate(std::span<const VerdictRecord> verdicts, std::string_view perspective) {
  return fit_lc(verdicts, perspective).lc_win_rate;
}

namespace {

auto sort_key(const VerdictRecord& v) {
  return std::tie(v.prompt_id, v.lang, v.category, v.model_a, v.model_b, v.outcome, v.len_a,
                  v.len_b);
}

double statistic_of(std::span<const VerdictRecord> vs, std::string_view perspective,
                    Statistic s) {
  return s == Statistic::kWinRate ? win_rate(vs, perspective) : lc_win_rate(vs, perspective);
}

}  // namespace

double bootstrap_std(std::span<const VerdictRecord> verdicts, std::string_view perspective,
                     Statistic statistic, int resamples, std::uint64_t seed) {
  if (verdicts.empty()) throw DataError("bootstrap over an empty verdict list");
  if (resamples < 100) throw UsageError("bootstrap needs at least 100 resamples");

  std::vector<VerdictRecord> sorted(verdicts.begin(), verdicts.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return sort_key(a) < sort_key(b); });
  // Clusters of verdicts sharing a prompt id.
  std::vector<std::pair<std::size_t, std::size_t>> clusters;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j].prompt_id == sorted[i].prompt_id) ++j;
    clusters.emplace_back(i, j);
    i = j;
  }

  std::vector<double> stats(static_cast<std::size_t>(resamples));
  parallel_for(stats.size(), [&](std::size_t r) {
    auto rng = make_stream(seed, {0x626f6f74ULL, static_cast<std::uint64_t>(r)});
    std::vector<VerdictRecord> sample;
    sample.reserve(sorted.size());
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      auto pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(clusters.size()));
      pick = std::min(pick, clusters.size() - 1);
      for (auto i = clusters[pick].first; i < clusters[pick].second; ++i) {
        sample.push_back(sorted[i]);
      }
    }
    stats[r] = statistic_of(sample, perspective, statistic);
  });
  double mean = 0.0;
  for (double s : stats) mean += s;
  mean /= static_cast<double>(stats.size());
  double var = 0.0;
  for (double s : stats) var += (s - mean) * (s - mean);
  return std::sqrt(var / static_cast<double>(stats.size() - 1));
}

WinRateResult evaluate(std::span<const VerdictRecord> verdicts, const std::string& model_a,
                       const std::string& model_b, int resamples, std::uint64_t seed) {
  if (model_a == model_b) throw UsageError("model_a and model_b must differ");
  std::vector<VerdictRecord> pool;
  for (const auto& v : verdicts) {
    if ((v.model_a == model_a && v.model_b == model_b) ||
        (v.model_a == model_b && v.model_b == model_a)) {
      pool.push_back(v);
    }
  }
  if (pool.empty()) {
    throw DataError("no verdicts between '" + model_a + "' and '" + model_b + "'");
  }
  WinRateResult r;
  r.model_a = model_a;
  r.model_b = model_b;
  r.n = pool.size();
  r.win_rate = win_rate(pool, model_a);
  const auto fit = fit_lc(pool, model_a);
  r.lc_win_rate = fit.lc_win_rate;
  r.lc_degenerate = fit.degenerate;
  r.resamples = resamples;
  r.bootstrap_std = bootstrap_std(pool, model_a, Statistic::kWinRate, resamples, seed);
  r.lc_bootstrap_std = bootstrap_std(pool, model_a, Statistic::kLcWinRate, resamples, seed);

  auto breakdown = [&](auto key_of) {
    std::map<std::string, std::vector<VerdictRecord>> groups;
    for (const auto& v : pool) groups[key_of(v)].push_back(v);
    std::map<std::string, RateCell> out;
    for (const auto& [k, vs] : groups) {
      out[k] = RateCell{win_rate(vs, model_a), lc_win_rate(vs, model_a), vs.size()};
    }
    return out;
  };
  r.by_category = breakdown([](const VerdictRecord& v) { return v.category; });
  r.by_lang = breakdown([](const VerdictRecord& v) { return v.lang; });
  return r;
}

std::string result_to_json(const WinRateResult& r) {
  auto cells = [](const std::map<std::string, RateCell>& m) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [k, c] : m) {
      j[k] = {{"win_rate", c.win_rate}, {"lc_win_rate", c.lc_win_rate}, {"n", c.n}};
    }
    return j;
  };
  nlohmann::ordered_json j;
  j["model_a"] = r.model_a;
  j["model_b"] = r.model_b;
  j["n"] = r.n;
  j["win_rate"] = r.win_rate;
  j["lc_win_rate"] = r.lc_win_rate;
  j["lc_degenerate"] = r.lc_degenerate;
  j["bootstrap_std"] = r.bootstrap_std;
  j["lc_bootstrap_std"] = r.lc_bootstrap_std;
  j["bootstrap_unit"] = "prompt";
  j["resamples"] = r.resamples;
  j["by_category"] = cells(r.by_category);
  j["by_lang"] = cells(r.by_lang);
  return j.dump(2) + "\n";
}

ScoreTable delta_table(const ScoreMap& baseline, const std::map<std::string, ScoreMap>& configs) {
  ScoreTable t;
  for (const auto& [name, scores] : configs) {
    for (const auto& [key, v] : baseline) {
      if (!scores.contains(key)) {
        throw DataError("config '" + name + "' has no score for (" + key.first + ", " +
                        key.second + ")");
      }
    }
    for (const auto& [key, v] : scores) {
      if (!baseline.contains(key)) {
        throw DataError("config '" + name + "' scores (" + key.first + ", " + key.second +
                        ") which the baseline lacks");
      }
    }
    t.configs.push_back(name);
  }

  std::map<std::string, std::vector<std::string>> datasets;
  for (const auto& [key, v] : baseline) datasets[key.first].push_back(key.second);
  for (const auto& [lang, names] : datasets) {
    ScoreRow avg{lang, std::string(kAverageRow), 0.0, {}};
    std::map<std::string, double> config_sum;
    for (const auto& ds : names) {
      const ScoreKey key{lang, ds};
      ScoreRow row{lang, ds, baseline.at(key), {}};
      avg.baseline += row.baseline;
      for (const auto& [name, scores] : configs) {
        row.deltas[name] = scores.at(key) - row.baseline;
        config_sum[name] += scores.at(key);
      }
      t.rows.push_back(std::move(row));
    }
    const double k = static_cast<double>(names.size());
    avg.baseline /= k;
    for (const auto& [name, sum] : config_sum) avg.deltas[name] = sum / k - avg.baseline;
    t.rows.push_back(std::move(avg));
  }
  return t;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::map<std::string, ScoreMap> load_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  const auto header = split_csv_line(line);
  if (header != std::vector<std::string>{"lang", "dataset", "model", "score"}) {
    throw DataError(path.string() + ":1: expected header lang,dataset,model,score");
  }
  std::map<std::string, ScoreMap> out;
  for (std::size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() != 4) throw DataError(where + ": expected 4 columns");
    double score = 0.0;
    const auto& s = cells[3];
    auto res = std::from_chars(s.data(), s.data() + s.size(), score);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(score)) {
      throw DataError(where + ": field \"score\": not a finite number");
    }
    if (!out[cells[2]].emplace(ScoreKey{cells[0], cells[1]}, score).second) {
      throw DataError(where + ": duplicate score for (" + cells[0] + ", " + cells[1] + ", " +
                      cells[2] + ")");
    }
  }
  return out;
}

std::string score_table_csv(const ScoreTable& table) {
  std::string out = "lang,dataset,baseline";
  for (const auto& c : table.configs) out += "," + c;
  out += "\n";
  for (const auto& row : table.rows) {
    out += row.lang + "," + row.dataset + "," + format_double(row.baseline);
    for (const auto& c : table.configs) out += "," + format_double(row.deltas.at(c));
    out += "\n";
  }
  return out;
}

}  // namespace crosspref
