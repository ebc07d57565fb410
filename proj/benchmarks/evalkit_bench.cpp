#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "crosspref/evalkit.hpp"
#include "crosspref/random.hpp"

using namespace crosspref;

namespace {

std::vector<VerdictRecord> verdicts(std::size_t n) {
  auto rng = make_stream(4);
  std::uniform_int_distribution<int> outcome(0, 2), len(3, 40);
  std::vector<VerdictRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"p" + std::to_string(i), "eng", "math", "A", "B",
                   static_cast<Outcome>(outcome(rng)), len(rng), len(rng)});
  }
  return out;
}

void BM_LcWinRate(benchmark::State& state) {
  const auto v = verdicts(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(lc_win_rate(v, "A"));
}
BENCHMARK(BM_LcWinRate)->Arg(400)->Arg(4000);

void BM_Bootstrap(benchmark::State& state) {
  const auto v = verdicts(400);
  const auto stat = state.range(0) ? Statistic::kLcWinRate : Statistic::kWinRate;
  for (auto _ : state) benchmark::DoNotOptimize(bootstrap_std(v, "A", stat, 1000, 1));
}
BENCHMARK(BM_Bootstrap)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
