// Serial reference vs OpenMP kernel for the three parallel paths.
// Run with --benchmark_filter=... to pick one; Arg 0 is serial, 1 is parallel.

#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "vrft/batch_scoring.hpp"
#include "vrft/envs.hpp"
#include "vrft/grpo.hpp"
#include "vrft/reward_json.hpp"

using namespace vrft;

namespace {

std::vector<ScoreItem> make_items(std::size_t n) {
  const std::string knowledge = "melanoma: irregular asymmetric borders with dark uneven pigment";
  std::vector<ScoreItem> items(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& it = items[i];
    it.id = std::to_string(i);
    it.prompt = knowledge;
    it.completion = render_boxed(i % 3 ? "irregular asymmetric borders with dark pigment" : "round brown lesion",
                                 i % 2 ? "melanoma" : "nevus");
    it.truth.label = "melanoma";
  }
  return items;
}

void bm_score_batch(benchmark::State& state) {
  const auto items = make_items(4096);
  auto spec = builtin_presets().at("paper_default");
  spec.delta = 0.2;
  const bool parallel = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(score_batch(items, spec, parallel));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * items.size()));
}
BENCHMARK(bm_score_batch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void bm_collect_groups(benchmark::State& state) {
  RecitationEnvConfig ec;
  RecitationEnv env(ec, 1);
  auto policy = env.make_policy();
  auto reference = env.make_policy();
  RewardSpec spec;
  spec.delta = 0.2;
  GrpoConfig cfg;
  cfg.prompts_per_step = 32;
  cfg.parallel = state.range(0) != 0;
  int step = 0;
  for (auto _ : state) {
    std::vector<RolloutScore> scores;
    benchmark::DoNotOptimize(collect_groups(env, *policy, *reference, spec, cfg, step++, &scores));
  }
}
BENCHMARK(bm_collect_groups)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void bm_bayes_accuracy(benchmark::State& state) {
  OrdinalEnvConfig cfg;
  const bool parallel = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(ordinal_bayes_accuracy(cfg, 200000, 7, parallel));
}
BENCHMARK(bm_bayes_accuracy)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
