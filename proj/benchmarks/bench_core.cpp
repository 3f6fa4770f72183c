#include <benchmark/benchmark.h>

#include "vrt/attack.hpp"
#include "vrt/env.hpp"
#include "vrt/model.hpp"
#include "vrt/rng.hpp"
#include "vrt/tensor.hpp"

using namespace vrt;

namespace {

VLAModel bench_model() {
  ModelConfig cfg;
  NormalizationStats stats;
  stats.q01.assign(7, -0.25);
  stats.q99.assign(7, 0.25);
  static VLAModel m =
      VLAModel::init(cfg, Vocabulary::standard(), stats, 1234);
  return m.clone();
}

Tensor bench_z(const VLAModel& m) {
  return encode_image(m, render(reset(0, 7)));
}

Prompt bench_prompt(const VLAModel& m, int budget) {
  std::vector<int> slot(budget, m.vocab.filler_id());
  return render_prompt(m.vocab, m.config, "pick up the red block", slot,
                       PromptMode::kReplace);
}

}  // namespace

static void BM_Matmul64(benchmark::State& state) {
  Rng rng(1);
  std::vector<double> a(64 * 64), b(64 * 64);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  Tensor A = Tensor::from({64, 64}, a);
  Tensor B = Tensor::from({64, 64}, b);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(A, B));
}
BENCHMARK(BM_Matmul64);

static void BM_GenerateAction(benchmark::State& state) {
  VLAModel m = bench_model();
  Prompt p = bench_prompt(m, 20);
  Tensor z = bench_z(m);
  for (auto _ : state) benchmark::DoNotOptimize(generate_action(m, p, z));
}
BENCHMARK(BM_GenerateAction);

static void BM_TargetLoss(benchmark::State& state) {
  VLAModel m = bench_model();
  Prompt p = bench_prompt(m, 20);
  Tensor z = bench_z(m);
  ActionTokens target(7, m.vocab.action_id_for_bin(100));
  for (auto _ : state) benchmark::DoNotOptimize(target_loss(m, p, z, target));
}
BENCHMARK(BM_TargetLoss);

static void BM_CandidateBatch128(benchmark::State& state) {
  VLAModel m = bench_model();
  Prompt p = bench_prompt(m, 20);
  Tensor z = bench_z(m);
  ActionTokens target(7, m.vocab.action_id_for_bin(100));
  BatchLossEvaluator ev(m, z, p.tokens, p.attack_positions.front(), target);
  Rng rng(3);
  std::vector<std::vector<int>> cands;
  for (int c = 0; c < 128; ++c) {
    auto toks = p.tokens;
    toks[p.attack_positions[rng.next_below(20)]] =
        m.vocab.candidate_ids()[rng.next_below(m.vocab.candidate_ids().size())];
    cands.push_back(std::move(toks));
  }
  std::vector<double> losses(cands.size());
  for (auto _ : state) {
    ev.eval(cands, losses, state.range(0));
    benchmark::DoNotOptimize(losses.data());
  }
}
BENCHMARK(BM_CandidateBatch128)->Arg(1)->Arg(2);

static void BM_GcgIteration(benchmark::State& state) {
  VLAModel m = bench_model();
  Prompt p = bench_prompt(m, 20);
  Tensor z = bench_z(m);
  ActionTokens target(7, m.vocab.action_id_for_bin(100));
  AttackObjective obj;
  obj.terms.push_back({&m, z, target});
  std::vector<BatchLossEvaluator> evals;
  evals.emplace_back(m, z, p.tokens, p.attack_positions.front(), target);
  AttackConfig cfg;
  cfg.eval_threads = static_cast<int>(state.range(0));
  Rng rng(5);
  double incumbent = evals[0].eval_one(p.tokens);
  for (auto _ : state) {
    GcgStep step = gcg_iteration(obj, p, cfg, rng, incumbent, evals);
    benchmark::DoNotOptimize(step.best_loss);
  }
}
BENCHMARK(BM_GcgIteration)->Arg(1)->Arg(2);

static void BM_Render(benchmark::State& state) {
  SceneState s = reset(0, 9);
  for (auto _ : state) benchmark::DoNotOptimize(render(s));
}
BENCHMARK(BM_Render);

static void BM_BackwardLossGraph(benchmark::State& state) {
  VLAModel m = bench_model();
  m.set_requires_grad(true);
  Prompt p = bench_prompt(m, 20);
  Tensor z = bench_z(m);
  ActionTokens target(7, m.vocab.action_id_for_bin(100));
  for (auto _ : state) {
    LossGraph g = build_loss_graph(m, p, z, target);
    backward(g.loss);
    m.zero_grad();
    benchmark::DoNotOptimize(g.loss.item());
  }
}
BENCHMARK(BM_BackwardLossGraph);

BENCHMARK_MAIN();
