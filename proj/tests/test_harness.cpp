#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <set>

#include "test_util.hpp"
#include "vrt/harness.hpp"
#include "vrt/io.hpp"
#include "vrt/report.hpp"

using namespace vrt;
using namespace vrt_test;

namespace {

AttackConfig quick_attack() {
  AttackConfig cfg;
  cfg.token_budget = 4;
  cfg.top_k = 8;
  cfg.candidate_batch = 8;
  cfg.max_iters = 2;
  cfg.seed = 11;
  return cfg;
}

HarnessContext quick_ctx() {
  HarnessContext ctx;
  ctx.env_task = 0;
  ctx.env_seed = 5;
  ctx.burn_in_steps = 10;
  ctx.workers = 2;
  return ctx;
}

}  // namespace

TEST_CASE("target grid: full size and seeded subsampling") {
  TargetGrid full = TargetGrid::full();
  CHECK(full.entries.size() == 1792);

  TargetGrid sub = TargetGrid::subsample(120, 9);
  TargetGrid sub2 = TargetGrid::subsample(120, 9);
  CHECK(sub.entries.size() == 120);
  std::set<std::pair<int, int>> distinct;
  for (const auto& e : sub.entries) distinct.insert({e.dim, e.bin});
  CHECK(distinct.size() == 120);
  for (std::size_t i = 0; i < sub.entries.size(); ++i) {
    CHECK(sub.entries[i].dim == sub2.entries[i].dim);
    CHECK(sub.entries[i].bin == sub2.entries[i].bin);
  }

  CHECK_THROWS_AS(TargetGrid::subsample(100000, 1), std::invalid_argument);
}

TEST_CASE("realize_target puts the bin-center value on the hot dimension") {
  VLAModel m = make_std_model(3);
  ActionVector a = realize_target({2, 0}, m.stats, m.vocab);
  for (int k = 0; k < 7; ++k) {
    if (k == 2) CHECK(a[k] == doctest::Approx(m.stats.q01[2]));
    else CHECK(a[k] == 0.0);
  }
  ActionVector top = realize_target({4, 255}, m.stats, m.vocab);
  CHECK(top[4] == doctest::Approx(m.stats.q99[4]));
}

TEST_CASE("eval_single_step: coherent aggregates, deterministic modulo timing") {
  VLAModel m = make_std_model(17);
  TargetGrid grid;
  grid.entries = {{0, 128}, {3, 10}, {6, 255}};
  AttackConfig cfg = quick_attack();
  HarnessContext ctx = quick_ctx();

  SingleStepEval a = eval_single_step(m, grid, cfg, ctx);
  SingleStepEval b = eval_single_step(m, grid, cfg, ctx);

  REQUIRE(a.records.size() == 3);
  CHECK(a.report.n_targets == 3);
  for (double rate : a.report.per_dimension_rate)
    CHECK(a.report.overall_rate <= rate + 1e-12);

  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].final_tokens == b.records[i].final_tokens);
    CHECK(a.records[i].success == b.records[i].success);
    CHECK(a.records[i].iterations == b.records[i].iterations);
    CHECK(a.records[i].matched_mask == b.records[i].matched_mask);
    CHECK(a.records[i].final_loss == b.records[i].final_loss);
  }
}

TEST_CASE("budget ablation reports budgets in ascending order") {
  VLAModel m = make_std_model(19);
  TargetGrid grid;
  grid.entries = {{1, 64}};
  AttackConfig cfg = quick_attack();
  cfg.max_iters = 1;
  HarnessContext ctx = quick_ctx();
  BudgetAblation ab = budget_ablation(m, grid, cfg, ctx, {10, 5});
  REQUIRE(ab.budgets.size() == 2);
  CHECK(ab.budgets[0] == 5);
  CHECK(ab.budgets[1] == 10);
  CHECK(ab.reports.size() == 2);
}

TEST_CASE("persistence seed images: burn-in bound and first-steps plan") {
  VLAModel m = make_std_model(23);
  HarnessContext ctx = quick_ctx();
  ActionVector target(7, 0.05);

  auto burnin = persistence_seed_images(m, ctx, SeedStrategy::kBurnIn, 3, target);
  CHECK(burnin.size() == 3);
  CHECK_THROWS_AS(
      persistence_seed_images(m, ctx, SeedStrategy::kBurnIn, 11, target),
      std::invalid_argument);

  auto plan = persistence_seed_images(m, ctx, SeedStrategy::kFirstSteps, 2, target);
  CHECK(plan.size() == 2);
  // Consecutive plan images differ (the arm moves under the target action).
  CHECK(plan[0].data()[0] != plan[1].data()[0]);
}

TEST_CASE("attacked_rollout: deterministic, seen bookkeeping, first image seen") {
  VLAModel m = make_std_model(29);
  HarnessContext ctx = quick_ctx();
  ActionVector target_action(7, 0.02);
  ActionTokens target = action_to_tokens(target_action, m.stats, m.vocab);
  Prompt nominal = render_prompt(m.vocab, m.config,
                                 task_catalog()[ctx.env_task].instruction, {},
                                 PromptMode::kSuffix);

  RolloutTrace t1 = attacked_rollout(m, nominal, target, ctx,
                                     SeedStrategy::kFirstSteps, 2,
                                     target_action, 12);
  RolloutTrace t2 = attacked_rollout(m, nominal, target, ctx,
                                     SeedStrategy::kFirstSteps, 2,
                                     target_action, 12);
  REQUIRE(t1.steps.size() == t2.steps.size());
  for (std::size_t i = 0; i < t1.steps.size(); ++i) {
    CHECK(t1.steps[i].image_hash == t2.steps[i].image_hash);
    CHECK(t1.steps[i].decoded == t2.steps[i].decoded);
    CHECK(t1.steps[i].match == t2.steps[i].match);
  }

  // 10 burn-in probes followed by the 12 rollout steps.
  CHECK(t1.steps.size() == 22);
  int probes = 0;
  for (const auto& s : t1.steps) probes += s.burnin_probe ? 1 : 0;
  CHECK(probes == 10);
  // The first rollout step re-sees the first planned image.
  const RolloutStepRecord& first = t1.steps[10];
  CHECK(first.step == 1);
  CHECK(first.seen);

  // Burn-in strategy: the last r burn-in frames are the seen ones.
  RolloutTrace t3 = attacked_rollout(m, nominal, target, ctx,
                                     SeedStrategy::kBurnIn, 3, target_action, 6);
  int seen_probes = 0;
  for (const auto& s : t3.steps)
    if (s.burnin_probe && s.seen) ++seen_probes;
  CHECK(seen_probes == 3);
}

TEST_CASE("nominal baseline: bounded and zero for unreachable targets") {
  VLAModel m = make_std_model(31);
  HarnessContext ctx = quick_ctx();
  // A random model essentially never decodes an exact 7-token sequence chosen
  // adversarially; use census to find what it does decode.
  auto census = nominal_action_census(m, ctx, 3, 10);
  REQUIRE_FALSE(census.empty());
  double total = 0.0;
  for (const auto& e : census) total += e.freq;
  CHECK(total == doctest::Approx(1.0));

  double base = nominal_baseline(m, census[0].action, ctx, 3, 10);
  CHECK(base >= 0.0);
  CHECK(base <= 1.0);

  ActionTokens unreachable(7, m.vocab.action_id_for_bin(7));
  bool in_census = false;
  for (const auto& e : census)
    if (e.action == unreachable) in_census = true;
  if (!in_census)
    CHECK(nominal_baseline(m, unreachable, ctx, 3, 10) == 0.0);
}

TEST_CASE("failure grid covers exactly the evaluated entries") {
  NormalizationStats stats;
  stats.q01 = {-0.2, -0.2, -0.2, -0.2, -0.2, -0.2, -0.8};
  stats.q99 = {0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.8};
  std::vector<AttackRecord> records(3);
  records[0].entry = {0, 0};
  records[0].success = true;
  records[1].entry = {1, 128};
  records[1].success = true;
  records[2].entry = {2, 255};
  records[2].success = true;
  auto cells = failure_grid(records, stats);
  REQUIRE(cells.size() == 3);
  int failures = 0;
  for (const auto& c : cells) failures += c.success ? 0 : 1;
  CHECK(failures == 0);  // all-success input -> empty failure set
  CHECK(cells[0].at_quantile_edge);
  CHECK_FALSE(cells[1].at_quantile_edge);
  CHECK(cells[2].at_quantile_edge);
}

TEST_CASE("defense eval: the identity defense matches the undefended rate") {
  VLAModel m = make_std_model(37);
  HarnessContext ctx = quick_ctx();
  AttackConfig cfg = quick_attack();
  TargetGrid grid;
  grid.entries = {{0, 100}, {5, 20}};
  SingleStepEval eval = eval_single_step(m, grid, cfg, ctx);

  DefenseMode modes[] = {DefenseMode::kNone};
  DefenseEval d = eval_defenses(m, eval.records, cfg, ctx, modes);
  REQUIRE(d.cells.size() == 1);
  CHECK(d.cells[0].asr == doctest::Approx(d.undefended_asr));
  CHECK(d.cells[0].nominal_pass_rate == doctest::Approx(1.0));
}

TEST_CASE("suffix trials: 12 extreme targets, instruction preserved") {
  VLAModel m = make_std_model(41);
  HarnessContext ctx = quick_ctx();
  AttackConfig cfg = quick_attack();
  cfg.max_iters = 1;
  SingleStepEval eval = suffix_mode_trials(m, cfg, ctx);
  CHECK(eval.records.size() == 12);
  std::set<std::pair<int, int>> expected;
  for (int d = 0; d < 6; ++d) {
    expected.insert({d, 0});
    expected.insert({d, 255});
  }
  std::set<std::pair<int, int>> got;
  for (const auto& r : eval.records) got.insert({r.entry.dim, r.entry.bin});
  CHECK(got == expected);

  // The nominal instruction words survive in the final tokens.
  Prompt nominal = render_prompt(m.vocab, m.config,
                                 task_catalog()[ctx.env_task].instruction, {},
                                 PromptMode::kSuffix);
  for (const auto& r : eval.records)
    for (int i = nominal.slot_begin; i < nominal.slot_end; ++i)
      CHECK(r.final_tokens[i] == nominal.tokens[i]);
}

TEST_CASE("report writers: headers, json round-trip, empty reports") {
  SingleStepEval empty;
  empty.report.per_dimension_rate.assign(7, 0.0);
  write_single_step_csv(empty, "test_report_empty.csv");
  std::string csv = read_text_file("test_report_empty.csv");
  CHECK(csv == "dim,bin,success,iterations,seconds,matched_mask,final_loss\n");

  EvalReport rep;
  rep.per_dimension_rate = {1, 1, 1, 0.5, 1, 1, 0.25};
  rep.overall_rate = 0.25;
  rep.n_targets = 4;
  rep.n_success = 1;
  OrderedJson j = eval_report_json(rep);
  write_json_file(j, "test_report.json");
  OrderedJson back = load_json_file("test_report.json");
  CHECK(back["overall_rate"].get<double>() == 0.25);
  CHECK(back["schema_version"].get<int>() == kReportSchemaVersion);
  CHECK(back == j);

  std::remove("test_report_empty.csv");
  std::remove("test_report.json");
}
