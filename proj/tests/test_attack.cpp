#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "vrt/attack.hpp"

using namespace vrt;
using namespace vrt_test;

namespace {

AttackConfig tiny_config() {
  AttackConfig c;
  c.token_budget = 2;
  c.top_k = 8;
  c.candidate_batch = 8;
  c.max_iters = 12;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("gcg_iteration equals brute force on a 1-position prompt, |V|=8") {
  for (int trial = 0; trial < 100; ++trial) {
    VLAModel m = make_tiny_model(1000 + trial);
    Tensor z = random_z(m, 5000 + trial);
    Prompt p = make_tiny_prompt({2, 5, 1}, {1});
    ActionTokens target{static_cast<int>(trial % 8),
                        static_cast<int>((trial / 3) % 8)};

    // Brute force over all 8 substitutions (no reserved/action exclusions in
    // the tiny vocabulary).
    double best_loss = 0.0;
    int best_tok = -1;
    for (int tok = 0; tok < 8; ++tok) {
      Prompt q = p;
      q.tokens[1] = tok;
      double loss = target_loss(m, q, z, target);
      if (best_tok < 0 || loss < best_loss) {
        best_loss = loss;
        best_tok = tok;
      }
    }

    AttackObjective obj;
    obj.terms.push_back({&m, z, target});
    std::vector<BatchLossEvaluator> evals;
    evals.emplace_back(m, z, p.tokens, 1, target);

    AttackConfig cfg;
    cfg.top_k = 8;
    cfg.candidate_batch = 8;  // covers the whole (position, rank) grid
    cfg.seed = trial;
    Rng rng(cfg.seed);
    double incumbent = evals[0].eval_one(p.tokens);
    GcgStep step = gcg_iteration(obj, p, cfg, rng, incumbent, evals);

    // Exhaustive candidates must find the global optimum.
    bool same_token = step.prompt.tokens[1] == best_tok;
    bool same_loss = std::abs(step.best_loss - best_loss) < 1e-9;
    CHECK((same_token || same_loss));
    CHECK(step.best_loss <= best_loss + 1e-9);
  }
}

TEST_CASE("best-so-far loss is monotone and runs are bit-deterministic") {
  for (int trial = 0; trial < 5; ++trial) {
    VLAModel m = make_tiny_model(7 + trial, 12, 4);  // action ids 8..11
    Tensor z = random_z(m, 90 + trial);
    Prompt p = make_tiny_prompt({0, 4, 7, 2}, {1, 2});
    ActionTokens target{8, 11};

    AttackObjective obj;
    obj.terms.push_back({&m, z, target});
    AttackConfig cfg = tiny_config();
    cfg.seed = 40 + trial;
    cfg.early_stop = false;

    AttackResult r1 = run_attack(obj, p, cfg);
    AttackResult r2 = run_attack(obj, p, cfg);

    for (std::size_t i = 1; i < r1.best_loss_series.size(); ++i)
      CHECK(r1.best_loss_series[i] <= r1.best_loss_series[i - 1]);

    CHECK(r1.best_loss_series == r2.best_loss_series);
    CHECK(r1.prompt.tokens == r2.prompt.tokens);
    CHECK(r1.matched_mask == r2.matched_mask);
    REQUIRE(r1.log.size() == r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
      CHECK(r1.log[i].tokens == r2.log[i].tokens);
      CHECK(r1.log[i].best_loss == r2.log[i].best_loss);
      CHECK(r1.log[i].matched_mask == r2.log[i].matched_mask);
    }
  }
}

TEST_CASE("candidate batch with incumbent never increases the loss") {
  VLAModel m = make_tiny_model(77, 10);
  Tensor z = random_z(m, 13);
  Prompt p = make_tiny_prompt({1, 3, 5, 7}, {0, 1, 2});
  ActionTokens target{4, 8};
  AttackObjective obj;
  obj.terms.push_back({&m, z, target});
  std::vector<BatchLossEvaluator> evals;
  evals.emplace_back(m, z, p.tokens, 0, target);
  AttackConfig cfg = tiny_config();
  Rng rng(9);
  double incumbent = evals[0].eval_one(p.tokens);
  GcgStep step = gcg_iteration(obj, p, cfg, rng, incumbent, evals);
  CHECK(step.best_loss <= incumbent);
}

TEST_CASE("zero-budget attack with a non-matching target fails at iteration 0") {
  VLAModel m = make_std_model(3);
  Tensor z = env_z(m, 0, 1);
  AttackConfig cfg;
  cfg.token_budget = 0;
  cfg.mode = PromptMode::kSuffix;
  ActionVector target(7, 0.19);  // far from whatever the random model decodes
  AttackResult r = single_step_attack(m, z, target, "pick up the red block", cfg);
  ActionTokens target_tokens = action_to_tokens(target, m.stats, m.vocab);
  if (generate_action(m, r.prompt, z) != target_tokens) CHECK_FALSE(r.success);
  CHECK(r.iterations_used == 0);
}

TEST_CASE("already-matching target succeeds at iteration 0") {
  VLAModel m = make_std_model(8);
  Tensor z = env_z(m, 1, 2);
  Prompt nominal = render_prompt(m.vocab, m.config, "pick up the red block", {},
                                 PromptMode::kSuffix);
  ActionTokens decoded = generate_action(m, nominal, z);
  ActionVector as_action = tokens_to_action(decoded, m.stats, m.vocab);

  AttackConfig cfg;
  cfg.token_budget = 0;
  cfg.mode = PromptMode::kSuffix;
  AttackResult r = single_step_attack(m, z, as_action, "pick up the red block", cfg);
  CHECK(r.success);
  CHECK(r.iterations_used == 0);
}

TEST_CASE("suffix mode preserves the instruction; candidates stay legal") {
  VLAModel m = make_std_model(21);
  Tensor z = env_z(m, 0, 6);
  AttackConfig cfg;
  cfg.token_budget = 4;
  cfg.top_k = 16;
  cfg.candidate_batch = 16;
  cfg.max_iters = 6;
  cfg.mode = PromptMode::kSuffix;
  cfg.early_stop = false;
  ActionVector target(7, 0.05);
  AttackResult r = single_step_attack(m, z, target, "pick up the red block", cfg);

  Prompt nominal = render_prompt(m.vocab, m.config, "pick up the red block", {},
                                 PromptMode::kSuffix);
  // Template + instruction prefix intact; only suffix positions changed.
  for (int i = 0; i < nominal.slot_begin + 5; ++i)
    CHECK(r.prompt.tokens[i] == nominal.tokens[i]);
  // Tail template intact.
  for (int off = 1; off <= 3; ++off)
    CHECK(r.prompt.tokens[r.prompt.tokens.size() - off] ==
          nominal.tokens[nominal.tokens.size() - off]);
  // Attack positions hold neither reserved nor action tokens after the run
  // (the filler initialization is itself reserved, so only check iterations
  // that changed a position).
  for (const auto& rec : r.log)
    for (int pos : r.prompt.attack_positions) {
      int id = rec.tokens[pos];
      if (id != m.vocab.filler_id()) {
        CHECK_FALSE(m.vocab.is_action(id));
        CHECK_FALSE(m.vocab.is_reserved(id));
      }
    }
}

TEST_CASE("replace mode never touches template tokens") {
  VLAModel m = make_std_model(22);
  Tensor z = env_z(m, 0, 7);
  AttackConfig cfg;
  cfg.token_budget = 6;
  cfg.top_k = 8;
  cfg.candidate_batch = 12;
  cfg.max_iters = 5;
  cfg.mode = PromptMode::kReplace;
  cfg.early_stop = false;
  ActionVector target(7, -0.05);
  AttackResult r = single_step_attack(m, z, target, "pick up the red block", cfg);
  Prompt init = initial_attack_prompt(m, "pick up the red block", cfg);
  for (int i = 0; i < init.slot_begin; ++i)
    CHECK(r.prompt.tokens[i] == init.tokens[i]);
  for (std::size_t i = init.slot_end; i < init.tokens.size(); ++i)
    CHECK(r.prompt.tokens[i] == init.tokens[i]);
}

TEST_CASE("persistence objective: r identical images sum to r times the loss") {
  VLAModel m = make_std_model(31);
  Tensor z = env_z(m, 2, 3);
  ActionVector target(7, 0.02);
  AttackConfig cfg;
  cfg.token_budget = 3;
  cfg.max_iters = 0;
  std::vector<Tensor> three{z, z, z};
  AttackResult single = single_step_attack(m, z, target, "pick up the red block", cfg);
  AttackResult triple =
      persistence_attack(m, three, target, "pick up the red block", cfg);
  CHECK(std::abs(triple.best_loss_series[0] - 3.0 * single.best_loss_series[0]) <
        1e-9);
}

TEST_CASE("persistence with r=1 reduces exactly to the single-step attack") {
  VLAModel m = make_std_model(33);
  Tensor z = env_z(m, 1, 9);
  ActionVector target(7, -0.03);
  AttackConfig cfg;
  cfg.token_budget = 3;
  cfg.top_k = 8;
  cfg.candidate_batch = 8;
  cfg.max_iters = 4;
  cfg.early_stop = false;
  std::vector<Tensor> one{z};
  AttackResult a = single_step_attack(m, z, target, "pick up the red block", cfg);
  AttackResult b = persistence_attack(m, one, target, "pick up the red block", cfg);
  CHECK(a.best_loss_series == b.best_loss_series);
  CHECK(a.prompt.tokens == b.prompt.tokens);
}

TEST_CASE("ensemble objective is invariant under model reordering") {
  VLAModel m1 = make_std_model(41);
  VLAModel m2 = make_std_model(42);
  Tensor z1 = env_z(m1, 0, 11);
  Tensor z2 = env_z(m2, 0, 12);
  std::vector<int> bins(7, 100);
  AttackConfig cfg;
  cfg.token_budget = 3;
  cfg.top_k = 8;
  cfg.candidate_batch = 8;
  cfg.max_iters = 3;
  cfg.early_stop = false;

  const VLAModel* fwd[] = {&m1, &m2};
  const VLAModel* rev[] = {&m2, &m1};
  std::vector<Tensor> zf{z1, z2}, zr{z2, z1};
  AttackResult a = ensemble_attack(fwd, zf, bins, "pick up the red block", cfg);
  AttackResult b = ensemble_attack(rev, zr, bins, "pick up the red block", cfg);
  CHECK(a.best_loss_series == b.best_loss_series);
  CHECK(a.prompt.tokens == b.prompt.tokens);
}

TEST_CASE("ensemble rejects vocabulary mismatches; n=1 reduces to single-step") {
  VLAModel m1 = make_std_model(51);
  VLAModel small = make_tiny_model(52, 16, 8);
  Tensor z1 = env_z(m1, 0, 13);
  Tensor zs = random_z(small, 14);
  std::vector<int> bins(7, 5);
  AttackConfig cfg;
  cfg.token_budget = 2;
  cfg.max_iters = 1;
  const VLAModel* bad[] = {&m1, &small};
  std::vector<Tensor> zb{z1, zs};
  CHECK_THROWS_AS(ensemble_attack(bad, zb, bins, "pick up the red block", cfg),
                  std::invalid_argument);

  cfg.top_k = 8;
  cfg.candidate_batch = 8;
  cfg.max_iters = 3;
  cfg.early_stop = false;
  const VLAModel* one[] = {&m1};
  std::vector<Tensor> zo{z1};
  AttackResult a = ensemble_attack(one, zo, bins, "pick up the red block", cfg);
  ActionVector target = tokens_to_action(
      [&] {
        ActionTokens t;
        for (int b : bins) t.push_back(m1.vocab.action_id_for_bin(b));
        return t;
      }(),
      m1.stats, m1.vocab);
  AttackResult b = single_step_attack(m1, z1, target, "pick up the red block", cfg);
  CHECK(a.best_loss_series == b.best_loss_series);
}

TEST_CASE("check_exact_match reports per-dimension bits") {
  VLAModel m = make_std_model(61);
  Tensor z = env_z(m, 3, 4);
  Prompt p = render_prompt(m.vocab, m.config, "pick up the red block", {},
                           PromptMode::kSuffix);
  ActionTokens decoded = generate_action(m, p, z);
  auto [ok, mask] = check_exact_match(m, p, z, decoded);
  CHECK(ok);
  CHECK(mask == 0x7Fu);

  ActionTokens off = decoded;
  off[3] = off[3] == m.vocab.action_begin() ? off[3] + 1 : off[3] - 1;
  auto [ok2, mask2] = check_exact_match(m, p, z, off);
  CHECK_FALSE(ok2);
  CHECK(mask2 == (0x7Fu & ~(1u << 3)));
}

TEST_CASE("random_instruction: valid ids, reproducible, uniform (chi-square)") {
  Vocabulary vocab = Vocabulary::standard();
  Rng r1(99), r2(99);
  auto a = random_instruction(20, vocab, r1);
  auto b = random_instruction(20, vocab, r2);
  CHECK(a == b);
  CHECK(a.size() == 20);
  for (int id : a) {
    CHECK_FALSE(vocab.is_action(id));
    CHECK_FALSE(vocab.is_reserved(id));
  }

  const auto& allowed = vocab.candidate_ids();
  std::vector<long> counts(vocab.size(), 0);
  Rng rng(7);
  const long draws = 100000;
  for (long i = 0; i < draws; ++i) counts[random_instruction(1, vocab, rng)[0]]++;
  double expected = static_cast<double>(draws) / allowed.size();
  double chi2 = 0.0;
  for (int id : allowed) {
    double d = counts[id] - expected;
    chi2 += d * d / expected;
  }
  // df = 252; mean 252, sd ~22.4. Generous 6-sigma-style window.
  CHECK(chi2 > 130.0);
  CHECK(chi2 < 400.0);
}
