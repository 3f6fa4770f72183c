#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"
#include "vrt/attack.hpp"
#include "vrt/defense.hpp"

using namespace vrt;
using namespace vrt_test;

TEST_CASE("zero-weight model has perplexity exactly |V|") {
  VLAModel m = make_std_model(1);
  for (auto& [name, t] : m.named_parameters())
    if (name.find("ln") == std::string::npos)
      std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
  Prompt p = render_prompt(m.vocab, m.config, "pick up the red block", {},
                           PromptMode::kSuffix);
  double ppl = perplexity(m, p, DefenseMode::kLlmOnlyFilter);
  CHECK(ppl == doctest::Approx(512.0).epsilon(1e-12));

  Tensor z = Tensor::zeros({16, 64});
  double mm = perplexity(m, p, DefenseMode::kMultimodalFilter, &z);
  CHECK(mm == doctest::Approx(512.0).epsilon(1e-12));
}

TEST_CASE("llm-only perplexity ignores the image; multimodal does not") {
  VLAModel m = make_std_model(5);
  Prompt p = render_prompt(m.vocab, m.config, "pick up the red block", {},
                           PromptMode::kSuffix);
  Tensor z1 = env_z(m, 0, 1);
  Tensor z2 = env_z(m, 0, 2);
  CHECK(perplexity(m, p, DefenseMode::kLlmOnlyFilter, &z1) ==
        perplexity(m, p, DefenseMode::kLlmOnlyFilter, &z2));
  CHECK(perplexity(m, p, DefenseMode::kMultimodalFilter, &z1) !=
        perplexity(m, p, DefenseMode::kMultimodalFilter, &z2));
}

TEST_CASE("perplexity requires a non-empty slot and z in multimodal mode") {
  VLAModel m = make_std_model(6);
  Prompt p = render_prompt(m.vocab, m.config, "pick up the red block", {},
                           PromptMode::kSuffix);
  Prompt empty = p;
  empty.slot_end = empty.slot_begin;
  CHECK_THROWS_AS(perplexity(m, empty, DefenseMode::kLlmOnlyFilter),
                  std::invalid_argument);
  CHECK_THROWS_AS(perplexity(m, p, DefenseMode::kMultimodalFilter, nullptr),
                  std::invalid_argument);
}

TEST_CASE("calibrate_threshold is the max over the held-out set and monotone") {
  VLAModel m = make_std_model(7);
  std::vector<std::string> one{"pick up the red block"};
  double t1 = calibrate_threshold(m, one, DefenseMode::kLlmOnlyFilter);
  Prompt p = render_prompt(m.vocab, m.config, one[0], {}, PromptMode::kSuffix);
  CHECK(t1 == perplexity(m, p, DefenseMode::kLlmOnlyFilter));

  std::vector<std::string> more{"pick up the red block",
                                "move the green cube to the left bin",
                                "drop the purple token in the far basket"};
  double t3 = calibrate_threshold(m, more, DefenseMode::kLlmOnlyFilter);
  CHECK(t3 >= t1);
}

TEST_CASE("filter accepts calibration prompts, boundary inclusive") {
  VLAModel m = make_std_model(8);
  std::vector<std::string> catalog;
  for (const auto& t : task_catalog()) catalog.push_back(t.instruction);
  DefenseConfig cfg;
  cfg.mode = DefenseMode::kLlmOnlyFilter;
  cfg.perplexity_threshold =
      calibrate_threshold(m, catalog, DefenseMode::kLlmOnlyFilter);

  for (const auto& instruction : catalog) {
    Prompt p = render_prompt(m.vocab, m.config, instruction, {},
                             PromptMode::kSuffix);
    FilterDecision d = filter(m, p, cfg);
    CHECK(d.accept);  // threshold = max includes every calibration prompt
  }

  // A prompt measured exactly at the threshold is accepted.
  Prompt worst = render_prompt(m.vocab, m.config, catalog[0], {},
                               PromptMode::kSuffix);
  double worst_ppl = perplexity(m, worst, DefenseMode::kLlmOnlyFilter);
  for (const auto& instruction : catalog) {
    Prompt p = render_prompt(m.vocab, m.config, instruction, {},
                             PromptMode::kSuffix);
    worst_ppl = std::max(worst_ppl, perplexity(m, p, DefenseMode::kLlmOnlyFilter));
  }
  DefenseConfig exact = cfg;
  exact.perplexity_threshold = worst_ppl;
  bool found_boundary = false;
  for (const auto& instruction : catalog) {
    Prompt p = render_prompt(m.vocab, m.config, instruction, {},
                             PromptMode::kSuffix);
    FilterDecision d = filter(m, p, exact);
    if (d.perplexity == worst_ppl) {
      found_boundary = true;
      CHECK(d.accept);
    }
  }
  CHECK(found_boundary);
}

TEST_CASE("smooth_generate with q=0 equals the undefended decode") {
  VLAModel m = make_std_model(9);
  Prompt p = render_prompt(m.vocab, m.config, "pick up the red block", {},
                           PromptMode::kSuffix);
  Tensor z = env_z(m, 0, 3);
  DefenseConfig cfg;
  cfg.mode = DefenseMode::kSmoothing;
  cfg.perturbation_rate = 0.0;
  cfg.smoothing_copies = 6;
  CHECK(smooth_generate(m, p, z, cfg) == generate_action(m, p, z));

  cfg.smoothing_copies = 1;
  CHECK(smooth_generate(m, p, z, cfg) == generate_action(m, p, z));
}

TEST_CASE("majority vote output appears among the decoded bins") {
  VLAModel m = make_std_model(10);
  Tensor z = env_z(m, 1, 4);
  Rng seed_rng(77);
  std::vector<int> suffix = random_instruction(8, m.vocab, seed_rng);
  Prompt p = render_prompt(m.vocab, m.config, "pick up the red block", suffix,
                           PromptMode::kSuffix);
  DefenseConfig cfg;
  cfg.mode = DefenseMode::kSmoothing;
  cfg.perturbation_rate = 0.35;
  cfg.smoothing_copies = 6;
  cfg.seed = 5;
  ActionTokens voted = smooth_generate(m, p, z, cfg);

  // Re-derive the same perturbed copies to collect the per-copy decodes.
  Rng rng(cfg.seed);
  const auto& allowed = m.vocab.candidate_ids();
  std::vector<ActionTokens> decodes;
  for (int c = 0; c < cfg.smoothing_copies; ++c) {
    Prompt copy = p;
    for (int i = p.slot_begin; i < p.slot_end; ++i)
      if (rng.next_double() < cfg.perturbation_rate)
        copy.tokens[i] = allowed[rng.next_below(allowed.size())];
    decodes.push_back(generate_action(m, copy, z));
  }
  for (int j = 0; j < 7; ++j) {
    bool present = false;
    for (const auto& d : decodes)
      if (d[j] == voted[j]) present = true;
    CHECK(present);
  }
}

TEST_CASE("defended_generate: rejection yields no action") {
  VLAModel m = make_std_model(11);
  Prompt p = render_prompt(m.vocab, m.config, "pick up the red block", {},
                           PromptMode::kSuffix);
  Tensor z = env_z(m, 0, 5);
  DefenseConfig cfg;
  cfg.mode = DefenseMode::kLlmOnlyFilter;
  cfg.perplexity_threshold = 1e-9;  // everything rejected
  DefenseDecision d = defended_generate(m, p, z, cfg);
  CHECK_FALSE(d.accepted);
  CHECK_FALSE(d.action.has_value());

  cfg.perplexity_threshold = 1e12;  // everything accepted
  DefenseDecision d2 = defended_generate(m, p, z, cfg);
  CHECK(d2.accepted);
  REQUIRE(d2.action.has_value());
  CHECK(*d2.action == generate_action(m, p, z));
}

TEST_CASE("filter decision is a pure function of its inputs") {
  VLAModel m = make_std_model(12);
  Prompt p = render_prompt(m.vocab, m.config, "pick up the red block", {},
                           PromptMode::kSuffix);
  DefenseConfig cfg;
  cfg.mode = DefenseMode::kLlmOnlyFilter;
  cfg.perplexity_threshold = 50.0;
  FilterDecision a = filter(m, p, cfg);
  FilterDecision b = filter(m, p, cfg);
  CHECK(a.accept == b.accept);
  CHECK(a.perplexity == b.perplexity);
}
