#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vrt/model.hpp"
#include "vrt/rng.hpp"

namespace vrt {

struct AttackConfig {
  int token_budget = 20;     // |I|
  int top_k = 64;            // gradient-ranked substitutions per position
  int candidate_batch = 128; // exact evaluations per iteration
  int max_iters = 500;
  PromptMode mode = PromptMode::kReplace;
  std::uint64_t seed = 0;
  bool early_stop = true;
  int eval_threads = 0;

  void validate() const;
};

// One loss term: a model, an image embedding, and that model's target tokens.
struct ObjectiveTerm {
  const VLAModel* model = nullptr;
  Tensor z;
  ActionTokens target;
};

// Sum of teacher-forced losses over terms. Single-step attacks have one term;
// persistence attacks one term per seed image; ensemble attacks one per model
// (identical target bins realized with per-model stats).
struct AttackObjective {
  std::vector<ObjectiveTerm> terms;
  void validate() const;
};

struct IterationRecord {
  int iteration = 0;
  double best_loss = 0.0;
  std::vector<int> tokens;
  std::uint32_t matched_mask = 0;  // AND over terms; bit j = dimension j
  double elapsed_sec = 0.0;        // informational; excluded from determinism
};

struct AttackResult {
  Prompt prompt;  // final tokens in place
  std::vector<double> best_loss_series;  // [0] = initial loss, then per iter
  bool success = false;
  int iterations_used = 0;
  double wall_seconds = 0.0;
  std::uint32_t matched_mask = 0;
  std::vector<IterationRecord> log;
};

// One GCG step against `objective` at the prompt's attackable positions:
// summed one-hot gradients, per-position top-k most-negative entries
// (reserved and action tokens excluded, ties to the lowest id), a batch of
// deduplicated single-token substitutions (exhaustive when the batch covers
// every (position, rank) pair), exact batched re-ranking, and a strict-
// improvement update (ties keep the incumbent, then the lowest candidate
// index).
struct GcgStep {
  Prompt prompt;
  double best_loss = 0.0;
  bool improved = false;
};
GcgStep gcg_iteration(const AttackObjective& objective, const Prompt& prompt,
                      const AttackConfig& config, Rng& rng,
                      double incumbent_loss,
                      std::span<const BatchLossEvaluator> evaluators);

// Full attack loop with best-so-far tracking and (optional) early stop on an
// exact greedy-decode match across all terms, re-verified with a fresh
// forward pass each time.
AttackResult run_attack(const AttackObjective& objective, Prompt initial,
                        const AttackConfig& config);

// Eq.-style single fixed action under one image embedding.
AttackResult single_step_attack(const VLAModel& model, const Tensor& z,
                                const ActionVector& target_action,
                                const std::string& instruction,
                                const AttackConfig& config);

// Summed loss over r seed images; early stop requires a simultaneous match
// under every seed image.
AttackResult persistence_attack(const VLAModel& model,
                                std::span<const Tensor> seed_images,
                                const ActionVector& target_action,
                                const std::string& instruction,
                                const AttackConfig& config);

// Universal suffix across models sharing a vocabulary; `target_bins` are
// realized per model through that model's own stats.
AttackResult ensemble_attack(std::span<const VLAModel* const> models,
                             std::span<const Tensor> per_model_z,
                             const std::vector<int>& target_bins,
                             const std::string& instruction,
                             const AttackConfig& config);

// Greedy decode equals target, per dimension; overall = AND of dimensions.
std::pair<bool, std::uint32_t> check_exact_match(const VLAModel& model,
                                                 const Prompt& prompt,
                                                 const Tensor& z,
                                                 const ActionTokens& target);

// Uniform sample of non-reserved, non-action token ids.
std::vector<int> random_instruction(int budget, const Vocabulary& vocab,
                                    Rng& rng);

// Nominal prompt for a model plus the attack-mode initial prompt (suffix:
// instruction + budget fillers; replace: budget fillers as the whole slot).
Prompt initial_attack_prompt(const VLAModel& model,
                             const std::string& instruction,
                             const AttackConfig& config);

void write_attack_log(const AttackResult& result, const std::string& path);

}  // namespace vrt
