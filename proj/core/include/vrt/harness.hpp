#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vrt/attack.hpp"
#include "vrt/defense.hpp"
#include "vrt/env.hpp"
#include "vrt/model.hpp"

namespace vrt {

// --- one-hot target grid -------------------------------------------------------

struct TargetEntry {
  int dim = 0;
  int bin = 0;
};

struct TargetGrid {
  std::vector<TargetEntry> entries;

  // All dof x bins one-hot targets (1792 for the default action space).
  static TargetGrid full(int dof = 7, int bins = 256);
  // Seeded uniform subsample without replacement.
  static TargetGrid subsample(int n, std::uint64_t seed, int dof = 7,
                              int bins = 256);
};

// Zeros except entry.dim set to the bin-center value in environment units.
ActionVector realize_target(const TargetEntry& entry,
                            const NormalizationStats& stats,
                            const Vocabulary& vocab);

// --- shared experiment context ---------------------------------------------------

struct HarnessContext {
  int env_task = 0;
  std::uint64_t env_seed = 0;
  int burn_in_steps = 10;
  int workers = 0;  // parallelism over independent targets/rollouts
};

// Scene for attacks: reset + burn-in, then the first rollout image.
Tensor attack_image(const VLAModel& model, const HarnessContext& ctx);

// --- single-step evaluation (reachability tables) ---------------------------------

struct AttackRecord {
  TargetEntry entry;
  bool success = false;
  int iterations = 0;
  double seconds = 0.0;
  std::uint32_t matched_mask = 0;
  double final_loss = 0.0;
  std::vector<int> final_tokens;
};

struct EvalReport {
  std::vector<double> per_dimension_rate;
  double overall_rate = 0.0;
  double mean_iterations_per_success = 0.0;
  double mean_seconds_per_success = 0.0;
  int n_targets = 0;
  int n_success = 0;
};

struct SingleStepEval {
  EvalReport report;
  std::vector<AttackRecord> records;
};

// Runs single_step_attack per grid target (instruction = the context task's)
// and aggregates Table-1-style rates. Per-target seeds derive from
// config.seed and the target index, so results are independent of worker
// scheduling.
SingleStepEval eval_single_step(const VLAModel& model, const TargetGrid& grid,
                                const AttackConfig& config,
                                const HarnessContext& ctx);

EvalReport aggregate_records(std::span<const AttackRecord> records, int dof);

struct BudgetAblation {
  std::vector<int> budgets;
  std::vector<EvalReport> reports;  // same targets and per-target seeds
};

BudgetAblation budget_ablation(const VLAModel& model, const TargetGrid& grid,
                               const AttackConfig& base,
                               const HarnessContext& ctx,
                               std::vector<int> budgets = {5, 10, 15, 20});

// --- persistence rollouts -----------------------------------------------------------

enum class SeedStrategy { kBurnIn, kFirstSteps };
const char* to_string(SeedStrategy s);
SeedStrategy seed_strategy_from_string(const std::string& s);

struct RolloutStepRecord {
  int step = 0;  // burn-in probes count negative steps, rollout steps from 1
  std::uint64_t image_hash = 0;
  ActionTokens decoded;
  bool match = false;
  bool seen = false;         // image was in the optimization seed set
  bool burnin_probe = false; // decoded for the record, actuated randomly
};

struct RolloutTrace {
  std::vector<RolloutStepRecord> steps;
  std::vector<int> prompt_tokens;
  int horizon = 80;
  double seen_match_rate = 0.0;    // over seen steps (probes included)
  double unseen_match_rate = 0.0;  // over unseen rollout steps
  int seen_steps = 0;
};

// Seed images for a persistence attack under the given strategy: the last r
// burn-in frames, or the attacker's forward simulation of r steps under the
// target action from the post-burn-in state.
std::vector<Tensor> persistence_seed_images(const VLAModel& model,
                                            const HarnessContext& ctx,
                                            SeedStrategy strategy, int r,
                                            const ActionVector& target);

// Burn-in (with per-frame attacked-prompt probes), then `horizon` closed-loop
// steps decoding with the fixed prompt and evolving rendered images.
RolloutTrace attacked_rollout(const VLAModel& model, const Prompt& prompt,
                              const ActionTokens& target,
                              const HarnessContext& ctx, SeedStrategy strategy,
                              int r, const ActionVector& target_action,
                              int horizon = 80);

// Mean per-step frequency with which nominal (non-attacked) rollouts elicit
// the target, over n independent environment seeds.
double nominal_baseline(const VLAModel& model, const ActionTokens& target,
                        const HarnessContext& ctx, int n_rollouts = 50,
                        int horizon = 80);

struct ActionCensusEntry {
  ActionTokens action;
  int count = 0;
  double freq = 0.0;
};

// Decoded-action frequencies over nominal rollouts (persistence target
// selection helper).
std::vector<ActionCensusEntry> nominal_action_census(const VLAModel& model,
                                                     const HarnessContext& ctx,
                                                     int n_rollouts,
                                                     int horizon = 80);

struct PersistenceCell {
  int r = 1;
  SeedStrategy strategy = SeedStrategy::kBurnIn;
  bool attack_success = false;
  int iterations = 0;
  double seen_match_rate = 0.0;
  double unseen_match_rate = 0.0;
  double baseline = 0.0;
  double ratio_to_baseline = 0.0;  // unseen rate / baseline (inf -> large)
  int seen_steps = 0;
};

struct PersistenceReport {
  ActionTokens target;
  double baseline = 0.0;
  std::vector<PersistenceCell> cells;
};

PersistenceReport eval_persistence(const VLAModel& model,
                                   const ActionVector& target_action,
                                   const AttackConfig& attack_config,
                                   const HarnessContext& ctx,
                                   std::span<const int> rs,
                                   std::span<const SeedStrategy> strategies,
                                   int horizon = 80, int n_baseline = 50);

// --- transfer / ensemble -------------------------------------------------------------

struct TransferProbe {
  ActionTokens decoded;
  double l2_first6 = 0.0;  // normalized [-1,1] bin-value space, dims 0..5
};

struct TransferRecord {
  std::vector<int> target_bins;
  bool source_success = false;
  std::string target_model;
  TransferProbe nominal, optimized, random;
};

struct TransferKindSummary {
  // Mean normalized action per dimension (dims 0..5) and mean l2, split by
  // source convergence.
  std::vector<double> mean_action_converged, mean_action_unconverged;
  double mean_l2_converged = 0.0, mean_l2_unconverged = 0.0;
  int n_converged = 0, n_unconverged = 0;
};

struct TransferEval {
  std::vector<TransferRecord> records;
  TransferKindSummary nominal, optimized, random;
  int n_source_success = 0;
};

// For each grid target: optimize on the source models (ensemble when more
// than one), then probe every held-out model with nominal, optimized, and
// random prompts, recording l2 distances over the first six dimensions.
TransferEval eval_transfer(std::span<const VLAModel* const> sources,
                           std::span<const VLAModel* const> heldout,
                           std::span<const std::string> heldout_names,
                           const TargetGrid& grid, const AttackConfig& config,
                           const HarnessContext& ctx);

// --- defenses ---------------------------------------------------------------------------

struct DefenseCell {
  DefenseMode mode = DefenseMode::kNone;
  double asr = 0.0;               // rejection or mismatch counts as failure
  double nominal_pass_rate = 0.0; // catalog prompts accepted / preserved
  double threshold = 0.0;         // filters
  double auc = 0.0;               // nominal-vs-attacked perplexity separation
};

struct DefenseEval {
  std::vector<DefenseCell> cells;
  double undefended_asr = 0.0;
};

// ASR per defense over previously attacked targets (records provide the
// optimized prompts). Thresholds calibrate on the nominal catalog per the
// held-out-max rule.
DefenseEval eval_defenses(const VLAModel& model,
                          std::span<const AttackRecord> records,
                          const AttackConfig& attack_config,
                          const HarnessContext& ctx,
                          std::span<const DefenseMode> modes,
                          int smoothing_copies = 6,
                          double perturbation_rate = 0.10);

// --- fine-tune comparison and appendices -----------------------------------------------

struct ModelComparison {
  std::string name;
  double asr = 0.0;
  double pct_change_vs_base = 0.0;
  EvalReport report;
};

std::vector<ModelComparison> compare_base_vs_finetune(
    const VLAModel& base, std::span<const VLAModel* const> finetunes,
    std::span<const std::string> names, const TargetGrid& grid,
    const AttackConfig& config, const HarnessContext& ctx);

struct FailureCell {
  int dim = 0;
  int bin = 0;
  bool success = false;
  bool at_quantile_edge = false;  // bin 0/255: values clamp onto this bin
  bool zero_dim_clamped = false;  // 0 lies outside [q01,q99] on some dim
};

std::vector<FailureCell> failure_grid(std::span<const AttackRecord> records,
                                      const NormalizationStats& stats);

// Appendix-style suffix trials: +-1 one-hot targets (bins 0 and 255) on
// dimensions 0..5, suffix mode against the nominal instruction.
SingleStepEval suffix_mode_trials(const VLAModel& model,
                                  const AttackConfig& config,
                                  const HarnessContext& ctx);

}  // namespace vrt
