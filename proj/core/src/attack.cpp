#include "vrt/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace vrt {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// AND of per-term match masks; the attack matches exactly iff this equals the
// full-dimension mask (every dimension on every term).
std::uint32_t match_mask_over_terms(const AttackObjective& objective,
                                    const Prompt& prompt) {
  std::uint32_t mask = ~0u;
  for (const auto& term : objective.terms) {
    auto [ok, m] = check_exact_match(*term.model, prompt, term.z, term.target);
    mask &= m;
  }
  return mask;
}

std::uint32_t full_mask_for(const AttackObjective& objective) {
  return (1u << objective.terms[0].target.size()) - 1u;
}

double objective_loss(const AttackObjective& objective,
                      std::span<const BatchLossEvaluator> evals,
                      const Prompt& prompt) {
  double total = 0.0;
  for (std::size_t t = 0; t < objective.terms.size(); ++t)
    total += evals[t].eval_one(prompt.tokens);
  return total;
}

}  // namespace

void AttackConfig::validate() const {
  if (token_budget < 0 || top_k < 1 || candidate_batch < 1 || max_iters < 0)
    throw std::invalid_argument("AttackConfig: sizes must be positive");
}

void AttackObjective::validate() const {
  if (terms.empty())
    throw std::invalid_argument("AttackObjective: no terms");
  for (const auto& term : terms) {
    if (term.model == nullptr)
      throw std::invalid_argument("AttackObjective: null model");
    if (term.target.empty())
      throw std::invalid_argument("AttackObjective: empty target");
  }
  const int v0 = terms[0].model->config.vocab_size;
  for (const auto& term : terms)
    if (term.model->config.vocab_size != v0)
      throw std::invalid_argument(
          "AttackObjective: models must share vocabulary size");
}

GcgStep gcg_iteration(const AttackObjective& objective, const Prompt& prompt,
                      const AttackConfig& config, Rng& rng,
                      double incumbent_loss,
                      std::span<const BatchLossEvaluator> evaluators) {
  objective.validate();
  if (prompt.attack_positions.empty())
    throw std::invalid_argument("gcg_iteration: no attackable positions");

  const Vocabulary& vocab = objective.terms[0].model->vocab;
  const std::vector<int>& allowed = vocab.candidate_ids();
  if (allowed.empty())
    throw std::invalid_argument("gcg_iteration: no candidate tokens");
  const int n_pos = static_cast<int>(prompt.attack_positions.size());
  const int k = std::min<int>(config.top_k, static_cast<int>(allowed.size()));

  // (1) Aggregate one-hot gradient over the objective terms.
  const int v = vocab.size();
  std::vector<double> grad(static_cast<std::size_t>(n_pos) * v, 0.0);
  for (const auto& term : objective.terms) {
    Tensor g = onehot_gradient(*term.model, prompt, term.z, term.target,
                               prompt.attack_positions);
    auto gd = g.data();
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += gd[i];
  }

  // (2) Per position, the k most-negative entries among allowed tokens,
  // ties to the lowest id.
  std::vector<std::vector<int>> topk(n_pos);
  {
    std::vector<std::pair<double, int>> scored(allowed.size());
    for (int p = 0; p < n_pos; ++p) {
      const double* row = grad.data() + static_cast<std::size_t>(p) * v;
      for (std::size_t a = 0; a < allowed.size(); ++a)
        scored[a] = {row[allowed[a]], allowed[a]};
      std::partial_sort(scored.begin(), scored.begin() + k, scored.end());
      topk[p].reserve(k);
      for (int r = 0; r < k; ++r) topk[p].push_back(scored[r].second);
    }
  }

  // (3) Candidate batch: distinct (position, rank) substitutions; exhaustive
  // when the batch budget covers the whole grid.
  std::vector<std::pair<int, int>> picks;
  const long total = static_cast<long>(n_pos) * k;
  if (config.candidate_batch >= total) {
    picks.reserve(total);
    for (int p = 0; p < n_pos; ++p)
      for (int r = 0; r < k; ++r) picks.emplace_back(p, r);
  } else {
    std::unordered_set<long> seen;
    picks.reserve(config.candidate_batch);
    while (static_cast<int>(picks.size()) < config.candidate_batch) {
      int p = static_cast<int>(rng.next_below(n_pos));
      int r = static_cast<int>(rng.next_below(k));
      if (seen.insert(static_cast<long>(p) * k + r).second)
        picks.emplace_back(p, r);
    }
  }

  std::vector<std::vector<int>> candidates;
  candidates.reserve(picks.size());
  for (auto [p, r] : picks) {
    candidates.push_back(prompt.tokens);
    candidates.back()[prompt.attack_positions[p]] = topk[p][r];
  }

  // (4) Exact losses, summed over terms.
  std::vector<double> losses(candidates.size(), 0.0);
  {
    std::vector<double> term_losses(candidates.size());
    for (std::size_t t = 0; t < objective.terms.size(); ++t) {
      evaluators[t].eval(candidates, term_losses,
                         config.eval_threads <= 0
                             ? 0
                             : static_cast<std::size_t>(config.eval_threads));
      for (std::size_t c = 0; c < losses.size(); ++c)
        losses[c] += term_losses[c];
    }
  }

  // (5) Strict minimizer; ties keep the incumbent, then the lowest index.
  GcgStep out;
  out.prompt = prompt;
  out.best_loss = incumbent_loss;
  int best_c = -1;
  for (std::size_t c = 0; c < losses.size(); ++c)
    if (losses[c] < out.best_loss) {
      out.best_loss = losses[c];
      best_c = static_cast<int>(c);
    }
  if (best_c >= 0) {
    out.prompt.tokens = candidates[best_c];
    out.improved = true;
  }
  return out;
}

AttackResult run_attack(const AttackObjective& objective, Prompt initial,
                        const AttackConfig& config) {
  objective.validate();
  config.validate();
  const auto t0 = Clock::now();

  AttackResult result;
  result.prompt = std::move(initial);

  const std::uint32_t full_mask = full_mask_for(objective);

  // Degenerate budget: nothing to optimize; report the initial state.
  if (result.prompt.attack_positions.empty()) {
    double loss = 0.0;
    for (const auto& term : objective.terms)
      loss += target_loss(*term.model, result.prompt, term.z, term.target);
    result.best_loss_series.push_back(loss);
    result.matched_mask = match_mask_over_terms(objective, result.prompt);
    result.success = result.matched_mask == full_mask;
    result.wall_seconds = seconds_since(t0);
    result.log.push_back({0, loss, result.prompt.tokens, result.matched_mask,
                          result.wall_seconds});
    return result;
  }

  std::vector<BatchLossEvaluator> evals;
  evals.reserve(objective.terms.size());
  const int var_begin = result.prompt.attack_positions.front();
  for (const auto& term : objective.terms)
    evals.emplace_back(*term.model, term.z, result.prompt.tokens, var_begin,
                       term.target);

  Rng rng(config.seed);
  double incumbent = objective_loss(objective, evals, result.prompt);
  result.best_loss_series.push_back(incumbent);
  result.matched_mask = match_mask_over_terms(objective, result.prompt);
  result.success = config.early_stop && result.matched_mask == full_mask;
  result.log.push_back({0, incumbent, result.prompt.tokens,
                        result.matched_mask, seconds_since(t0)});

  for (int it = 1; it <= config.max_iters && !result.success; ++it) {
    GcgStep step =
        gcg_iteration(objective, result.prompt, config, rng, incumbent, evals);
    result.prompt = std::move(step.prompt);
    incumbent = step.best_loss;
    result.iterations_used = it;
    result.best_loss_series.push_back(incumbent);

    result.matched_mask = match_mask_over_terms(objective, result.prompt);
    result.log.push_back({it, incumbent, result.prompt.tokens,
                          result.matched_mask, seconds_since(t0)});
    if (config.early_stop && result.matched_mask == full_mask) {
      result.success = true;
      break;
    }
  }
  if (!config.early_stop) result.success = result.matched_mask == full_mask;
  result.wall_seconds = seconds_since(t0);
  return result;
}

Prompt initial_attack_prompt(const VLAModel& model,
                             const std::string& instruction,
                             const AttackConfig& config) {
  std::vector<int> fill(static_cast<std::size_t>(config.token_budget),
                        model.vocab.filler_id());
  return render_prompt(model.vocab, model.config, instruction, fill,
                       config.mode);
}

AttackResult single_step_attack(const VLAModel& model, const Tensor& z,
                                const ActionVector& target_action,
                                const std::string& instruction,
                                const AttackConfig& config) {
  AttackObjective obj;
  obj.terms.push_back(
      {&model, z, action_to_tokens(target_action, model.stats, model.vocab)});
  return run_attack(obj, initial_attack_prompt(model, instruction, config),
                    config);
}

AttackResult persistence_attack(const VLAModel& model,
                                std::span<const Tensor> seed_images,
                                const ActionVector& target_action,
                                const std::string& instruction,
                                const AttackConfig& config) {
  if (seed_images.empty())
    throw std::invalid_argument("persistence_attack: no seed images");
  AttackObjective obj;
  ActionTokens target =
      action_to_tokens(target_action, model.stats, model.vocab);
  for (const auto& z : seed_images) obj.terms.push_back({&model, z, target});
  return run_attack(obj, initial_attack_prompt(model, instruction, config),
                    config);
}

AttackResult ensemble_attack(std::span<const VLAModel* const> models,
                             std::span<const Tensor> per_model_z,
                             const std::vector<int>& target_bins,
                             const std::string& instruction,
                             const AttackConfig& config) {
  if (models.empty() || models.size() != per_model_z.size())
    throw std::invalid_argument("ensemble_attack: bad model/image lists");
  AttackObjective obj;
  for (std::size_t i = 0; i < models.size(); ++i) {
    ActionTokens target;
    target.reserve(target_bins.size());
    for (int bin : target_bins)
      target.push_back(models[i]->vocab.action_id_for_bin(bin));
    obj.terms.push_back({models[i], per_model_z[i], std::move(target)});
  }
  obj.validate();
  return run_attack(obj,
                    initial_attack_prompt(*models[0], instruction, config),
                    config);
}

std::pair<bool, std::uint32_t> check_exact_match(const VLAModel& model,
                                                 const Prompt& prompt,
                                                 const Tensor& z,
                                                 const ActionTokens& target) {
  ActionTokens decoded = generate_action(model, prompt, z);
  std::uint32_t mask = 0;
  bool all = true;
  for (std::size_t j = 0; j < target.size(); ++j) {
    if (j < decoded.size() && decoded[j] == target[j])
      mask |= (1u << j);
    else
      all = false;
  }
  return {all, mask};
}

std::vector<int> random_instruction(int budget, const Vocabulary& vocab,
                                    Rng& rng) {
  if (budget < 1)
    throw std::invalid_argument("random_instruction: budget must be >= 1");
  const auto& allowed = vocab.candidate_ids();
  std::vector<int> out(static_cast<std::size_t>(budget));
  for (auto& id : out) id = allowed[rng.next_below(allowed.size())];
  return out;
}

void write_attack_log(const AttackResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_attack_log: cannot open " + path);
  for (const auto& rec : result.log) {
    nlohmann::ordered_json j;
    j["iteration"] = rec.iteration;
    j["best_loss"] = rec.best_loss;
    j["tokens"] = rec.tokens;
    j["matched_mask"] = rec.matched_mask;
    j["elapsed_sec"] = rec.elapsed_sec;
    out << j.dump() << '\n';
  }
  nlohmann::ordered_json summary;
  summary["success"] = result.success;
  summary["iterations_used"] = result.iterations_used;
  summary["wall_seconds"] = result.wall_seconds;
  summary["matched_mask"] = result.matched_mask;
  summary["final_tokens"] = result.prompt.tokens;
  out << summary.dump() << '\n';
}

}  // namespace vrt
