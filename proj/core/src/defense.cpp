#include "vrt/defense.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace vrt {

const char* to_string(DefenseMode m) {
  switch (m) {
    case DefenseMode::kNone: return "none";
    case DefenseMode::kLlmOnlyFilter: return "ppl-llm";
    case DefenseMode::kMultimodalFilter: return "ppl-mm";
    case DefenseMode::kSmoothing: return "smooth";
  }
  return "?";
}

DefenseMode defense_mode_from_string(const std::string& s) {
  if (s == "none") return DefenseMode::kNone;
  if (s == "ppl-llm" || s == "llm_only") return DefenseMode::kLlmOnlyFilter;
  if (s == "ppl-mm" || s == "multimodal") return DefenseMode::kMultimodalFilter;
  if (s == "smooth" || s == "smoothing") return DefenseMode::kSmoothing;
  throw std::invalid_argument("unknown defense mode: " + s);
}

void DefenseConfig::validate() const {
  if (perturbation_rate < 0.0 || perturbation_rate > 1.0)
    throw std::invalid_argument("DefenseConfig: q must be in [0,1]");
  if (smoothing_copies < 1)
    throw std::invalid_argument("DefenseConfig: N must be >= 1");
  if ((mode == DefenseMode::kLlmOnlyFilter ||
       mode == DefenseMode::kMultimodalFilter) &&
      perplexity_threshold <= 0.0)
    throw std::invalid_argument(
        "DefenseConfig: filtering requires a positive threshold");
}

double perplexity(const VLAModel& model, const Prompt& prompt, DefenseMode mode,
                  const Tensor* z) {
  if (prompt.slot_end <= prompt.slot_begin)
    throw std::invalid_argument("perplexity: empty instruction slot");
  const Tensor* zz = nullptr;
  if (mode == DefenseMode::kMultimodalFilter) {
    if (z == nullptr)
      throw std::invalid_argument("perplexity: multimodal mode requires z");
    zz = z;
  }
  auto nlls =
      token_nlls(model, prompt.tokens, zz, prompt.slot_begin, prompt.slot_end);
  double mean = 0.0;
  for (double v : nlls) mean += v;
  mean /= static_cast<double>(nlls.size());
  return std::exp(mean);
}

double calibrate_threshold(const VLAModel& model,
                           const std::vector<std::string>& heldout_instructions,
                           DefenseMode mode, const Tensor* z) {
  if (heldout_instructions.empty())
    throw std::invalid_argument("calibrate_threshold: empty held-out set");
  double mx = 0.0;
  for (const auto& instruction : heldout_instructions) {
    Prompt p = render_prompt(model.vocab, model.config, instruction, {},
                             PromptMode::kSuffix);
    mx = std::max(mx, perplexity(model, p, mode, z));
  }
  return mx;
}

FilterDecision filter(const VLAModel& model, const Prompt& prompt,
                      const DefenseConfig& config, const Tensor* z) {
  config.validate();
  if (config.mode != DefenseMode::kLlmOnlyFilter &&
      config.mode != DefenseMode::kMultimodalFilter)
    throw std::invalid_argument("filter: config.mode is not a filter mode");
  FilterDecision d;
  d.threshold = config.perplexity_threshold;
  d.perplexity = perplexity(model, prompt, config.mode, z);
  d.accept = d.perplexity <= d.threshold;
  return d;
}

ActionTokens smooth_generate(const VLAModel& model, const Prompt& prompt,
                             const Tensor& z, const DefenseConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const auto& allowed = model.vocab.candidate_ids();
  const int dof = model.config.dof;
  const int n = config.smoothing_copies;

  std::vector<ActionTokens> decodes;
  decodes.reserve(n);
  for (int c = 0; c < n; ++c) {
    Prompt copy = prompt;
    for (int i = prompt.slot_begin; i < prompt.slot_end; ++i)
      if (rng.next_double() < config.perturbation_rate)
        copy.tokens[i] = allowed[rng.next_below(allowed.size())];
    decodes.push_back(generate_action(model, copy, z));
  }

  // Per-dimension majority vote over bins; ties resolve to the lowest bin.
  ActionTokens out(dof);
  for (int j = 0; j < dof; ++j) {
    std::vector<int> counts(model.vocab.action_token_count(), 0);
    for (const auto& d : decodes)
      counts[model.vocab.bin_for_action_id(d[j])]++;
    int best = 0;
    for (std::size_t b = 1; b < counts.size(); ++b)
      if (counts[b] > counts[best]) best = static_cast<int>(b);
    out[j] = model.vocab.action_id_for_bin(best);
  }
  return out;
}

DefenseDecision defended_generate(const VLAModel& model, const Prompt& prompt,
                                  const Tensor& z, const DefenseConfig& config) {
  config.validate();
  DefenseDecision d;
  d.mode = config.mode;
  switch (config.mode) {
    case DefenseMode::kNone:
      d.action = generate_action(model, prompt, z);
      break;
    case DefenseMode::kLlmOnlyFilter:
    case DefenseMode::kMultimodalFilter: {
      FilterDecision f = filter(model, prompt, config, &z);
      d.accepted = f.accept;
      d.perplexity = f.perplexity;
      d.threshold = f.threshold;
      if (f.accept) d.action = generate_action(model, prompt, z);
      break;
    }
    case DefenseMode::kSmoothing:
      d.action = smooth_generate(model, prompt, z, config);
      break;
  }
  return d;
}

void append_defense_log(const DefenseDecision& decision,
                        const std::string& path) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("append_defense_log: cannot open " + path);
  nlohmann::ordered_json j;
  j["mode"] = to_string(decision.mode);
  j["accepted"] = decision.accepted;
  j["perplexity"] = decision.perplexity;
  j["threshold"] = decision.threshold;
  if (decision.action) j["action_tokens"] = *decision.action;
  out << j.dump() << '\n';
}

}  // namespace vrt
