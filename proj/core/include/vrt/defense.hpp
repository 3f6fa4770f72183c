#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vrt/model.hpp"
#include "vrt/rng.hpp"

namespace vrt {

enum class DefenseMode { kNone, kLlmOnlyFilter, kMultimodalFilter, kSmoothing };

const char* to_string(DefenseMode m);
DefenseMode defense_mode_from_string(const std::string& s);

struct DefenseConfig {
  DefenseMode mode = DefenseMode::kNone;
  double perplexity_threshold = 0.0;  // required for the filter modes
  int smoothing_copies = 6;           // N
  double perturbation_rate = 0.10;    // q
  std::uint64_t seed = 0;

  void validate() const;
};

struct FilterDecision {
  bool accept = true;
  double perplexity = 0.0;
  double threshold = 0.0;
};

// exp(mean NLL over the instruction-slot tokens). kLlmOnlyFilter conditions
// on the text-only prefix (image rows omitted); kMultimodalFilter prepends
// the image rows and needs z.
double perplexity(const VLAModel& model, const Prompt& prompt, DefenseMode mode,
                  const Tensor* z = nullptr);

// Held-out-max rule: the largest nominal-instruction perplexity observed.
double calibrate_threshold(const VLAModel& model,
                           const std::vector<std::string>& heldout_instructions,
                           DefenseMode mode, const Tensor* z = nullptr);

// Accept iff perplexity <= threshold (boundary inclusive).
FilterDecision filter(const VLAModel& model, const Prompt& prompt,
                      const DefenseConfig& config, const Tensor* z = nullptr);

// N perturbed copies (each instruction-slot token independently resampled
// with probability q), greedy decode each, per-dimension majority vote over
// bins (ties to the lowest bin).
ActionTokens smooth_generate(const VLAModel& model, const Prompt& prompt,
                             const Tensor& z, const DefenseConfig& config);

struct DefenseDecision {
  DefenseMode mode = DefenseMode::kNone;
  bool accepted = true;
  double perplexity = 0.0;
  double threshold = 0.0;
  std::optional<ActionTokens> action;  // absent when rejected
};

// Full defended decode: filters may reject (no action); smoothing always
// produces an action.
DefenseDecision defended_generate(const VLAModel& model, const Prompt& prompt,
                                  const Tensor& z, const DefenseConfig& config);

void append_defense_log(const DefenseDecision& decision, const std::string& path);

}  // namespace vrt
