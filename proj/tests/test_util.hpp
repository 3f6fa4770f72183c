#pragma once

#include <string>
#include <vector>

#include "vrt/env.hpp"
#include "vrt/model.hpp"
#include "vrt/rng.hpp"

namespace vrt_test {

// Default-config model (512 vocab / 2 layers / d_model 64) with fixed stats.
inline vrt::VLAModel make_std_model(std::uint64_t seed) {
  vrt::ModelConfig cfg;
  vrt::NormalizationStats stats;
  stats.q01 = {-0.2, -0.2, -0.2, -0.15, -0.15, -0.15, -0.8};
  stats.q99 = {0.2, 0.2, 0.2, 0.15, 0.15, 0.15, 0.8};
  return vrt::VLAModel::init(cfg, vrt::Vocabulary::standard(), stats, seed);
}

// Tiny model for oracle tests: plain vocabulary (no reserved tokens), 2 dof.
// action_count = 0 leaves every token attackable (brute-force oracles);
// a positive count carves an action block off the end of the id range.
inline vrt::VLAModel make_tiny_model(std::uint64_t seed, int vocab_size = 8,
                                     int action_count = 0) {
  vrt::ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.action_token_count = action_count;
  cfg.dof = 2;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.max_text_tokens = 8;
  cfg.image_token_count = 4;
  cfg.image_size = 4;
  std::vector<std::string> tokens;
  for (int i = 0; i < vocab_size; ++i) tokens.push_back("t" + std::to_string(i));
  vrt::NormalizationStats stats;
  stats.q01 = {-1.0, -1.0};
  stats.q99 = {1.0, 1.0};
  return vrt::VLAModel::init(
      cfg, vrt::Vocabulary::from_parts(std::move(tokens), {}, action_count),
      stats, seed);
}

// Random but valid image embedding for a model.
inline vrt::Tensor random_z(const vrt::VLAModel& m, std::uint64_t seed) {
  vrt::Rng rng(seed);
  std::size_t n = static_cast<std::size_t>(m.config.image_token_count) *
                  m.config.d_model;
  std::vector<double> data(n);
  for (auto& v : data) v = 0.5 * rng.normal();
  return vrt::Tensor::from({static_cast<std::size_t>(m.config.image_token_count),
                            static_cast<std::size_t>(m.config.d_model)},
                           std::move(data));
}

// A manually assembled prompt for tiny models (bypasses the template).
inline vrt::Prompt make_tiny_prompt(std::vector<int> tokens,
                                    std::vector<int> attackable) {
  vrt::Prompt p;
  p.tokens = std::move(tokens);
  p.attack_positions = std::move(attackable);
  p.mode = vrt::PromptMode::kReplace;
  p.slot_begin = 0;
  p.slot_end = static_cast<int>(p.tokens.size());
  return p;
}

inline vrt::Tensor env_z(const vrt::VLAModel& m, int task = 0,
                         std::uint64_t seed = 0) {
  return vrt::encode_image(m, vrt::render(vrt::reset(task, seed)));
}

}  // namespace vrt_test
