#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vrt/env.hpp"
#include "vrt/model.hpp"

namespace vrt {

struct TrainConfig {
  std::string dataset_path;     // JSONL trajectories (ignored with override)
  std::string init_checkpoint;  // continue from here when non-empty
  std::string out_checkpoint;   // written when non-empty (includes TrainState)
  std::string metrics_path;     // CSV (epoch, loss, holdout_accuracy)

  double lr = 1e-3;
  double lr_floor_factor = 0.05;  // cosine decay floor as a fraction of lr
  int batch_size = 32;
  int epochs = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  double lm_weight = 0.25;  // text-only LM auxiliary loss (backbone analog)
  double holdout_fraction = 0.1;
  std::uint64_t seed = 1;
  std::uint64_t init_seed = 7;  // weight init when starting fresh
  int threads = 0;              // gradient workers; bitwise-stable reduction
  bool recompute_stats = false; // refresh quantile stats from this dataset
  bool resume = false;          // continue a saved TrainState
  ModelConfig model_config;     // used when starting fresh

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double mean_loss = 0.0;
  double holdout_accuracy = 0.0;  // per-token, greedy over the action block
};

struct TrainResult {
  VLAModel model;
  TrainState state;
  std::vector<EpochMetrics> metrics;
  double final_holdout_accuracy = 0.0;
};

// Behavior cloning: teacher-forced cross-entropy of expert action tokens
// given (nominal prompt, rendered image), plus a text-only LM term so the
// backbone models its own instruction distribution. Deterministic given
// (config, dataset): identical seeds give bit-identical checkpoints.
TrainResult train(const TrainConfig& config,
                  const std::vector<Trajectory>* dataset_override = nullptr);

// Continues a base checkpoint on a narrow dataset and recomputes the
// normalization stats from it.
TrainResult finetune(const std::string& base_checkpoint,
                     const std::string& narrow_dataset_path,
                     TrainConfig config);

void write_metrics_csv(const std::vector<EpochMetrics>& metrics,
                       const std::string& path);

// Per-token holdout accuracy of greedy (action-masked) teacher-forced
// decoding.
double action_token_accuracy(const VLAModel& model,
                             const std::vector<Trajectory>& trajectories,
                             int threads = 0);

}  // namespace vrt
