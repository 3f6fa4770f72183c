#include "vrt/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "model_internal.hpp"
#include "vrt/rng.hpp"
#include "vrt/threadpool.hpp"

namespace vrt {

namespace {

struct Sample {
  int task_id;
  const SceneState* state;
  const ActionVector* action;
};

struct Flattened {
  std::vector<Sample> train, holdout;
};

Flattened split_samples(const std::vector<Trajectory>& dataset,
                        double holdout_fraction) {
  Flattened out;
  int stride = holdout_fraction > 0.0
                   ? std::max(2, static_cast<int>(std::lround(1.0 / holdout_fraction)))
                   : 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    bool hold = stride > 0 && static_cast<int>(i % stride) == stride - 1;
    for (const auto& [state, action] : dataset[i].steps) {
      Sample s{dataset[i].task_id, &state, &action};
      (hold ? out.holdout : out.train).push_back(s);
    }
  }
  return out;
}

// Grad accumulation buffers in parameter order.
using GradVec = std::vector<std::vector<double>>;

GradVec make_grad_vec(const VLAModel& m) {
  GradVec g;
  for (const auto& [name, t] : m.named_parameters())
    g.emplace_back(t->size(), 0.0);
  return g;
}

// One sample's contribution added to the replica's parameter grads.
double accumulate_sample_grads(VLAModel& replica, const Prompt& prompt,
                               const Sample& s, double lm_weight) {
  Tensor z = encode_image(replica, render(*s.state));
  ActionTokens target = action_to_tokens(*s.action, replica.stats, replica.vocab);
  LossGraphOptions opt;
  opt.lm_weight = lm_weight;
  LossGraph g = build_loss_graph(replica, prompt, z, target, opt);
  double loss = g.loss.item();
  if (!std::isfinite(loss))
    throw std::runtime_error(
        "train: non-finite loss (divergence) at task " +
        std::to_string(s.task_id));
  backward(g.loss);
  return loss;
}

struct Adam {
  double lr, beta1, beta2, eps;
  std::int64_t step_count = 0;
  GradVec m, v;

  void step(VLAModel& model, const GradVec& grad) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    auto params = model.named_parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& w = params[p].second->mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        double gi = grad[p][i];
        m[p][i] = beta1 * m[p][i] + (1.0 - beta1) * gi;
        v[p][i] = beta2 * v[p][i] + (1.0 - beta2) * gi * gi;
        double mhat = m[p][i] / bc1;
        double vhat = v[p][i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

}  // namespace

void TrainConfig::validate() const {
  if (lr <= 0 || batch_size < 1 || epochs < 0 || clip_norm <= 0 ||
      holdout_fraction < 0 || holdout_fraction >= 1 || lm_weight < 0)
    throw std::invalid_argument("TrainConfig: rates and sizes must be positive");
}

double action_token_accuracy(const VLAModel& model,
                             const std::vector<Trajectory>& trajectories,
                             int threads) {
  std::vector<Sample> samples;
  for (const auto& traj : trajectories)
    for (const auto& [state, action] : traj.steps)
      samples.push_back({traj.task_id, &state, &action});
  if (samples.empty()) return 0.0;

  std::vector<Prompt> prompts;
  for (const auto& task : task_catalog())
    prompts.push_back(render_prompt(model.vocab, model.config, task.instruction,
                                    {}, PromptMode::kSuffix));

  std::atomic<long> hits{0};
  const int dof = model.config.dof;
  detail_fast::FastWeights fw(model);
  parallel_for(
      samples.size(),
      [&](std::size_t i) {
        const Sample& s = samples[i];
        const Prompt& prompt = prompts[s.task_id];
        Tensor z = encode_image(model, render(*s.state));
        ActionTokens target = action_to_tokens(*s.action, model.stats, model.vocab);

        detail_fast::KvState st;
        std::vector<double> x;
        detail_fast::embed_image(model, z, x);
        detail_fast::append_rows(fw, st, x, model.config.image_token_count);
        detail_fast::embed_tokens(model, prompt.tokens,
                                  model.config.image_token_count, x);
        detail_fast::append_rows(fw, st, x, static_cast<int>(prompt.tokens.size()));
        detail_fast::embed_tokens(
            model, target,
            model.config.image_token_count +
                static_cast<int>(prompt.tokens.size()),
            x);
        detail_fast::append_rows(fw, st, x, dof);

        const int base = model.config.image_token_count +
                         static_cast<int>(prompt.tokens.size()) - 1;
        std::vector<double> logits;
        long local = 0;
        for (int j = 0; j < dof; ++j) {
          detail_fast::row_logits(fw, st, base + j, logits);
          int best = model.vocab.action_begin();
          for (int id = best + 1; id < model.vocab.size(); ++id)
            if (logits[id] > logits[best]) best = id;
          if (best == target[j]) ++local;
        }
        hits.fetch_add(local, std::memory_order_relaxed);
      },
      threads <= 0 ? 0 : static_cast<std::size_t>(threads));

  return static_cast<double>(hits.load()) /
         (static_cast<double>(samples.size()) * dof);
}

TrainResult train(const TrainConfig& config,
                  const std::vector<Trajectory>* dataset_override) {
  config.validate();
  std::vector<Trajectory> owned;
  const std::vector<Trajectory>* dataset = dataset_override;
  if (dataset == nullptr) {
    owned = load_dataset(config.dataset_path);
    dataset = &owned;
  }
  if (dataset->empty()) throw std::invalid_argument("train: empty dataset");

  // Model: fresh init or continued from a checkpoint.
  TrainResult result;
  TrainState state;
  if (!config.init_checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(config.init_checkpoint);
    result.model = std::move(ck.model);
    if (config.resume && ck.train_state) state = std::move(*ck.train_state);
  } else {
    ModelConfig mc = config.model_config;
    NormalizationStats stats = compute_norm_stats(*dataset, mc.dof);
    result.model = VLAModel::init(mc, Vocabulary::standard(mc.vocab_size,
                                                           mc.action_token_count),
                                  std::move(stats), config.init_seed);
  }
  VLAModel& model = result.model;
  if (config.recompute_stats) {
    model.stats = compute_norm_stats(*dataset, model.config.dof);
  }

  Flattened split = split_samples(*dataset, config.holdout_fraction);
  if (split.train.empty()) throw std::invalid_argument("train: no training samples");

  std::vector<Prompt> prompts;
  for (const auto& task : task_catalog())
    prompts.push_back(render_prompt(model.vocab, model.config, task.instruction,
                                    {}, PromptMode::kSuffix));

  Adam adam{config.lr, config.beta1, config.beta2, config.adam_eps, 0, {}, {}};
  adam.m = make_grad_vec(model);
  adam.v = make_grad_vec(model);
  adam.step_count = state.adam_steps;
  {
    // Restore saved moments (resume path).
    auto params = model.named_parameters();
    auto restore = [&params](const auto& saved, GradVec& dst) {
      for (const auto& [name, buf] : saved)
        for (std::size_t p = 0; p < params.size(); ++p)
          if (params[p].first == name && params[p].second->size() == buf.size())
            dst[p] = buf;
    };
    restore(state.adam_m, adam.m);
    restore(state.adam_v, adam.v);
  }

  Rng rng(config.seed);
  if (config.resume && state.rng_state != 0) rng.set_state(state.rng_state);

  const std::size_t n_threads =
      config.threads > 0 ? static_cast<std::size_t>(config.threads)
                         : default_thread_count();
  constexpr int kChunk = 8;  // fixed chunking keeps reductions bit-stable

  std::vector<std::size_t> order(split.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<Trajectory> holdout_trajs;
  {
    int stride = config.holdout_fraction > 0.0
                     ? std::max(2, static_cast<int>(
                                       std::lround(1.0 / config.holdout_fraction)))
                     : 0;
    for (std::size_t i = 0; i < dataset->size(); ++i)
      if (stride > 0 && static_cast<int>(i % stride) == stride - 1)
        holdout_trajs.push_back((*dataset)[i]);
  }

  for (int epoch = static_cast<int>(state.epochs_done); epoch < config.epochs;
       ++epoch) {
    // Cosine decay over the configured epoch budget.
    if (config.epochs > 1) {
      double t = static_cast<double>(epoch) / (config.epochs - 1);
      double floor_lr = config.lr * config.lr_floor_factor;
      adam.lr = floor_lr + 0.5 * (config.lr - floor_lr) *
                               (1.0 + std::cos(3.141592653589793 * t));
    }
    // Fisher-Yates shuffle from the epoch's rng position.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = rng.next_below(i);
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::size_t bsize = end - start;
      const std::size_t n_chunks = (bsize + kChunk - 1) / kChunk;

      std::vector<GradVec> chunk_grads(n_chunks);
      std::vector<double> chunk_losses(n_chunks, 0.0);

      // Workers own a replica each; chunks are assigned round-robin so the
      // reduction order below never depends on scheduling.
      const std::size_t workers = std::min(n_threads, n_chunks);
      std::vector<std::thread> pool;
      std::exception_ptr first_error;
      std::mutex error_mutex;
      auto do_chunks = [&](std::size_t worker_id) {
        try {
          VLAModel replica = model.clone();
          replica.set_requires_grad(true);
          for (std::size_t c = worker_id; c < n_chunks; c += workers) {
            replica.zero_grad();
            double local_loss = 0.0;
            std::size_t lo = start + c * kChunk;
            std::size_t hi = std::min(end, lo + kChunk);
            for (std::size_t i = lo; i < hi; ++i) {
              const Sample& s = split.train[order[i]];
              local_loss += accumulate_sample_grads(replica, prompts[s.task_id],
                                                    s, config.lm_weight);
            }
            chunk_losses[c] = local_loss;
            GradVec g = make_grad_vec(replica);
            auto params = replica.named_parameters();
            for (std::size_t p = 0; p < params.size(); ++p)
              if (params[p].second->has_grad()) {
                auto grad = params[p].second->grad();
                std::copy(grad.begin(), grad.end(), g[p].begin());
              }
            chunk_grads[c] = std::move(g);
          }
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      };
      for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(do_chunks, w);
      do_chunks(0);
      for (auto& th : pool) th.join();
      if (first_error) std::rethrow_exception(first_error);

      // Deterministic reduction in chunk order, then mean over the batch.
      GradVec batch_grad = std::move(chunk_grads[0]);
      for (std::size_t c = 1; c < n_chunks; ++c)
        for (std::size_t p = 0; p < batch_grad.size(); ++p)
          for (std::size_t i = 0; i < batch_grad[p].size(); ++i)
            batch_grad[p][i] += chunk_grads[c][p][i];
      const double inv = 1.0 / static_cast<double>(bsize);
      double norm_sq = 0.0;
      for (auto& pg : batch_grad)
        for (auto& g : pg) {
          g *= inv;
          norm_sq += g * g;
        }
      const double norm = std::sqrt(norm_sq);
      if (norm > config.clip_norm) {
        const double scale = config.clip_norm / norm;
        for (auto& pg : batch_grad)
          for (auto& g : pg) g *= scale;
      }
      adam.step(model, batch_grad);

      for (double l : chunk_losses) epoch_loss += l;
      ++batches;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.mean_loss = epoch_loss / static_cast<double>(split.train.size());
    em.holdout_accuracy =
        holdout_trajs.empty()
            ? 0.0
            : action_token_accuracy(model, holdout_trajs,
                                    static_cast<int>(n_threads));
    result.metrics.push_back(em);
  }

  state.epochs_done = config.epochs;
  state.adam_steps = adam.step_count;
  state.rng_state = rng.state();
  state.adam_m.clear();
  state.adam_v.clear();
  {
    auto params = model.named_parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
      state.adam_m.emplace_back(params[p].first, adam.m[p]);
      state.adam_v.emplace_back(params[p].first, adam.v[p]);
    }
  }
  result.state = state;
  result.final_holdout_accuracy =
      result.metrics.empty() ? 0.0 : result.metrics.back().holdout_accuracy;

  model.set_requires_grad(false);
  if (!config.out_checkpoint.empty())
    save_checkpoint(model, config.out_checkpoint, &state);
  if (!config.metrics_path.empty())
    write_metrics_csv(result.metrics, config.metrics_path);
  return result;
}

TrainResult finetune(const std::string& base_checkpoint,
                     const std::string& narrow_dataset_path,
                     TrainConfig config) {
  config.init_checkpoint = base_checkpoint;
  config.dataset_path = narrow_dataset_path;
  config.recompute_stats = true;
  config.resume = false;
  return train(config);
}

void write_metrics_csv(const std::vector<EpochMetrics>& metrics,
                       const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  out << "epoch,loss,holdout_accuracy\n";
  char line[128];
  for (const auto& m : metrics) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g\n", m.epoch, m.mean_loss,
                  m.holdout_accuracy);
    out << line;
  }
}

}  // namespace vrt
