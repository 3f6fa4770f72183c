#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vrt/tensor.hpp"
#include "vrt/vocab.hpp"

namespace vrt {

// Discrete action tokens (ids in the vocabulary's action block) and their
// continuous counterpart in environment units.
using ActionTokens = std::vector<int>;
using ActionVector = std::vector<double>;

struct ModelConfig {
  int vocab_size = 512;
  int action_token_count = 256;
  int dof = 7;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int max_text_tokens = 48;
  int image_token_count = 16;
  int image_size = 16;  // square grayscale input, image_token_count patches

  int head_dim() const { return d_model / n_heads; }
  int patch_pixels() const {
    return image_size * image_size / image_token_count;
  }
  int max_seq_len() const { return image_token_count + max_text_tokens + dof; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Per-dimension 1st/99th training quantiles, environment units.
struct NormalizationStats {
  std::vector<double> q01, q99;
  void validate() const;
  bool operator==(const NormalizationStats&) const = default;
};

enum class PromptMode { kSuffix, kReplace };

const char* to_string(PromptMode m);
PromptMode prompt_mode_from_string(const std::string& s);

// Rendered token sequence with its attackable position set.
struct Prompt {
  std::vector<int> tokens;            // x_{1:n}
  std::vector<int> attack_positions;  // sorted indices into tokens
  PromptMode mode = PromptMode::kSuffix;
  std::string instruction;            // nominal instruction G
  std::vector<int> suffix;            // S: appended (suffix) or slot (replace)
  int slot_begin = 0, slot_end = 0;   // instruction-slot range [begin, end)
};

// 16x16 grayscale observation, row-major, values in [0, 1].
struct Image {
  std::vector<double> pixels;
  int size = 16;
};

struct TransformerLayer {
  Tensor ln1_gain, ln1_bias;
  std::vector<Tensor> wq, wk, wv;  // per head [d_model, head_dim]
  std::vector<Tensor> wo;          // per head [head_dim, d_model]
  Tensor ln2_gain, ln2_bias;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// The toy VLA: token/patch embeddings, a small causal transformer over
// [image tokens; text tokens; action tokens], and an output head tied to the
// token embedding matrix. Immutable during inference; all operations are pure
// functions of (model, inputs), so a loaded model is safely shared across
// threads.
struct VLAModel {
  ModelConfig config;
  Vocabulary vocab;
  NormalizationStats stats;

  Tensor tok_emb;   // [V, d_model]; also the output projection (tied)
  Tensor pos_emb;   // [max_seq_len, d_model]
  Tensor patch_w;   // [patch_pixels, d_model]
  Tensor patch_b;   // [d_model]
  std::vector<TransformerLayer> layers;
  Tensor final_ln_gain, final_ln_bias;

  static VLAModel init(const ModelConfig& cfg, Vocabulary vocab,
                       NormalizationStats stats, std::uint64_t seed);
  VLAModel clone() const;

  // Checkpoint manifest order; names are stable across versions.
  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;
  void set_requires_grad(bool on);
  void zero_grad();
};

// --- prompt / image front end ----------------------------------------------

// Renders `In: What action should the robot take to {INSTRUCTION}?\nOut:`.
// Suffix mode: slot = instruction words + suffix tokens, attackable set =
// exactly the suffix positions. Replace mode: slot = the given tokens
// (instruction kept only as metadata), attackable set = the whole slot.
Prompt render_prompt(const Vocabulary& vocab, const ModelConfig& cfg,
                     const std::string& instruction,
                     std::span<const int> suffix, PromptMode mode);

// The exact template string for a prompt (byte-stable).
std::string prompt_text(const Vocabulary& vocab, const Prompt& prompt);

// Whitespace tokenization against the vocabulary; unknown word -> error.
std::vector<int> tokenize_words(const Vocabulary& vocab,
                                const std::string& text);

// Patchify + linear projection; [image_token_count, d_model].
Tensor encode_image(const VLAModel& model, const Image& image);

// --- action tokenizer --------------------------------------------------------

// clamp to [q01, q99], affine to [-1, 1], bin = round-half-up of
// 255*(v+1)/2 clamped to [0, 255], id = |V| - 256 + bin.
ActionTokens action_to_tokens(const ActionVector& a,
                              const NormalizationStats& stats,
                              const Vocabulary& vocab);
// bin i -> v = -1 + 2i/255 -> a_k = q01 + (v+1)/2 * (q99 - q01).
ActionVector tokens_to_action(const ActionTokens& t,
                              const NormalizationStats& stats,
                              const Vocabulary& vocab);
int bin_for_value(double v01);  // helper: [-1,1] -> bin, round half up
double value_for_bin(int bin);  // helper: bin -> [-1,1]

// --- inference ---------------------------------------------------------------

// Next-token logits over the full vocabulary given [image; prompt; generated].
std::vector<double> forward_logits(const VLAModel& model, const Prompt& prompt,
                                   const Tensor& z,
                                   const ActionTokens& generated);

// Greedy d-token decode; non-action logits are masked out, ties take the
// lowest id.
ActionTokens generate_action(const VLAModel& model, const Prompt& prompt,
                             const Tensor& z);

// Teacher-forced attack objective: -sum_j log Pr[target_j | prefix; z], with
// probabilities from the full-vocabulary softmax.
double target_loss(const VLAModel& model, const Prompt& prompt, const Tensor& z,
                   const ActionTokens& target);

// Per-token NLLs of tokens[begin..end) given their prefix. Multimodal when z
// is non-null (image rows prepended), text-only otherwise. Text rows keep the
// same positional indices in both variants.
std::vector<double> token_nlls(const VLAModel& model,
                               std::span<const int> tokens, const Tensor* z,
                               int begin, int end);

// d(target_loss)/d(one-hot indicator) at each listed text position:
// [positions.size(), V], row = tok_emb * d(loss)/d(embedding at position).
Tensor onehot_gradient(const VLAModel& model, const Prompt& prompt,
                       const Tensor& z, const ActionTokens& target,
                       std::span<const int> positions);

// --- tape-based loss graph (training / gradient checks) ----------------------

struct LossGraphOptions {
  bool text_embedding_leaf = false;  // expose d(loss)/d(text embeddings)
  double lm_weight = 0.0;  // adds text-only next-token LM loss when > 0
  bool image_leaf = false; // expose d(loss)/d(z)
  // Evaluate at explicit text embeddings instead of looking the prompt
  // tokens up (finite-difference probes along the embedding path).
  const Tensor* text_embeddings_override = nullptr;
};

struct LossGraph {
  Tensor loss;             // scalar
  Tensor text_embeddings;  // leaf, defined iff text_embedding_leaf
  Tensor image_embeddings; // leaf, defined iff image_leaf
};

LossGraph build_loss_graph(const VLAModel& model, const Prompt& prompt,
                           const Tensor& z, const ActionTokens& target,
                           const LossGraphOptions& options = {});

// --- batched candidate evaluation (attack hot path) ---------------------------

// Evaluates the teacher-forced target loss for many variants of one prompt
// that share all tokens before `var_begin`. The shared prefix (image rows +
// frozen text rows) is run once and its attention K/V reused. Results are
// bitwise independent of the thread count.
class BatchLossEvaluator {
 public:
  BatchLossEvaluator(const VLAModel& model, Tensor z,
                     std::span<const int> prompt_tokens, int var_begin,
                     ActionTokens target);
  ~BatchLossEvaluator();
  BatchLossEvaluator(BatchLossEvaluator&&) noexcept;
  BatchLossEvaluator& operator=(BatchLossEvaluator&&) noexcept;

  // candidates[i] is a full prompt token vector of the original length.
  void eval(std::span<const std::vector<int>> candidates,
            std::span<double> losses_out, std::size_t threads = 0) const;
  double eval_one(std::span<const int> prompt_tokens) const;

  int var_begin() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// --- checkpoint i/o -----------------------------------------------------------

// Optimizer/trainer state carried inside a checkpoint so training can resume
// bit-exactly from an epoch boundary.
struct TrainState {
  std::int64_t epochs_done = 0;
  std::int64_t adam_steps = 0;
  std::uint64_t rng_state = 0;
  std::vector<std::pair<std::string, std::vector<double>>> adam_m, adam_v;
};

struct Checkpoint {
  VLAModel model;
  std::optional<TrainState> train_state;
};

// UTF-8 JSON header (config, vocabulary, stats, tensor manifest with shapes
// and byte offsets), one newline, then little-endian float64 blobs in
// manifest order.
void save_checkpoint(const VLAModel& model, const std::string& path,
                     const TrainState* train_state = nullptr);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace vrt
