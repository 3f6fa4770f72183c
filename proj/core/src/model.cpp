#include "vrt/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "vrt/rng.hpp"
#include "model_internal.hpp"

namespace vrt {

namespace {

using MatRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapCM = Eigen::Map<const MatRM>;

Tensor init_normal(Shape shape, double sd, Rng& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> data(n);
  for (auto& v : data) v = sd * rng.normal();
  return Tensor::from(std::move(shape), std::move(data));
}

// Additive causal mask [t, t]: 0 on/below the diagonal, large negative above.
// -1e30 underflows to exactly 0 after softmax and keeps backward finite.
Tensor causal_mask(std::size_t t) {
  std::vector<double> m(t * t, 0.0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) m[i * t + j] = -1e30;
  return Tensor::from({t, t}, std::move(m));
}

// One pre-LN transformer block on the tape.
Tensor block_forward(const TransformerLayer& layer, const Tensor& x,
                     const Tensor& mask, int heads, int head_dim) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Tensor h = layer_norm(x, layer.ln1_gain, layer.ln1_bias);
  Tensor attn;
  for (int hd = 0; hd < heads; ++hd) {
    Tensor q = matmul(h, layer.wq[hd]);
    Tensor k = matmul(h, layer.wk[hd]);
    Tensor v = matmul(h, layer.wv[hd]);
    Tensor scores = add(scale(matmul(q, transpose(k)), inv_sqrt), mask);
    Tensor mixed = matmul(row_softmax(scores), v);
    Tensor out = matmul(mixed, layer.wo[hd]);
    attn = attn.defined() ? add(attn, out) : out;
  }
  Tensor x1 = add(x, attn);
  Tensor h2 = layer_norm(x1, layer.ln2_gain, layer.ln2_bias);
  Tensor m1 = gelu(add(matmul(h2, layer.mlp_w1), layer.mlp_b1));
  Tensor m2 = add(matmul(m1, layer.mlp_w2), layer.mlp_b2);
  return add(x1, m2);
}

}  // namespace

// --- config / stats -----------------------------------------------------------

void ModelConfig::validate() const {
  std::ostringstream bad;
  if (vocab_size < 1) bad << "vocab_size " << vocab_size;
  else if (action_token_count < 0 || action_token_count > vocab_size)
    bad << "action_token_count " << action_token_count;
  else if (dof < 1) bad << "dof " << dof;
  else if (image_token_count < 1) bad << "image_token_count " << image_token_count;
  else if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    bad << "d_model " << d_model << " / n_heads " << n_heads;
  else if (n_layers < 1) bad << "n_layers " << n_layers;
  else if (max_text_tokens < 1) bad << "max_text_tokens " << max_text_tokens;
  else if (image_size * image_size % image_token_count != 0)
    bad << "image_size " << image_size;
  if (!bad.str().empty())
    throw std::invalid_argument("ModelConfig: invalid " + bad.str());
}

void NormalizationStats::validate() const {
  if (q01.size() != q99.size())
    throw std::invalid_argument("NormalizationStats: q01/q99 size mismatch");
  for (std::size_t k = 0; k < q01.size(); ++k)
    if (!(q01[k] < q99[k]))
      throw std::invalid_argument("NormalizationStats: q01 >= q99 at dim " +
                                  std::to_string(k));
}

const char* to_string(PromptMode m) {
  return m == PromptMode::kSuffix ? "suffix" : "replace";
}

PromptMode prompt_mode_from_string(const std::string& s) {
  if (s == "suffix") return PromptMode::kSuffix;
  if (s == "replace") return PromptMode::kReplace;
  throw std::invalid_argument("unknown prompt mode: " + s);
}

// --- model construction ---------------------------------------------------------

VLAModel VLAModel::init(const ModelConfig& cfg, Vocabulary vocab,
                        NormalizationStats stats, std::uint64_t seed) {
  cfg.validate();
  stats.validate();
  if (vocab.size() != cfg.vocab_size ||
      vocab.action_token_count() != cfg.action_token_count)
    throw std::invalid_argument("VLAModel::init: vocabulary does not match config");
  if (static_cast<int>(stats.q01.size()) != cfg.dof)
    throw std::invalid_argument("VLAModel::init: stats dof mismatch");

  Rng rng(seed);
  const double sd = 0.02;
  const std::size_t dm = static_cast<std::size_t>(cfg.d_model);
  const std::size_t hd = static_cast<std::size_t>(cfg.head_dim());
  const std::size_t ff = 4 * dm;

  VLAModel m;
  m.config = cfg;
  m.vocab = std::move(vocab);
  m.stats = std::move(stats);
  m.tok_emb = init_normal({static_cast<std::size_t>(cfg.vocab_size), dm}, sd, rng);
  m.pos_emb = init_normal({static_cast<std::size_t>(cfg.max_seq_len()), dm}, sd, rng);
  m.patch_w = init_normal({static_cast<std::size_t>(cfg.patch_pixels()), dm}, sd, rng);
  m.patch_b = Tensor::zeros({dm});
  for (int l = 0; l < cfg.n_layers; ++l) {
    TransformerLayer layer;
    layer.ln1_gain = Tensor::full({dm}, 1.0);
    layer.ln1_bias = Tensor::zeros({dm});
    for (int h = 0; h < cfg.n_heads; ++h) {
      layer.wq.push_back(init_normal({dm, hd}, sd, rng));
      layer.wk.push_back(init_normal({dm, hd}, sd, rng));
      layer.wv.push_back(init_normal({dm, hd}, sd, rng));
      layer.wo.push_back(init_normal({hd, dm}, sd, rng));
    }
    layer.ln2_gain = Tensor::full({dm}, 1.0);
    layer.ln2_bias = Tensor::zeros({dm});
    layer.mlp_w1 = init_normal({dm, ff}, sd, rng);
    layer.mlp_b1 = Tensor::zeros({ff});
    layer.mlp_w2 = init_normal({ff, dm}, sd, rng);
    layer.mlp_b2 = Tensor::zeros({dm});
    m.layers.push_back(std::move(layer));
  }
  m.final_ln_gain = Tensor::full({dm}, 1.0);
  m.final_ln_bias = Tensor::zeros({dm});
  return m;
}

VLAModel VLAModel::clone() const {
  VLAModel c;
  c.config = config;
  c.vocab = vocab;
  c.stats = stats;
  auto copy = [](const Tensor& t) {
    return Tensor::from(t.shape(),
                        std::vector<double>(t.data().begin(), t.data().end()));
  };
  c.tok_emb = copy(tok_emb);
  c.pos_emb = copy(pos_emb);
  c.patch_w = copy(patch_w);
  c.patch_b = copy(patch_b);
  for (const auto& l : layers) {
    TransformerLayer nl;
    nl.ln1_gain = copy(l.ln1_gain);
    nl.ln1_bias = copy(l.ln1_bias);
    for (const auto& t : l.wq) nl.wq.push_back(copy(t));
    for (const auto& t : l.wk) nl.wk.push_back(copy(t));
    for (const auto& t : l.wv) nl.wv.push_back(copy(t));
    for (const auto& t : l.wo) nl.wo.push_back(copy(t));
    nl.ln2_gain = copy(l.ln2_gain);
    nl.ln2_bias = copy(l.ln2_bias);
    nl.mlp_w1 = copy(l.mlp_w1);
    nl.mlp_b1 = copy(l.mlp_b1);
    nl.mlp_w2 = copy(l.mlp_w2);
    nl.mlp_b2 = copy(l.mlp_b2);
    c.layers.push_back(std::move(nl));
  }
  c.final_ln_gain = copy(final_ln_gain);
  c.final_ln_bias = copy(final_ln_bias);
  return c;
}

std::vector<std::pair<std::string, Tensor*>> VLAModel::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("tok_emb", &tok_emb);
  out.emplace_back("pos_emb", &pos_emb);
  out.emplace_back("patch_w", &patch_w);
  out.emplace_back("patch_b", &patch_b);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& layer = layers[l];
    std::string p = "layer" + std::to_string(l) + ".";
    out.emplace_back(p + "ln1_gain", &layer.ln1_gain);
    out.emplace_back(p + "ln1_bias", &layer.ln1_bias);
    for (std::size_t h = 0; h < layer.wq.size(); ++h) {
      std::string hp = p + "h" + std::to_string(h) + ".";
      out.emplace_back(hp + "wq", &layer.wq[h]);
      out.emplace_back(hp + "wk", &layer.wk[h]);
      out.emplace_back(hp + "wv", &layer.wv[h]);
      out.emplace_back(hp + "wo", &layer.wo[h]);
    }
    out.emplace_back(p + "ln2_gain", &layer.ln2_gain);
    out.emplace_back(p + "ln2_bias", &layer.ln2_bias);
    out.emplace_back(p + "mlp_w1", &layer.mlp_w1);
    out.emplace_back(p + "mlp_b1", &layer.mlp_b1);
    out.emplace_back(p + "mlp_w2", &layer.mlp_w2);
    out.emplace_back(p + "mlp_b2", &layer.mlp_b2);
  }
  out.emplace_back("final_ln_gain", &final_ln_gain);
  out.emplace_back("final_ln_bias", &final_ln_bias);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> VLAModel::named_parameters()
    const {
  auto mut = const_cast<VLAModel*>(this)->named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [n, t] : mut) out.emplace_back(n, t);
  return out;
}

void VLAModel::set_requires_grad(bool on) {
  for (auto& [name, t] : named_parameters()) t->node()->requires_grad = on;
}

void VLAModel::zero_grad() {
  for (auto& [name, t] : named_parameters()) t->zero_grad();
}

// --- prompt rendering ------------------------------------------------------------

std::vector<int> tokenize_words(const Vocabulary& vocab,
                                const std::string& text) {
  std::vector<int> ids;
  std::istringstream is(text);
  std::string word;
  while (is >> word) {
    int id = vocab.lookup(word);
    if (id < 0)
      throw std::invalid_argument("tokenize_words: unknown word '" + word + "'");
    ids.push_back(id);
  }
  return ids;
}

Prompt render_prompt(const Vocabulary& vocab, const ModelConfig& cfg,
                     const std::string& instruction,
                     std::span<const int> suffix, PromptMode mode) {
  static const char* kPre[] = {"In:", "What", "action", "should",
                               "the", "robot", "take",  "to"};
  static const char* kPost[] = {"?", "\n", "Out:"};

  Prompt p;
  p.mode = mode;
  p.instruction = instruction;
  p.suffix.assign(suffix.begin(), suffix.end());

  std::vector<int> slot;
  if (mode == PromptMode::kSuffix) {
    slot = tokenize_words(vocab, instruction);
    slot.insert(slot.end(), suffix.begin(), suffix.end());
  } else {
    if (suffix.empty())
      throw std::invalid_argument(
          "render_prompt: replace mode requires slot tokens");
    slot.assign(suffix.begin(), suffix.end());
  }
  for (int id : slot)
    if (id < 0 || id >= vocab.size())
      throw std::out_of_range("render_prompt: token id out of range");

  p.tokens.push_back(vocab.begin_id());
  for (const char* w : kPre) p.tokens.push_back(vocab.lookup(w));
  p.slot_begin = static_cast<int>(p.tokens.size());
  p.tokens.insert(p.tokens.end(), slot.begin(), slot.end());
  p.slot_end = static_cast<int>(p.tokens.size());
  for (const char* w : kPost) p.tokens.push_back(vocab.lookup(w));

  if (static_cast<int>(p.tokens.size()) > cfg.max_text_tokens)
    throw std::invalid_argument(
        "render_prompt: rendered length " + std::to_string(p.tokens.size()) +
        " exceeds max_text_tokens " + std::to_string(cfg.max_text_tokens));

  const int suffix_len = static_cast<int>(suffix.size());
  if (mode == PromptMode::kSuffix) {
    for (int i = p.slot_end - suffix_len; i < p.slot_end; ++i)
      p.attack_positions.push_back(i);
  } else {
    for (int i = p.slot_begin; i < p.slot_end; ++i)
      p.attack_positions.push_back(i);
  }
  return p;
}

std::string prompt_text(const Vocabulary& vocab, const Prompt& prompt) {
  std::string out = "In: What action should the robot take to ";
  for (int i = prompt.slot_begin; i < prompt.slot_end; ++i) {
    if (i > prompt.slot_begin) out += ' ';
    out += vocab.token(prompt.tokens[i]);
  }
  out += "?\nOut:";
  return out;
}

// --- image encoder -----------------------------------------------------------------

Tensor encode_image(const VLAModel& model, const Image& image) {
  const ModelConfig& cfg = model.config;
  const int side = cfg.image_size;
  if (image.size != side ||
      static_cast<int>(image.pixels.size()) != side * side)
    throw std::invalid_argument("encode_image: expected " +
                                std::to_string(side) + "x" +
                                std::to_string(side) + " image");
  for (double v : image.pixels)
    if (v < 0.0 || v > 1.0)
      throw std::invalid_argument("encode_image: pixel outside [0,1]");

  const int grid = static_cast<int>(std::sqrt(double(cfg.image_token_count)));
  if (grid * grid != cfg.image_token_count)
    throw std::invalid_argument("encode_image: image_token_count not square");
  const int ps = side / grid;  // patch side

  const int dm = cfg.d_model;
  std::vector<double> out(static_cast<std::size_t>(cfg.image_token_count) * dm);
  std::vector<double> patch(static_cast<std::size_t>(ps) * ps);
  MapCM W(model.patch_w.data().data(), patch.size(), dm);
  auto bias = model.patch_b.data();
  for (int pr = 0; pr < grid; ++pr) {
    for (int pc = 0; pc < grid; ++pc) {
      for (int r = 0; r < ps; ++r)
        for (int c = 0; c < ps; ++c)
          patch[r * ps + c] = image.pixels[(pr * ps + r) * side + pc * ps + c];
      Eigen::Map<const Eigen::VectorXd> pv(patch.data(), patch.size());
      Eigen::VectorXd row = W.transpose() * pv;
      double* dst = out.data() + static_cast<std::size_t>(pr * grid + pc) * dm;
      for (int j = 0; j < dm; ++j) dst[j] = row[j] + bias[j];
    }
  }
  return Tensor::from({static_cast<std::size_t>(cfg.image_token_count),
                       static_cast<std::size_t>(dm)},
                      std::move(out));
}

// --- action tokenizer ----------------------------------------------------------------

int bin_for_value(double v01) {
  double raw = std::floor(255.0 * (v01 + 1.0) / 2.0 + 0.5);  // round half up
  if (raw < 0.0) return 0;
  if (raw > 255.0) return 255;
  return static_cast<int>(raw);
}

double value_for_bin(int bin) { return -1.0 + 2.0 * bin / 255.0; }

ActionTokens action_to_tokens(const ActionVector& a,
                              const NormalizationStats& stats,
                              const Vocabulary& vocab) {
  stats.validate();
  if (a.size() != stats.q01.size())
    throw std::invalid_argument("action_to_tokens: dof mismatch");
  ActionTokens t(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (!std::isfinite(a[k]))
      throw std::invalid_argument("action_to_tokens: non-finite action");
    double lo = stats.q01[k], hi = stats.q99[k];
    double clamped = std::min(std::max(a[k], lo), hi);
    double v = 2.0 * (clamped - lo) / (hi - lo) - 1.0;
    t[k] = vocab.action_id_for_bin(bin_for_value(v));
  }
  return t;
}

ActionVector tokens_to_action(const ActionTokens& t,
                              const NormalizationStats& stats,
                              const Vocabulary& vocab) {
  stats.validate();
  if (t.size() != stats.q01.size())
    throw std::invalid_argument("tokens_to_action: dof mismatch");
  ActionVector a(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    int bin = vocab.bin_for_action_id(t[k]);  // throws outside the action range
    double v = value_for_bin(bin);
    a[k] = stats.q01[k] + (v + 1.0) / 2.0 * (stats.q99[k] - stats.q01[k]);
  }
  return a;
}

// --- tape-based loss graph --------------------------------------------------------------

LossGraph build_loss_graph(const VLAModel& model, const Prompt& prompt,
                           const Tensor& z, const ActionTokens& target,
                           const LossGraphOptions& options) {
  const ModelConfig& cfg = model.config;
  const int m = cfg.image_token_count;
  const int n = static_cast<int>(prompt.tokens.size());
  const int d = static_cast<int>(target.size());
  if (d < 1) throw std::invalid_argument("build_loss_graph: empty target");
  if (z.shape() != Shape{static_cast<std::size_t>(m),
                         static_cast<std::size_t>(cfg.d_model)})
    throw ShapeError("build_loss_graph: bad image embedding shape");

  LossGraph g;

  Tensor z_in = options.image_leaf ? z.detached_leaf() : z;
  if (options.image_leaf) g.image_embeddings = z_in;
  Tensor x_img = add(z_in, slice_rows(model.pos_emb, 0, m));

  Tensor text_emb;
  if (options.text_embeddings_override != nullptr) {
    if (options.text_embeddings_override->shape() !=
        Shape{static_cast<std::size_t>(n), static_cast<std::size_t>(cfg.d_model)})
      throw ShapeError("build_loss_graph: bad text embedding override shape");
    text_emb = *options.text_embeddings_override;
  } else {
    text_emb = embedding_lookup(model.tok_emb, prompt.tokens);
  }
  if (options.text_embedding_leaf) {
    text_emb = text_emb.detached_leaf();
    g.text_embeddings = text_emb;
  }
  Tensor x_txt = add(text_emb, slice_rows(model.pos_emb, m, m + n));

  Tensor tgt_emb = embedding_lookup(model.tok_emb, target);
  Tensor x_tgt = add(tgt_emb, slice_rows(model.pos_emb, m + n, m + n + d));

  std::vector<Tensor> parts{x_img, x_txt, x_tgt};
  Tensor x = concat_rows(parts);
  const std::size_t t_len = static_cast<std::size_t>(m + n + d);
  Tensor mask = causal_mask(t_len);
  for (const auto& layer : model.layers)
    x = block_forward(layer, x, mask, cfg.n_heads, cfg.head_dim());
  Tensor hf = layer_norm(x, model.final_ln_gain, model.final_ln_bias);
  Tensor sel = slice_rows(hf, m + n - 1, m + n + d - 1);
  Tensor logits = matmul(sel, transpose(model.tok_emb));
  Tensor loss = cross_entropy_with_logits(logits, target);

  if (options.lm_weight > 0.0) {
    // Text-only branch: same rows and positional indices, no image rows.
    // Predicts tokens[1..n) from their prefixes.
    Tensor mask2 = causal_mask(static_cast<std::size_t>(n));
    Tensor x2 = x_txt;
    for (const auto& layer : model.layers)
      x2 = block_forward(layer, x2, mask2, cfg.n_heads, cfg.head_dim());
    Tensor hf2 = layer_norm(x2, model.final_ln_gain, model.final_ln_bias);
    Tensor sel2 = slice_rows(hf2, 0, n - 1);
    Tensor logits2 = matmul(sel2, transpose(model.tok_emb));
    std::vector<int> next(prompt.tokens.begin() + 1, prompt.tokens.end());
    Tensor lm = cross_entropy_with_logits(logits2, next);
    loss = add(loss, scale(lm, options.lm_weight));
  }

  g.loss = loss;
  return g;
}

Tensor onehot_gradient(const VLAModel& model, const Prompt& prompt,
                       const Tensor& z, const ActionTokens& target,
                       std::span<const int> positions) {
  if (positions.empty())
    throw std::invalid_argument("onehot_gradient: empty position set");
  const int n = static_cast<int>(prompt.tokens.size());
  for (int p : positions)
    if (p < 0 || p >= n)
      throw std::out_of_range("onehot_gradient: position outside prompt");

  LossGraphOptions opt;
  opt.text_embedding_leaf = true;
  LossGraph g = build_loss_graph(model, prompt, z, target, opt);
  backward(g.loss);

  const int dm = model.config.d_model;
  const int v = model.config.vocab_size;
  auto leaf_grad = g.text_embeddings.grad();
  std::vector<double> out(positions.size() * static_cast<std::size_t>(v));
  MapCM E(model.tok_emb.data().data(), v, dm);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    Eigen::Map<const Eigen::VectorXd> grow(
        leaf_grad.data() + static_cast<std::size_t>(positions[i]) * dm, dm);
    Eigen::Map<Eigen::VectorXd> orow(
        out.data() + i * static_cast<std::size_t>(v), v);
    orow = E * grow;
  }
  return Tensor::from({positions.size(), static_cast<std::size_t>(v)},
                      std::move(out));
}

}  // namespace vrt
