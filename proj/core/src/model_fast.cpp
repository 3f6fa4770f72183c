#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "model_internal.hpp"
#include "vrt/model.hpp"
#include "vrt/threadpool.hpp"

namespace vrt {

namespace detail_fast {

namespace {

using MatRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;
using StrideT = Eigen::OuterStride<Eigen::Dynamic>;
using MapStride = Eigen::Map<MatRM, 0, StrideT>;
using MapCStride = Eigen::Map<const MatRM, 0, StrideT>;

constexpr double kLnEps = 1e-5;

void ln_rows(const double* x, double* out, int rows, int dm, const double* g,
             const double* b) {
  for (int i = 0; i < rows; ++i) {
    const double* r = x + static_cast<std::size_t>(i) * dm;
    double* o = out + static_cast<std::size_t>(i) * dm;
    double mean = 0.0;
    for (int j = 0; j < dm; ++j) mean += r[j];
    mean /= dm;
    double var = 0.0;
    for (int j = 0; j < dm; ++j) {
      double d = r[j] - mean;
      var += d * d;
    }
    var /= dm;
    double is = 1.0 / std::sqrt(var + kLnEps);
    for (int j = 0; j < dm; ++j) o[j] = g[j] * ((r[j] - mean) * is) + b[j];
  }
}

void gelu_rows(double* x, std::size_t n) {
  constexpr double c0 = 0.7978845608028653558798921198687;
  constexpr double c1 = 0.044715;
  for (std::size_t i = 0; i < n; ++i) {
    double v = x[i];
    x[i] = 0.5 * v * (1.0 + std::tanh(c0 * (v + c1 * v * v * v)));
  }
}

std::vector<double> flat(const Tensor& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

}  // namespace

FastWeights::FastWeights(const VLAModel& m) {
  dm = m.config.d_model;
  hd = m.config.head_dim();
  heads = m.config.n_heads;
  n_layers = m.config.n_layers;
  ff = 4 * dm;
  vocab = m.config.vocab_size;
  model = &m;
  for (const auto& l : m.layers) {
    Layer fl;
    fl.ln1g = flat(l.ln1_gain);
    fl.ln1b = flat(l.ln1_bias);
    fl.ln2g = flat(l.ln2_gain);
    fl.ln2b = flat(l.ln2_bias);
    fl.wqkv.assign(static_cast<std::size_t>(dm) * 3 * dm, 0.0);
    for (int h = 0; h < heads; ++h) {
      auto q = l.wq[h].data();
      auto k = l.wk[h].data();
      auto v = l.wv[h].data();
      for (int i = 0; i < dm; ++i)
        for (int j = 0; j < hd; ++j) {
          fl.wqkv[static_cast<std::size_t>(i) * 3 * dm + h * hd + j] =
              q[static_cast<std::size_t>(i) * hd + j];
          fl.wqkv[static_cast<std::size_t>(i) * 3 * dm + dm + h * hd + j] =
              k[static_cast<std::size_t>(i) * hd + j];
          fl.wqkv[static_cast<std::size_t>(i) * 3 * dm + 2 * dm + h * hd + j] =
              v[static_cast<std::size_t>(i) * hd + j];
        }
    }
    fl.wo.assign(static_cast<std::size_t>(dm) * dm, 0.0);
    for (int h = 0; h < heads; ++h) {
      auto o = l.wo[h].data();
      for (int i = 0; i < hd; ++i)
        for (int j = 0; j < dm; ++j)
          fl.wo[static_cast<std::size_t>(h * hd + i) * dm + j] =
              o[static_cast<std::size_t>(i) * dm + j];
    }
    fl.w1 = flat(l.mlp_w1);
    fl.b1 = flat(l.mlp_b1);
    fl.w2 = flat(l.mlp_w2);
    fl.b2 = flat(l.mlp_b2);
    layers.push_back(std::move(fl));
  }
  lnfg = flat(m.final_ln_gain);
  lnfb = flat(m.final_ln_bias);
}

void embed_tokens(const VLAModel& m, std::span<const int> ids, int pos0,
                  std::vector<double>& out) {
  const int dm = m.config.d_model;
  out.resize(ids.size() * static_cast<std::size_t>(dm));
  auto emb = m.tok_emb.data();
  auto pos = m.pos_emb.data();
  const int v = m.config.vocab_size;
  const int max_pos = m.config.max_seq_len();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0 || id >= v)
      throw std::out_of_range("embed_tokens: token id " + std::to_string(id));
    int p = pos0 + static_cast<int>(i);
    if (p < 0 || p >= max_pos)
      throw std::out_of_range("embed_tokens: sequence position " +
                              std::to_string(p) + " exceeds max length " +
                              std::to_string(max_pos));
    const double* e = emb.data() + static_cast<std::size_t>(id) * dm;
    const double* q = pos.data() + static_cast<std::size_t>(p) * dm;
    double* o = out.data() + i * dm;
    for (int j = 0; j < dm; ++j) o[j] = e[j] + q[j];
  }
}

void embed_image(const VLAModel& m, const Tensor& z, std::vector<double>& out) {
  const int dm = m.config.d_model;
  const int mtok = m.config.image_token_count;
  if (z.shape() != Shape{static_cast<std::size_t>(mtok),
                         static_cast<std::size_t>(dm)})
    throw ShapeError("embed_image: bad image embedding shape");
  out.resize(static_cast<std::size_t>(mtok) * dm);
  auto zv = z.data();
  auto pos = m.pos_emb.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = zv[i] + pos[i];  // positions 0..m-1 are the image rows
}

void append_rows(const FastWeights& fw, KvState& st, std::vector<double>& x,
                 int rows) {
  const int dm = fw.dm, hd = fw.hd, heads = fw.heads, ff = fw.ff;
  if (st.k.empty()) {
    st.k.resize(fw.n_layers);
    st.v.resize(fw.n_layers);
  }
  const int t0 = st.rows;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> h(static_cast<std::size_t>(rows) * dm);
  std::vector<double> qkv(static_cast<std::size_t>(rows) * 3 * dm);
  std::vector<double> att(static_cast<std::size_t>(rows) * dm);
  std::vector<double> m1(static_cast<std::size_t>(rows) * ff);
  std::vector<double> scores;

  for (int l = 0; l < fw.n_layers; ++l) {
    const auto& L = fw.layers[l];
    ln_rows(x.data(), h.data(), rows, dm, L.ln1g.data(), L.ln1b.data());
    {
      MapCM H(h.data(), rows, dm);
      MapCM W(L.wqkv.data(), dm, 3 * dm);
      MapM O(qkv.data(), rows, 3 * dm);
      O.noalias() = H * W;
    }
    auto& kc = st.k[l];
    auto& vc = st.v[l];
    kc.resize(static_cast<std::size_t>(t0 + rows) * dm);
    vc.resize(static_cast<std::size_t>(t0 + rows) * dm);
    for (int i = 0; i < rows; ++i) {
      const double* src = qkv.data() + static_cast<std::size_t>(i) * 3 * dm;
      std::copy_n(src + dm, dm, kc.data() + static_cast<std::size_t>(t0 + i) * dm);
      std::copy_n(src + 2 * dm, dm,
                  vc.data() + static_cast<std::size_t>(t0 + i) * dm);
    }
    // Attention row by row; each new row attends to keys 0..t0+i.
    for (int i = 0; i < rows; ++i) {
      const int keys = t0 + i + 1;
      scores.resize(keys);
      for (int hh = 0; hh < heads; ++hh) {
        const double* q =
            qkv.data() + static_cast<std::size_t>(i) * 3 * dm + hh * hd;
        MapCStride K(kc.data() + hh * hd, keys, hd, StrideT(dm));
        Eigen::Map<const Eigen::VectorXd> Q(q, hd);
        Eigen::Map<Eigen::VectorXd> S(scores.data(), keys);
        S.noalias() = K * Q;
        double mx = scores[0] * inv_sqrt;
        for (int j = 0; j < keys; ++j) {
          scores[j] *= inv_sqrt;
          mx = std::max(mx, scores[j]);
        }
        double denom = 0.0;
        for (int j = 0; j < keys; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          denom += scores[j];
        }
        MapCStride V(vc.data() + hh * hd, keys, hd, StrideT(dm));
        Eigen::Map<const Eigen::VectorXd> P(scores.data(), keys);
        Eigen::Map<Eigen::VectorXd> O(
            att.data() + static_cast<std::size_t>(i) * dm + hh * hd, hd);
        O.noalias() = (V.transpose() * P) / denom;
      }
    }
    {
      MapCM A(att.data(), rows, dm);
      MapCM W(L.wo.data(), dm, dm);
      MapM X(x.data(), rows, dm);
      X.noalias() += A * W;
    }
    ln_rows(x.data(), h.data(), rows, dm, L.ln2g.data(), L.ln2b.data());
    {
      MapCM H(h.data(), rows, dm);
      MapCM W1(L.w1.data(), dm, ff);
      MapM M1(m1.data(), rows, ff);
      M1.noalias() = H * W1;
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < ff; ++j)
          m1[static_cast<std::size_t>(i) * ff + j] += L.b1[j];
      gelu_rows(m1.data(), static_cast<std::size_t>(rows) * ff);
      MapCM M1c(m1.data(), rows, ff);
      MapCM W2(L.w2.data(), ff, dm);
      MapM X(x.data(), rows, dm);
      X.noalias() += M1c * W2;
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < dm; ++j)
          x[static_cast<std::size_t>(i) * dm + j] += L.b2[j];
    }
  }

  st.final_rows.resize(static_cast<std::size_t>(t0 + rows) * dm);
  std::copy_n(x.data(), static_cast<std::size_t>(rows) * dm,
              st.final_rows.data() + static_cast<std::size_t>(t0) * dm);
  st.rows = t0 + rows;
}

void row_logits(const FastWeights& fw, const KvState& st, int row,
                std::vector<double>& logits_out) {
  const int dm = fw.dm;
  std::vector<double> hrow(dm);
  ln_rows(st.final_rows.data() + static_cast<std::size_t>(row) * dm,
          hrow.data(), 1, dm, fw.lnfg.data(), fw.lnfb.data());
  logits_out.resize(fw.vocab);
  MapCM E(fw.model->tok_emb.data().data(), fw.vocab, dm);
  Eigen::Map<const Eigen::VectorXd> H(hrow.data(), dm);
  Eigen::Map<Eigen::VectorXd> L(logits_out.data(), fw.vocab);
  L.noalias() = E * H;
}

}  // namespace detail_fast

// --- public fast-path operations ---------------------------------------------

namespace {

using namespace detail_fast;

using MatRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;
using StrideT = Eigen::OuterStride<Eigen::Dynamic>;
using MapCStride = Eigen::Map<const MatRM, 0, StrideT>;

// Builds the full [image; text] state for a prompt.
void run_prompt(const VLAModel& model, const FastWeights& fw, const Prompt& p,
                const Tensor& z, KvState& st) {
  std::vector<double> x;
  embed_image(model, z, x);
  append_rows(fw, st, x, model.config.image_token_count);
  embed_tokens(model, p.tokens, model.config.image_token_count, x);
  append_rows(fw, st, x, static_cast<int>(p.tokens.size()));
}

double nll_from_logits(const std::vector<double>& logits, int label) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double denom = 0.0;
  for (double v : logits) denom += std::exp(v - mx);
  return std::log(denom) + mx - logits[label];
}

}  // namespace

std::vector<double> forward_logits(const VLAModel& model, const Prompt& prompt,
                                   const Tensor& z,
                                   const ActionTokens& generated) {
  if (static_cast<int>(generated.size()) >= model.config.dof)
    throw std::invalid_argument("forward_logits: generated length must be < dof");
  FastWeights fw(model);
  KvState st;
  run_prompt(model, fw, prompt, z, st);
  if (!generated.empty()) {
    std::vector<double> x;
    embed_tokens(model, generated,
                 model.config.image_token_count +
                     static_cast<int>(prompt.tokens.size()),
                 x);
    append_rows(fw, st, x, static_cast<int>(generated.size()));
  }
  std::vector<double> logits;
  row_logits(fw, st, st.rows - 1, logits);
  return logits;
}

ActionTokens generate_action(const VLAModel& model, const Prompt& prompt,
                             const Tensor& z) {
  if (model.vocab.action_token_count() < 1)
    throw std::invalid_argument(
        "generate_action: model has no action-token block");
  FastWeights fw(model);
  KvState st;
  run_prompt(model, fw, prompt, z, st);

  const int abeg = model.vocab.action_begin();
  const int aend = model.vocab.size();
  ActionTokens out;
  std::vector<double> logits, x;
  for (int j = 0; j < model.config.dof; ++j) {
    row_logits(fw, st, st.rows - 1, logits);
    // Non-action logits masked out; ties resolve to the lowest id.
    int best = abeg;
    for (int id = abeg + 1; id < aend; ++id)
      if (logits[id] > logits[best]) best = id;
    out.push_back(best);
    if (j + 1 < model.config.dof) {
      int ids[1] = {best};
      embed_tokens(model, ids,
                   model.config.image_token_count +
                       static_cast<int>(prompt.tokens.size()) + j,
                   x);
      append_rows(fw, st, x, 1);
    }
  }
  return out;
}

double target_loss(const VLAModel& model, const Prompt& prompt, const Tensor& z,
                   const ActionTokens& target) {
  if (target.empty()) throw std::invalid_argument("target_loss: empty target");
  FastWeights fw(model);
  KvState st;
  run_prompt(model, fw, prompt, z, st);
  std::vector<double> x;
  embed_tokens(model, target,
               model.config.image_token_count +
                   static_cast<int>(prompt.tokens.size()),
               x);
  append_rows(fw, st, x, static_cast<int>(target.size()));

  const int base = model.config.image_token_count +
                   static_cast<int>(prompt.tokens.size()) - 1;
  double loss = 0.0;
  std::vector<double> logits;
  for (std::size_t j = 0; j < target.size(); ++j) {
    row_logits(fw, st, base + static_cast<int>(j), logits);
    loss += nll_from_logits(logits, target[j]);
  }
  return loss;
}

std::vector<double> token_nlls(const VLAModel& model,
                               std::span<const int> tokens, const Tensor* z,
                               int begin, int end) {
  const int n = static_cast<int>(tokens.size());
  if (begin < 1 || end > n || begin > end)
    throw std::invalid_argument("token_nlls: bad range");
  FastWeights fw(model);
  KvState st;
  std::vector<double> x;
  int text_row0 = 0;
  if (z != nullptr) {
    embed_image(model, *z, x);
    append_rows(fw, st, x, model.config.image_token_count);
    text_row0 = model.config.image_token_count;
  }
  // Text rows keep their multimodal positional indices in both variants.
  embed_tokens(model, tokens, model.config.image_token_count, x);
  append_rows(fw, st, x, n);

  std::vector<double> out;
  std::vector<double> logits;
  for (int i = begin; i < end; ++i) {
    row_logits(fw, st, text_row0 + i - 1, logits);
    out.push_back(nll_from_logits(logits, tokens[i]));
  }
  return out;
}

// --- batched candidate evaluation ----------------------------------------------

struct BatchLossEvaluator::Impl {
  const VLAModel* model;
  FastWeights fw;
  Tensor z;
  std::vector<int> base_tokens;
  int var_begin;
  ActionTokens target;
  int n, d, m, var_text, var_total;
  KvState prefix;

  Impl(const VLAModel& mdl, Tensor zz, std::span<const int> toks, int vb,
       ActionTokens tgt)
      : model(&mdl),
        fw(mdl),
        z(std::move(zz)),
        base_tokens(toks.begin(), toks.end()),
        var_begin(vb),
        target(std::move(tgt)) {
    n = static_cast<int>(base_tokens.size());
    d = static_cast<int>(target.size());
    m = mdl.config.image_token_count;
    if (var_begin < 0 || var_begin >= n)
      throw std::invalid_argument("BatchLossEvaluator: var_begin out of range");
    if (d < 1) throw std::invalid_argument("BatchLossEvaluator: empty target");
    var_text = n - var_begin;
    var_total = var_text + d;

    std::vector<double> x;
    embed_image(mdl, z, x);
    append_rows(fw, prefix, x, m);
    if (var_begin > 0) {
      embed_tokens(mdl, std::span<const int>(base_tokens.data(), var_begin), m,
                   x);
      append_rows(fw, prefix, x, var_begin);
    }
  }

  // Evaluates one chunk of candidates (bounded size) with batched GEMMs.
  void eval_chunk(std::span<const std::vector<int>> cands,
                  std::span<double> out) const {
    const int c_count = static_cast<int>(cands.size());
    const int dm = fw.dm, hd = fw.hd, heads = fw.heads, ff = fw.ff;
    const int rows = c_count * var_total;
    const int p_rows = prefix.rows;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    std::vector<double> x(static_cast<std::size_t>(rows) * dm);
    std::vector<double> tmp;
    for (int c = 0; c < c_count; ++c) {
      const auto& toks = cands[c];
      if (static_cast<int>(toks.size()) != n)
        throw std::invalid_argument(
            "BatchLossEvaluator: candidate length mismatch");
      embed_tokens(*model,
                   std::span<const int>(toks.data() + var_begin, var_text),
                   m + var_begin, tmp);
      std::copy_n(tmp.data(), tmp.size(),
                  x.data() + static_cast<std::size_t>(c) * var_total * dm);
      embed_tokens(*model, target, m + n, tmp);
      std::copy_n(tmp.data(), tmp.size(),
                  x.data() + (static_cast<std::size_t>(c) * var_total +
                              var_text) *
                                 dm);
    }

    std::vector<double> h(static_cast<std::size_t>(rows) * dm);
    std::vector<double> qkv(static_cast<std::size_t>(rows) * 3 * dm);
    std::vector<double> att(static_cast<std::size_t>(rows) * dm);
    std::vector<double> m1(static_cast<std::size_t>(rows) * ff);
    std::vector<double> s1(static_cast<std::size_t>(var_total) * p_rows);
    std::vector<double> s2(static_cast<std::size_t>(var_total) * var_total);

    for (int l = 0; l < fw.n_layers; ++l) {
      const auto& L = fw.layers[l];
      ln_rows(x.data(), h.data(), rows, dm, L.ln1g.data(), L.ln1b.data());
      {
        MapCM H(h.data(), rows, dm);
        MapCM W(L.wqkv.data(), dm, 3 * dm);
        MapM O(qkv.data(), rows, 3 * dm);
        O.noalias() = H * W;
      }
      const auto& kp = prefix.k[l];
      const auto& vp = prefix.v[l];
      for (int c = 0; c < c_count; ++c) {
        double* qkv_c = qkv.data() +
                        static_cast<std::size_t>(c) * var_total * 3 * dm;
        for (int hh = 0; hh < heads; ++hh) {
          MapCStride Q(qkv_c + hh * hd, var_total, hd, StrideT(3 * dm));
          MapCStride Ko(qkv_c + dm + hh * hd, var_total, hd, StrideT(3 * dm));
          MapCStride Vo(qkv_c + 2 * dm + hh * hd, var_total, hd,
                        StrideT(3 * dm));
          MapM S2(s2.data(), var_total, var_total);
          S2.noalias() = Q * Ko.transpose();
          if (p_rows > 0) {
            MapCStride Kp(kp.data() + hh * hd, p_rows, hd, StrideT(dm));
            MapM S1(s1.data(), var_total, p_rows);
            S1.noalias() = Q * Kp.transpose();
          }
          // Row-wise masked softmax over [prefix | own<=i], then mix.
          for (int i = 0; i < var_total; ++i) {
            double* r1 = s1.data() + static_cast<std::size_t>(i) * p_rows;
            double* r2 = s2.data() + static_cast<std::size_t>(i) * var_total;
            double mx = -1e300;
            for (int j = 0; j < p_rows; ++j) {
              r1[j] *= inv_sqrt;
              mx = std::max(mx, r1[j]);
            }
            for (int j = 0; j <= i; ++j) {
              r2[j] *= inv_sqrt;
              mx = std::max(mx, r2[j]);
            }
            double denom = 0.0;
            for (int j = 0; j < p_rows; ++j) {
              r1[j] = std::exp(r1[j] - mx);
              denom += r1[j];
            }
            for (int j = 0; j <= i; ++j) {
              r2[j] = std::exp(r2[j] - mx);
              denom += r2[j];
            }
            for (int j = i + 1; j < var_total; ++j) r2[j] = 0.0;
            double inv_denom = 1.0 / denom;
            for (int j = 0; j < p_rows; ++j) r1[j] *= inv_denom;
            for (int j = 0; j <= i; ++j) r2[j] *= inv_denom;
          }
          double* att_c = att.data() +
                          static_cast<std::size_t>(c) * var_total * dm;
          Eigen::Map<MatRM, 0, StrideT> O(att_c + hh * hd, var_total, hd,
                                          StrideT(dm));
          MapCM P2(s2.data(), var_total, var_total);
          O.noalias() = P2 * Vo;
          if (p_rows > 0) {
            MapCM P1(s1.data(), var_total, p_rows);
            MapCStride Vp(vp.data() + hh * hd, p_rows, hd, StrideT(dm));
            O.noalias() += P1 * Vp;
          }
        }
      }
      {
        MapCM A(att.data(), rows, dm);
        MapCM W(L.wo.data(), dm, dm);
        MapM X(x.data(), rows, dm);
        X.noalias() += A * W;
      }
      ln_rows(x.data(), h.data(), rows, dm, L.ln2g.data(), L.ln2b.data());
      {
        MapCM H(h.data(), rows, dm);
        MapCM W1(L.w1.data(), dm, ff);
        MapM M1(m1.data(), rows, ff);
        M1.noalias() = H * W1;
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < ff; ++j)
            m1[static_cast<std::size_t>(i) * ff + j] += L.b1[j];
        gelu_rows(m1.data(), static_cast<std::size_t>(rows) * ff);
        MapCM M1c(m1.data(), rows, ff);
        MapCM W2(L.w2.data(), ff, dm);
        MapM X(x.data(), rows, dm);
        X.noalias() += M1c * W2;
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < dm; ++j)
            x[static_cast<std::size_t>(i) * dm + j] += L.b2[j];
      }
    }

    // Teacher-forced rows: var index (var_text - 1 + j) predicts target[j].
    std::vector<double> sel(static_cast<std::size_t>(c_count) * d * dm);
    for (int c = 0; c < c_count; ++c)
      ln_rows(x.data() +
                  (static_cast<std::size_t>(c) * var_total + var_text - 1) * dm,
              sel.data() + static_cast<std::size_t>(c) * d * dm, d, dm,
              fw.lnfg.data(), fw.lnfb.data());
    std::vector<double> logits(static_cast<std::size_t>(c_count) * d *
                               fw.vocab);
    {
      MapCM S(sel.data(), c_count * d, dm);
      MapCM E(model->tok_emb.data().data(), fw.vocab, dm);
      MapM Lg(logits.data(), c_count * d, fw.vocab);
      Lg.noalias() = S * E.transpose();
    }
    for (int c = 0; c < c_count; ++c) {
      double loss = 0.0;
      for (int j = 0; j < d; ++j) {
        const double* row = logits.data() +
                            (static_cast<std::size_t>(c) * d + j) * fw.vocab;
        double mx = row[0];
        for (int t = 1; t < fw.vocab; ++t) mx = std::max(mx, row[t]);
        double denom = 0.0;
        for (int t = 0; t < fw.vocab; ++t) denom += std::exp(row[t] - mx);
        loss += std::log(denom) + mx - row[target[j]];
      }
      out[c] = loss;
    }
  }
};

BatchLossEvaluator::BatchLossEvaluator(const VLAModel& model, Tensor z,
                                       std::span<const int> prompt_tokens,
                                       int var_begin, ActionTokens target)
    : impl_(std::make_unique<Impl>(model, std::move(z), prompt_tokens,
                                   var_begin, std::move(target))) {}

BatchLossEvaluator::~BatchLossEvaluator() = default;
BatchLossEvaluator::BatchLossEvaluator(BatchLossEvaluator&&) noexcept = default;
BatchLossEvaluator& BatchLossEvaluator::operator=(BatchLossEvaluator&&) noexcept =
    default;

int BatchLossEvaluator::var_begin() const { return impl_->var_begin; }

void BatchLossEvaluator::eval(std::span<const std::vector<int>> candidates,
                              std::span<double> losses_out,
                              std::size_t threads) const {
  if (losses_out.size() != candidates.size())
    throw std::invalid_argument("BatchLossEvaluator::eval: size mismatch");
  // Fixed chunking keeps per-candidate arithmetic identical for any thread
  // count.
  constexpr std::size_t kChunk = 32;
  const std::size_t n_chunks = (candidates.size() + kChunk - 1) / kChunk;
  parallel_for(
      n_chunks,
      [&](std::size_t ci) {
        std::size_t lo = ci * kChunk;
        std::size_t hi = std::min(lo + kChunk, candidates.size());
        impl_->eval_chunk(candidates.subspan(lo, hi - lo),
                          losses_out.subspan(lo, hi - lo));
      },
      threads);
}

double BatchLossEvaluator::eval_one(std::span<const int> prompt_tokens) const {
  std::vector<std::vector<int>> one{{prompt_tokens.begin(), prompt_tokens.end()}};
  double loss = 0.0;
  impl_->eval_chunk(one, std::span<double>(&loss, 1));
  return loss;
}

}  // namespace vrt
