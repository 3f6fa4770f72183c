#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "test_util.hpp"
#include "vrt/model.hpp"
#include "vrt/rng.hpp"

using namespace vrt;
using namespace vrt_test;

TEST_CASE("prompt template is byte-exact and deterministic") {
  Vocabulary vocab = Vocabulary::standard();
  ModelConfig cfg;
  Prompt p = render_prompt(vocab, cfg, "pick up the red block", {},
                           PromptMode::kSuffix);
  CHECK(prompt_text(vocab, p) ==
        "In: What action should the robot take to pick up the red block?\nOut:");
  CHECK(p.attack_positions.empty());  // empty suffix -> nominal prompt
  Prompt p2 = render_prompt(vocab, cfg, "pick up the red block", {},
                            PromptMode::kSuffix);
  CHECK(p.tokens == p2.tokens);

  // Golden token ids for the fixed template around the slot.
  CHECK(p.tokens[0] == vocab.begin_id());
  CHECK(p.tokens[1] == vocab.lookup("In:"));
  CHECK(p.tokens[8] == vocab.lookup("to"));
  CHECK(p.slot_begin == 9);
  CHECK(p.tokens[p.slot_end] == vocab.lookup("?"));
  CHECK(p.tokens[p.slot_end + 1] == vocab.lookup("\n"));
  CHECK(p.tokens[p.slot_end + 2] == vocab.lookup("Out:"));
  CHECK(static_cast<int>(p.tokens.size()) == p.slot_end + 3);
}

TEST_CASE("golden prompt token ids are stable") {
  // Frozen from the first run; guards the byte-stability of the rendering.
  Vocabulary vocab = Vocabulary::standard();
  ModelConfig cfg;
  Prompt p = render_prompt(vocab, cfg, "pick up the red block", {},
                           PromptMode::kSuffix);
  std::vector<int> golden{1, 3, 4, 5, 6, 7, 8, 9, 10, 14, 15, 7, 16, 17, 11, 12, 13};
  CHECK(p.tokens == golden);
}

TEST_CASE("replace mode: attackable set covers the whole slot") {
  Vocabulary vocab = Vocabulary::standard();
  ModelConfig cfg;
  std::vector<int> slot(20, vocab.filler_id());
  Prompt p = render_prompt(vocab, cfg, "pick up the red block", slot,
                           PromptMode::kReplace);
  CHECK(p.attack_positions.size() == 20);
  CHECK(p.attack_positions.front() == p.slot_begin);
  CHECK(p.attack_positions.back() == p.slot_end - 1);
  CHECK(p.slot_end - p.slot_begin == 20);
}

TEST_CASE("suffix mode: attackable set covers exactly the suffix") {
  Vocabulary vocab = Vocabulary::standard();
  ModelConfig cfg;
  std::vector<int> suffix(5, vocab.filler_id());
  Prompt p = render_prompt(vocab, cfg, "pick up the red block", suffix,
                           PromptMode::kSuffix);
  CHECK(p.attack_positions.size() == 5);
  // Suffix positions come after the 5 instruction words.
  CHECK(p.attack_positions.front() == p.slot_begin + 5);
  // The nominal instruction words are untouched by the attackable set.
  for (int pos : p.attack_positions) CHECK(pos >= p.slot_begin + 5);
}

TEST_CASE("render_prompt rejects overflow and unknown words") {
  Vocabulary vocab = Vocabulary::standard();
  ModelConfig cfg;
  std::vector<int> huge(40, vocab.filler_id());
  CHECK_THROWS_AS(render_prompt(vocab, cfg, "pick up the red block", huge,
                                PromptMode::kSuffix),
                  std::invalid_argument);
  CHECK_THROWS_AS(render_prompt(vocab, cfg, "grab the zorp", {},
                                PromptMode::kSuffix),
                  std::invalid_argument);
}

TEST_CASE("action tokenizer: bin centers round-trip on all 7x256 bins") {
  Vocabulary vocab = Vocabulary::standard();
  NormalizationStats stats;
  stats.q01 = {-0.6348214149475098, -0.7741071581840515, -0.7633928656578064,
               -0.09749999642372131, -0.4, -0.25, -0.9};
  stats.q99 = {0.6, 0.8, 0.75, 0.11, 0.45, 0.3, 0.95};
  for (int bin = 0; bin < 256; ++bin) {
    ActionTokens t(7, vocab.action_id_for_bin(bin));
    ActionVector a = tokens_to_action(t, stats, vocab);
    ActionTokens back = action_to_tokens(a, stats, vocab);
    CHECK(back == t);
  }
}

TEST_CASE("action tokenizer: clamping (Libero-10-style q01 fixture)") {
  Vocabulary vocab = Vocabulary::standard();
  NormalizationStats stats;
  stats.q01 = {-0.09749999642372131, -0.5, -0.5, -0.5, -0.5, -0.5, -0.5};
  stats.q99 = {0.7, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  // Any value at or below q01 lands in bin 0; at or above q99 in bin 255.
  for (double v : {-0.0975, -0.3, -1.0, stats.q01[0]}) {
    ActionVector a(7, 0.0);
    a[0] = v;
    CHECK(vocab.bin_for_action_id(action_to_tokens(a, stats, vocab)[0]) == 0);
  }
  ActionVector hi(7, 0.0);
  hi[0] = 0.9;
  CHECK(vocab.bin_for_action_id(action_to_tokens(hi, stats, vocab)[0]) == 255);
}

TEST_CASE("action tokenizer: endpoints, midpoint tie, bin 127") {
  Vocabulary vocab = Vocabulary::standard();
  NormalizationStats stats;
  stats.q01 = {-0.2, -0.2, -0.2, -0.2, -0.2, -0.2, -0.2};
  stats.q99 = {0.4, 0.4, 0.4, 0.4, 0.4, 0.4, 0.4};

  ActionVector at_q01(7, -0.2);
  for (int id : action_to_tokens(at_q01, stats, vocab))
    CHECK(vocab.bin_for_action_id(id) == 0);

  // Midpoint maps to v = 0 -> 127.5 rounds half-up to 128.
  ActionVector mid(7, 0.1);
  for (int id : action_to_tokens(mid, stats, vocab))
    CHECK(vocab.bin_for_action_id(id) == 128);

  ActionTokens bin0(7, vocab.action_id_for_bin(0));
  CHECK(tokens_to_action(bin0, stats, vocab)[0] == doctest::Approx(-0.2));
  ActionTokens bin255(7, vocab.action_id_for_bin(255));
  CHECK(tokens_to_action(bin255, stats, vocab)[0] == doctest::Approx(0.4));
  ActionTokens bin127(7, vocab.action_id_for_bin(127));
  double v127 = -1.0 + 254.0 / 255.0;
  CHECK(tokens_to_action(bin127, stats, vocab)[0] ==
        doctest::Approx(-0.2 + (v127 + 1.0) / 2.0 * 0.6).epsilon(1e-12));

  ActionTokens bad(7, 3);  // not an action id
  CHECK_THROWS_AS(tokens_to_action(bad, stats, vocab), std::out_of_range);
}

TEST_CASE("action tokenizer is monotone per coordinate") {
  Vocabulary vocab = Vocabulary::standard();
  NormalizationStats stats;
  stats.q01 = {-0.3, -0.3, -0.3, -0.3, -0.3, -0.3, -0.3};
  stats.q99 = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    ActionVector a(7), b(7);
    for (int k = 0; k < 7; ++k) {
      a[k] = rng.uniform(-1.0, 1.0);
      b[k] = a[k] + rng.uniform(0.0, 0.5);
    }
    ActionTokens ta = action_to_tokens(a, stats, vocab);
    ActionTokens tb = action_to_tokens(b, stats, vocab);
    for (int k = 0; k < 7; ++k) CHECK(tb[k] >= ta[k]);
  }
}

TEST_CASE("zero-weight model gives uniform logits and ln-vocab losses") {
  VLAModel m = make_std_model(1);
  for (auto& [name, t] : m.named_parameters())
    if (name.find("ln") == std::string::npos)  // keep LN gains at 1
      std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);

  Prompt p = render_prompt(m.vocab, m.config, "pick up the red block", {},
                           PromptMode::kSuffix);
  Tensor z = Tensor::zeros({16, 64});
  auto logits = forward_logits(m, p, z, {});
  for (double v : logits) CHECK(v == 0.0);

  ActionTokens target(7, m.vocab.action_id_for_bin(33));
  double loss = target_loss(m, p, z, target);
  CHECK(loss == doctest::Approx(7.0 * std::log(512.0)).epsilon(1e-12));

  // Greedy decode with all-equal logits resolves ties to the lowest action id.
  ActionTokens gen = generate_action(m, p, z);
  for (int id : gen) CHECK(id == m.vocab.action_begin());
}

TEST_CASE("target_loss equals sum of per-position cross entropies") {
  VLAModel m = make_std_model(42);
  Prompt p = render_prompt(m.vocab, m.config, "move the green cube to the left bin",
                           {}, PromptMode::kSuffix);
  Tensor z = env_z(m, 2, 9);
  Rng rng(77);
  ActionTokens target;
  for (int j = 0; j < 7; ++j)
    target.push_back(m.vocab.action_id_for_bin(
        static_cast<int>(rng.next_below(256))));

  // Oracle: manual teacher-forced loop over forward_logits.
  double manual = 0.0;
  ActionTokens prefix;
  for (int j = 0; j < 7; ++j) {
    auto logits = forward_logits(m, p, z, prefix);
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v - mx);
    manual += std::log(denom) + mx - logits[target[j]];
    prefix.push_back(target[j]);
  }

  double fast = target_loss(m, p, z, target);
  CHECK(std::abs(fast - manual) < 1e-9);

  LossGraph g = build_loss_graph(m, p, z, target);
  CHECK(std::abs(g.loss.item() - fast) < 1e-9);
}

TEST_CASE("generate_action matches manual argmax decode") {
  VLAModel m = make_std_model(101);
  Prompt p = render_prompt(m.vocab, m.config, "pick up the red block", {},
                           PromptMode::kSuffix);
  Tensor z = env_z(m, 0, 3);
  ActionTokens via_api = generate_action(m, p, z);

  ActionTokens manual;
  for (int j = 0; j < 7; ++j) {
    auto logits = forward_logits(m, p, z, manual);
    int best = m.vocab.action_begin();
    for (int id = m.vocab.action_begin() + 1; id < m.vocab.size(); ++id)
      if (logits[id] > logits[best]) best = id;
    manual.push_back(best);
  }
  CHECK(via_api == manual);
  CHECK(via_api == generate_action(m, p, z));  // deterministic
  for (int id : via_api) CHECK(m.vocab.is_action(id));
}

TEST_CASE("batched evaluator matches target_loss and is thread-invariant") {
  VLAModel m = make_std_model(55);
  std::vector<int> slot(10, m.vocab.filler_id());
  Prompt p = render_prompt(m.vocab, m.config, "pick up the red block", slot,
                           PromptMode::kReplace);
  Tensor z = env_z(m, 0, 4);
  ActionTokens target(7, m.vocab.action_id_for_bin(200));

  BatchLossEvaluator ev(m, z, p.tokens, p.attack_positions.front(), target);
  Rng rng(6);
  std::vector<std::vector<int>> cands;
  for (int c = 0; c < 70; ++c) {
    auto toks = p.tokens;
    int pos = p.attack_positions[rng.next_below(slot.size())];
    toks[pos] = m.vocab.candidate_ids()[rng.next_below(
        m.vocab.candidate_ids().size())];
    cands.push_back(std::move(toks));
  }
  std::vector<double> losses(cands.size()), losses1(cands.size());
  ev.eval(cands, losses, 2);
  ev.eval(cands, losses1, 1);
  CHECK(losses == losses1);  // bitwise identical for any thread count

  for (std::size_t c = 0; c < cands.size(); ++c) {
    Prompt pc = p;
    pc.tokens = cands[c];
    CHECK(std::abs(losses[c] - target_loss(m, pc, z, target)) < 1e-9);
  }
}

TEST_CASE("onehot gradient agrees with finite differences on the embedding path") {
  VLAModel m = make_std_model(31);
  std::vector<int> slot(6, m.vocab.filler_id());
  Prompt p = render_prompt(m.vocab, m.config, "pick up the red block", slot,
                           PromptMode::kReplace);
  Tensor z = env_z(m, 0, 8);
  ActionTokens target(7, m.vocab.action_id_for_bin(64));

  Tensor grad = onehot_gradient(m, p, z, target, p.attack_positions);
  CHECK(grad.rows() == slot.size());
  CHECK(grad.cols() == 512);

  // Base embeddings of the prompt.
  const int n = static_cast<int>(p.tokens.size());
  const int dm = m.config.d_model;
  std::vector<double> base(static_cast<std::size_t>(n) * dm);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dm; ++j)
      base[i * dm + j] = m.tok_emb.at(p.tokens[i], j);

  auto loss_at = [&](const std::vector<double>& emb) {
    Tensor override_t =
        Tensor::from({static_cast<std::size_t>(n), static_cast<std::size_t>(dm)},
                     emb);
    LossGraphOptions opt;
    opt.text_embeddings_override = &override_t;
    return build_loss_graph(m, p, z, target, opt).loss.item();
  };

  // Directional derivative along the embedding of a vocabulary token equals
  // that token's one-hot gradient entry.
  const double h = 1e-5;
  Rng rng(12);
  for (int trial = 0; trial < 6; ++trial) {
    int row = static_cast<int>(rng.next_below(slot.size()));
    int pos = p.attack_positions[row];
    int probe_tok = trial == 0
                        ? p.tokens[pos]  // currently-placed token
                        : m.vocab.candidate_ids()[rng.next_below(
                              m.vocab.candidate_ids().size())];
    std::vector<double> plus = base, minus = base;
    for (int j = 0; j < dm; ++j) {
      plus[pos * dm + j] += h * m.tok_emb.at(probe_tok, j);
      minus[pos * dm + j] -= h * m.tok_emb.at(probe_tok, j);
    }
    double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
    double entry = grad.at(row, probe_tok);
    CHECK(std::abs(entry - fd) / std::max(1.0, std::abs(fd)) < 1e-5);
  }
}

TEST_CASE("token_nlls ignores pad tokens past the rows being scored") {
  VLAModel m = make_std_model(71);
  Prompt p = render_prompt(m.vocab, m.config, "pick up the red block", {},
                           PromptMode::kSuffix);
  Tensor z = env_z(m, 0, 2);
  auto base = token_nlls(m, p.tokens, &z, p.slot_begin, p.slot_end);

  auto padded = p.tokens;
  padded.push_back(m.vocab.pad_id());
  padded.push_back(m.vocab.pad_id());
  auto with_pads = token_nlls(m, padded, &z, p.slot_begin, p.slot_end);
  CHECK(base == with_pads);
}

TEST_CASE("encode_image: zero image yields identical bias rows; locality") {
  VLAModel m = make_std_model(19);
  Image zero;
  zero.pixels.assign(256, 0.0);
  Tensor z = encode_image(m, zero);
  for (int r = 1; r < 16; ++r)
    for (int c = 0; c < 64; ++c) CHECK(z.at(r, c) == z.at(0, c));

  Image one = zero;
  one.pixels[5 * 16 + 3] = 1.0;  // patch row 1, patch col 0 -> patch index 4
  Tensor z2 = encode_image(m, one);
  for (int r = 0; r < 16; ++r) {
    bool differs = false;
    for (int c = 0; c < 64; ++c)
      if (z2.at(r, c) != z.at(r, c)) differs = true;
    CHECK(differs == (r == 4));
  }

  Image bad;
  bad.pixels.assign(64, 0.0);
  bad.size = 8;
  CHECK_THROWS_AS(encode_image(m, bad), std::invalid_argument);
}

TEST_CASE("checkpoint round-trips bit-exactly and rejects corruption") {
  VLAModel m = make_std_model(123);
  Prompt p = render_prompt(m.vocab, m.config, "pick up the red block", {},
                           PromptMode::kSuffix);
  Tensor z = env_z(m, 0, 5);
  auto logits_before = forward_logits(m, p, z, {});

  std::string path = "test_ckpt_roundtrip.bin";
  save_checkpoint(m, path);
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.model.config == m.config);
  CHECK(ck.model.vocab == m.vocab);
  CHECK(ck.model.stats == m.stats);
  auto logits_after = forward_logits(ck.model, p, z, {});
  CHECK(logits_before == logits_after);
  CHECK_FALSE(ck.train_state.has_value());

  // Truncated blob -> size mismatch error.
  {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    std::ofstream out("test_ckpt_trunc.bin", std::ios::binary);
    out.write(all.data(), static_cast<std::streamsize>(all.size() - 4096));
  }
  CHECK_THROWS_AS(load_checkpoint("test_ckpt_trunc.bin"), std::runtime_error);

  // Garbage header.
  {
    std::ofstream out("test_ckpt_bad.bin", std::ios::binary);
    out << "{not json\n";
  }
  CHECK_THROWS_AS(load_checkpoint("test_ckpt_bad.bin"), std::runtime_error);

  std::remove(path.c_str());
  std::remove("test_ckpt_trunc.bin");
  std::remove("test_ckpt_bad.bin");
}

TEST_CASE("tiny models work end to end (oracle-scale config)") {
  VLAModel m = make_tiny_model(9);
  Prompt p = make_tiny_prompt({0, 3, 5}, {1});
  Tensor z = random_z(m, 4);
  ActionTokens target{6, 2};
  double fast = target_loss(m, p, z, target);
  LossGraph g = build_loss_graph(m, p, z, target);
  CHECK(std::abs(fast - g.loss.item()) < 1e-10);

  BatchLossEvaluator ev(m, z, p.tokens, 1, target);
  CHECK(std::abs(ev.eval_one(p.tokens) - fast) < 1e-10);
}
