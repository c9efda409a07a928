// Network stages: parameter roster, encoders, detector/corrector heads,
// fusion blocks, classifier, losses, full passes, and gradient fidelity.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "mfaec/gradcheck.hpp"
#include "mfaec/model.hpp"
#include "mfaec/ops.hpp"
#include "mfaec/synthdata.hpp"
#include "test_util.hpp"

using namespace mfaec;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 12;
  c.n_emotions = 4;
  c.frame_dim = 4;
  c.downsample = 2;
  c.d = 8;
  c.heads = 2;
  c.enc_layers_speech = 1;
  c.enc_layers_text = 1;
  c.dec_max_len = 6;
  c.max_pos = 32;
  return c;
}

// Deterministic toy example consistent with tiny_config().
UtteranceExample tiny_example(uint64_t seed = 4, int len = 3, int m = 8) {
  Rng rng(seed);
  UtteranceExample ex;
  ex.id = static_cast<int64_t>(seed);
  ex.emotion = static_cast<int>(rng.below(4));
  ex.frame_dim = 4;
  ex.m = m;
  ex.frames = mfaec::testutil::random_values(rng, int64_t{m} * 4, 0.8);
  for (int i = 0; i < len; ++i)
    ex.transcript.push_back(Vocab::kNumReserved + static_cast<int>(rng.below(8)));
  ex.asr = ex.transcript;
  if (len >= 2) {
    // Substitute position 1 with a guaranteed-different token so the
    // labeling always contains a CHANGE and the corrector loss is live.
    int repl = Vocab::kNumReserved + static_cast<int>(rng.below(8));
    if (repl == ex.transcript[1])
      repl = Vocab::kNumReserved + (repl - Vocab::kNumReserved + 1) % 8;
    ex.asr[1] = repl;
  }
  return ex;
}

void zero_param(ModelParams& p, const std::string& name) {
  std::fill(p.set.at(name).values->begin(), p.set.at(name).values->end(), 0.0);
}

}  // namespace

// ---- config and parameters ----

TEST_CASE("model config validation") {
  ModelConfig c = tiny_config();
  c.heads = 3;  // does not divide d=8
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("head"), std::runtime_error);
  c = tiny_config();
  c.dec_max_len = 1;
  CHECK_THROWS(c.validate());
  c = tiny_config();
  c.dropout = 1.0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("dropout"), std::runtime_error);
  c = tiny_config();
  CHECK_NOTHROW(c.validate());
  ModelConfig back = ModelConfig::from_kv(c.to_kv());
  CHECK(back == c);
}

TEST_CASE("parameter roster matches init across modes") {
  ModelConfig c = tiny_config();
  for (AblationMode mode : {AblationMode::kFull, AblationMode::kNoAed,
                            AblationMode::kNoAec, AblationMode::kNoMf}) {
    CAPTURE(ablation_mode_name(mode));
    ModelParams params = init_params(c, mode, 1);
    auto expected = param_shapes(c, mode);
    REQUIRE(params.set.size() == expected.size());
    for (size_t i = 0; i < expected.size(); ++i) {
      CHECK(params.set[i].name == expected[i].first);
      CHECK(params.set[i].shape == expected[i].second);
    }
    std::set<std::string> names;
    for (const auto& [name, shape] : expected) CHECK(names.insert(name).second);
  }
}

TEST_CASE("mode rosters drop exactly the right tensors") {
  ModelConfig c = tiny_config();
  auto names = [&](AblationMode m) {
    auto v = param_names(c, m);
    return std::set<std::string>(v.begin(), v.end());
  };
  auto full = names(AblationMode::kFull);
  auto no_aed = names(AblationMode::kNoAed);
  auto no_aec = names(AblationMode::kNoAec);
  auto no_mf = names(AblationMode::kNoMf);

  CHECK(full.count("aed.fc.w"));
  CHECK_FALSE(no_aed.count("aed.fc.w"));
  CHECK(no_aed.count("aec.in.w"));
  CHECK_FALSE(no_aec.count("aec.out.w"));
  CHECK(no_aec.count("aed.fc.w"));
  CHECK_FALSE(no_mf.count("cme.s.attn.wq"));
  CHECK_FALSE(no_mf.count("mir.ln.g"));
  CHECK(no_mf.count("aed.fc.w"));  // aux heads still train in no-mf

  for (const auto& n : full) {
    const bool aux = is_aux_param(n);
    CHECK(aux == (n.rfind("aed.", 0) == 0 || n.rfind("aec.", 0) == 0));
  }
}

TEST_CASE("classifier input width doubles in no-mf mode") {
  ModelConfig c = tiny_config();
  ModelParams full = init_params(c, AblationMode::kFull, 1);
  ModelParams nomf = init_params(c, AblationMode::kNoMf, 1);
  CHECK(full.at("cls.fc.w").shape == std::vector<int>{4, 8});
  CHECK(nomf.at("cls.fc.w").shape == std::vector<int>{4, 16});
}

TEST_CASE("initialization rules: gains one, biases zero, prelu quarter, seeded") {
  ModelConfig c = tiny_config();
  ModelParams p = init_params(c, AblationMode::kFull, 9);
  for (double v : *p.at("spe.l0.ln1.g").values) CHECK(v == 1.0);
  for (double v : *p.at("spe.l0.ln1.b").values) CHECK(v == 0.0);
  for (double v : *p.at("cls.fc.b").values) CHECK(v == 0.0);
  for (double v : *p.at("mir.s.prelu").values) CHECK(v == 0.25);
  bool any_nonzero = false;
  for (double v : *p.at("emb.te").values) any_nonzero |= v != 0.0;
  CHECK(any_nonzero);

  ModelParams q = init_params(c, AblationMode::kFull, 9);
  CHECK(*q.at("emb.te").values == *p.at("emb.te").values);  // same seed
  ModelParams r = init_params(c, AblationMode::kFull, 10);
  CHECK(*r.at("emb.te").values != *p.at("emb.te").values);
}

// ---- encoders ----

TEST_CASE("encode_speech downsamples and reports shape (m/ds, d)") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 2);
  Tape tape;
  ParamBinder bind(tape);
  std::vector<double> frames(8 * 4, 0.5);
  Tensor h = encode_speech(tape, bind, params, frames, 8, 4);
  CHECK(h.shape == std::vector<int>{4, 8});

  CHECK_THROWS_WITH_AS(encode_speech(tape, bind, params, {0.0, 0.0, 0.0, 0.0}, 1, 4),
                       doctest::Contains("shorter"), std::runtime_error);
}

TEST_CASE("encode_speech of zero frames is finite and deterministic") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 2);
  auto run = [&] {
    Tape tape;
    ParamBinder bind(tape);
    std::vector<double> frames(8 * 4, 0.0);
    Tensor h = encode_speech(tape, bind, params, frames, 8, 4);
    std::vector<double> out(h.values->begin(), h.values->end());
    return out;
  };
  auto a = run();
  for (double v : a) CHECK(std::isfinite(v));
  CHECK(a == run());
}

TEST_CASE("encode_text shape, vocabulary checks, and capacity checks") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 2);
  Tape tape;
  ParamBinder bind(tape);
  Tensor h = encode_text(tape, bind, params, {4, 5, 6});
  CHECK(h.shape == std::vector<int>{3, 8});

  CHECK_THROWS_WITH_AS(encode_text(tape, bind, params, {4, 99}),
                       doctest::Contains("vocab"), std::runtime_error);
  TokenSequence too_long(static_cast<size_t>(c.max_pos) + 1, 4);
  CHECK_THROWS_WITH_AS(encode_text(tape, bind, params, too_long),
                       doctest::Contains("capacity"), std::runtime_error);
}

TEST_CASE("position embedding makes token order matter") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 3);
  Tape tape;
  ParamBinder bind(tape);
  Tensor a = encode_text(tape, bind, params, {4, 5});
  Tensor b = encode_text(tape, bind, params, {5, 4});
  bool differs = false;
  for (int64_t i = 0; i < a.numel(); ++i) differs |= a.at(i) != b.at(i);
  CHECK(differs);
}

TEST_CASE("unused token-embedding rows receive zero gradient") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 4);
  Tape tape;
  ParamBinder bind(tape);
  Tensor h = encode_text(tape, bind, params, {4, 6, 4});
  Tensor loss = ops::sum_all(tape, ops::mul(tape, h, h));
  GradMap g = backward(tape, loss);
  NodeId te_node = bind.node_of(params.at("emb.te"));
  REQUIRE(te_node != kNoNode);
  const auto& gte = g.at(te_node);
  const int d = c.d;
  auto row_norm = [&](int r) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += std::abs(gte[static_cast<size_t>(r) * d + j]);
    return s;
  };
  CHECK(row_norm(4) > 0.0);
  CHECK(row_norm(6) > 0.0);
  for (int r = 0; r < c.vocab_size; ++r)
    if (r != 4 && r != 6) CHECK(row_norm(r) == 0.0);
}

// ---- detector and corrector ----

TEST_CASE("aed head with zeroed weights is uniform over three labels") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 5);
  zero_param(params, "aed.fc.w");
  zero_param(params, "aed.fc.b");
  Tape tape;
  ParamBinder bind(tape);
  Tensor h = encode_text(tape, bind, params, {4, 5, 6, 7});
  Tensor p = aed_head(tape, bind, params, h);
  REQUIRE(p.shape == std::vector<int>{4, 3});
  for (int r = 0; r < 4; ++r)
    for (int j = 0; j < 3; ++j)
      CHECK(p.at(r, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("aed head rows sum to one on random parameters") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 6);
  Tape tape;
  ParamBinder bind(tape);
  Tensor p = aed_head(tape, bind, params, encode_text(tape, bind, params, {4, 8, 10}));
  for (int r = 0; r < 3; ++r) {
    double s = 0.0;
    for (int j = 0; j < 3; ++j) s += p.at(r, j);
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("aed head is absent in no-aed mode") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kNoAed, 6);
  Tape tape;
  ParamBinder bind(tape);
  Tensor h = encode_text(tape, bind, params, {4, 5});
  CHECK_THROWS_WITH_AS(aed_head(tape, bind, params, h), doctest::Contains("absent"),
                       std::runtime_error);
}

TEST_CASE("aec decode: no change positions yields no step tensors") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 7);
  Tape tape;
  ParamBinder bind(tape);
  Tensor h = encode_text(tape, bind, params, {4, 5, 6});
  CHECK(aec_decode_teacher_forced(tape, bind, params, h, {}, {}).empty());
}

TEST_CASE("aec decode: a length-2 target yields 3 normalized step rows") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 7);
  Tape tape;
  ParamBinder bind(tape);
  Tensor h = encode_text(tape, bind, params, {4, 5, 6});
  auto steps = aec_decode_teacher_forced(tape, bind, params, h, {1}, {{8, 9}});
  REQUIRE(steps.size() == 1);
  REQUIRE(steps[0].shape == std::vector<int>{3, c.vocab_size});
  for (int r = 0; r < 3; ++r) {
    double s = 0.0;
    for (int j = 0; j < c.vocab_size; ++j) s += steps[0].at(r, j);
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("aec decode validates positions, targets, and the cap") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 7);
  Tape tape;
  ParamBinder bind(tape);
  Tensor h = encode_text(tape, bind, params, {4, 5, 6});
  CHECK_THROWS_WITH_AS(aec_decode_teacher_forced(tape, bind, params, h, {3}, {{8}}),
                       doctest::Contains("position"), std::runtime_error);
  CHECK_THROWS_WITH_AS(aec_decode_teacher_forced(tape, bind, params, h, {0}, {{}}),
                       doctest::Contains("empty target"), std::runtime_error);
  TokenSequence long_target(static_cast<size_t>(c.dec_max_len), 4);
  CHECK_THROWS(aec_decode_teacher_forced(tape, bind, params, h, {0}, {long_target}));
}

TEST_CASE("aec decoder self-attention is causal") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 8);
  TokenSequence target_a = {8, 9, 10};
  TokenSequence target_b = {8, 9, 11};  // differs only at the last position

  auto decode = [&](const TokenSequence& target) {
    Tape tape;
    ParamBinder bind(tape);
    Tensor h = encode_text(tape, bind, params, {4, 5, 6});
    auto steps = aec_decode_teacher_forced(tape, bind, params, h, {0}, {target});
    std::vector<double> flat(steps[0].values->begin(), steps[0].values->end());
    return flat;
  };
  auto pa = decode(target_a);
  auto pb = decode(target_b);
  const int v = c.vocab_size;
  // Steps 0..2 consume inputs <bos>, t0, t1 and may not see the perturbed t2.
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < v; ++j)
      CHECK(pa[static_cast<size_t>(r) * v + j] == pb[static_cast<size_t>(r) * v + j]);
  bool last_differs = false;
  for (int j = 0; j < v; ++j)
    last_differs |= pa[static_cast<size_t>(3) * v + j] != pb[static_cast<size_t>(3) * v + j];
  CHECK(last_differs);
}

// ---- fusion stages ----

TEST_CASE("cme block output length equals the query length") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 9);
  Tape tape;
  ParamBinder bind(tape);
  Rng rng(1);
  Tensor q = tape.leaf({3, 8}, mfaec::testutil::random_values(rng, 24), false);
  Tensor ctx = tape.leaf({5, 8}, mfaec::testutil::random_values(rng, 40), false);
  Tensor out = cme_block(tape, bind, params, "cme.s", q, ctx);
  CHECK(out.shape == std::vector<int>{3, 8});
}

TEST_CASE("hma with zeroed mask conv halves the shared representation") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 10);
  zero_param(params, "hma.s.mask.w");
  zero_param(params, "hma.s.mask.b");
  Tape tape;
  ParamBinder bind(tape);
  Rng rng(2);
  Tensor h_s_spe = tape.leaf({3, 8}, mfaec::testutil::random_values(rng, 24), false);
  Tensor h_st = tape.leaf({7, 8}, mfaec::testutil::random_values(rng, 56), false);
  Tensor share;
  Tensor h_b = hma(tape, bind, params, 0, h_s_spe, h_st, &share);
  REQUIRE(h_b.shape == std::vector<int>{7, 8});
  REQUIRE(share.shape == std::vector<int>{7, 8});
  for (int64_t i = 0; i < h_b.numel(); ++i)
    CHECK(h_b.at(i) == doctest::Approx(0.5 * share.at(i)).epsilon(1e-12));
}

TEST_CASE("mir with zeroed conv branches reduces to layer norm of the joint stream") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 11);
  for (const char* n : {"mir.s.conv.w", "mir.s.conv.b", "mir.t.conv.w", "mir.t.conv.b"})
    zero_param(params, n);
  Tape tape;
  ParamBinder bind(tape);
  Rng rng(3);
  Tensor h_st = tape.leaf({7, 8}, mfaec::testutil::random_values(rng, 56), false);
  Tensor h_s_b = tape.leaf({7, 8}, mfaec::testutil::random_values(rng, 56), false);
  Tensor h_t_b = tape.leaf({7, 8}, mfaec::testutil::random_values(rng, 56), false);
  Tensor out = mir(tape, bind, params, h_st, h_s_b, h_t_b);
  Tensor plain = ops::layer_norm(tape, h_st, c.ln_eps);
  REQUIRE(out.shape == plain.shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.at(i) == doctest::Approx(plain.at(i)).epsilon(1e-12));
}

TEST_CASE("fuse concatenates to 2(m'+n) rows and feeds every input's gradient") {
  ModelConfig c = tiny_config();
  Tape tape;
  Rng rng(4);
  Tensor a = tape.leaf({4, 8}, mfaec::testutil::random_values(rng, 32), true);
  Tensor b = tape.leaf({3, 8}, mfaec::testutil::random_values(rng, 24), true);
  Tensor inv = tape.leaf({7, 8}, mfaec::testutil::random_values(rng, 56), true);
  Tensor fused = fuse(tape, a, b, inv);
  CHECK(fused.shape == std::vector<int>{14, 8});
  GradMap g = backward(tape, ops::sum_all(tape, ops::mul(tape, fused, fused)));
  for (const Tensor* t : {&a, &b, &inv}) {
    REQUIRE(g.has(t->node_id));
    double s = 0.0;
    for (double v : g.at(t->node_id)) s += std::abs(v);
    CHECK(s > 0.0);
  }
}

TEST_CASE("pooled mean is invariant to block order in the fusion concat") {
  Tape tape;
  Rng rng(5);
  Tensor a = tape.leaf({4, 8}, mfaec::testutil::random_values(rng, 32), false);
  Tensor b = tape.leaf({3, 8}, mfaec::testutil::random_values(rng, 24), false);
  Tensor v = tape.leaf({7, 8}, mfaec::testutil::random_values(rng, 56), false);
  Tensor m1 = ops::mean_rows(tape, fuse(tape, a, b, v));
  Tensor m2 = ops::mean_rows(
      tape, ops::concat_rows(tape, v, ops::concat_rows(tape, b, a)));
  for (int j = 0; j < 8; ++j)
    CHECK(m1.at(0, j) == doctest::Approx(m2.at(0, j)).epsilon(1e-12));
}

TEST_CASE("classifier with zero weights is uniform and always normalized") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 12);
  Tape tape;
  ParamBinder bind(tape);
  Rng rng(6);
  Tensor x = tape.leaf({14, 8}, mfaec::testutil::random_values(rng, 112), false);

  Tensor p = classify(tape, bind, params, x);
  REQUIRE(p.shape == std::vector<int>{1, 4});
  double s = 0.0;
  for (int j = 0; j < 4; ++j) s += p.at(0, j);
  CHECK(std::abs(s - 1.0) < 1e-9);

  zero_param(params, "cls.fc.w");
  zero_param(params, "cls.fc.b");
  Tape t2;
  ParamBinder b2(t2);
  Tensor x2 = t2.leaf({5, 8}, mfaec::testutil::random_values(rng, 40), false);
  Tensor u = classify(t2, b2, params, x2);
  for (int j = 0; j < 4; ++j) CHECK(u.at(0, j) == doctest::Approx(0.25).epsilon(1e-12));
}

// ---- losses ----

TEST_CASE("combine_losses arithmetic matches the joint objective") {
  Tape tape;
  Tensor emo = tape.leaf({1}, {1.0}, true);
  Tensor d = tape.leaf({1}, {0.5}, true);
  Tensor e = tape.leaf({1}, {0.2}, true);
  Tensor total = combine_losses(tape, emo, &d, &e, 0.1, 3.0);
  CHECK(total.at(0) == doctest::Approx(1.17).epsilon(1e-15));

  Tape t2;
  Tensor emo2 = t2.leaf({1}, {0.8}, true);
  Tensor d2 = t2.leaf({1}, {0.5}, true);
  Tensor e2 = t2.leaf({1}, {0.2}, true);
  CHECK(combine_losses(t2, emo2, &d2, &e2, 0.0, 3.0).at(0) == 0.8);

  Tape t3;
  Tensor emo3 = t3.leaf({1}, {0.7}, true);
  CHECK(combine_losses(t3, emo3, nullptr, nullptr, 0.1, 3.0).at(0) == 0.7);
}

// ---- full passes ----

TEST_CASE("forward_train full mode: finite positive losses, correct wiring") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 13);
  UtteranceExample ex = tiny_example();
  Tape tape;
  ParamBinder bind(tape);
  TrainResult r = forward_train(tape, bind, params, ex, 0.1, 3.0);
  CHECK_FALSE(r.aux_skipped);
  REQUIRE(r.loss_emo.values);
  REQUIRE(r.loss_d.values);
  REQUIRE(r.loss_e.values);
  CHECK(r.loss_emo.at(0) > 0.0);
  CHECK(r.loss_d.at(0) > 0.0);
  CHECK(r.loss_e.at(0) > 0.0);
  CHECK(std::isfinite(r.loss_total.at(0)));
  CHECK(r.loss_total.at(0) ==
        doctest::Approx(r.loss_emo.at(0) + 0.1 * (3.0 * r.loss_d.at(0) + r.loss_e.at(0)))
            .epsilon(1e-12));

  // Shape ledger for this draw.
  const int mp = ex.m / c.downsample;
  const int n = static_cast<int>(ex.asr.size());
  CHECK(r.bundle.h_s.shape == std::vector<int>{mp, c.d});
  CHECK(r.bundle.h_t.shape == std::vector<int>{n, c.d});
  CHECK(r.bundle.h_s_spe.shape == std::vector<int>{mp, c.d});
  CHECK(r.bundle.h_t_spe.shape == std::vector<int>{n, c.d});
  CHECK(r.bundle.h_st.shape == std::vector<int>{mp + n, c.d});
  CHECK(r.bundle.h_s_share.shape == std::vector<int>{mp + n, c.d});
  CHECK(r.bundle.h_t_share.shape == std::vector<int>{mp + n, c.d});
  CHECK(r.bundle.h_s_b.shape == std::vector<int>{mp + n, c.d});
  CHECK(r.bundle.h_t_b.shape == std::vector<int>{mp + n, c.d});
  CHECK(r.bundle.h_st_inv.shape == std::vector<int>{mp + n, c.d});
  CHECK(r.bundle.h_st_fus.shape == std::vector<int>{2 * (mp + n), c.d});
  CHECK(r.bundle.emotion_probs.shape == std::vector<int>{1, c.n_emotions});
  CHECK(r.bundle.aed_probs.shape == std::vector<int>{n, 3});
}

TEST_CASE("forward_train in no-aec and no-aed modes drops the right losses") {
  ModelConfig c = tiny_config();
  UtteranceExample ex = tiny_example();

  ModelParams no_aec = init_params(c, AblationMode::kNoAec, 14);
  Tape t1;
  ParamBinder b1(t1);
  TrainResult r1 = forward_train(t1, b1, no_aec, ex, 0.1, 3.0);
  CHECK(r1.loss_d.values);
  CHECK_FALSE(r1.loss_e.values);
  CHECK(r1.bundle.aec_steps.empty());

  ModelParams no_aed = init_params(c, AblationMode::kNoAed, 14);
  Tape t2;
  ParamBinder b2(t2);
  TrainResult r2 = forward_train(t2, b2, no_aed, ex, 0.1, 3.0);
  CHECK_FALSE(r2.loss_d.values);
  CHECK(r2.loss_e.values);
  // From-scratch correction: every hypothesis position is a candidate.
  CHECK(r2.bundle.aec_steps.size() == ex.asr.size());
  CHECK_FALSE(r2.bundle.aed_probs.values);
}

TEST_CASE("forward_train in no-mf mode pools and concatenates the encoders") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kNoMf, 15);
  UtteranceExample ex = tiny_example();
  Tape tape;
  ParamBinder bind(tape);
  TrainResult r = forward_train(tape, bind, params, ex, 0.1, 3.0);
  CHECK(r.bundle.emotion_probs.shape == std::vector<int>{1, c.n_emotions});
  CHECK_FALSE(r.bundle.h_st_fus.values);  // fusion stack skipped

  // The probabilities equal softmax(W [mean(h_s); mean(h_t)] + b) directly.
  Tape t2;
  ParamBinder b2(t2);
  Tensor h_s = encode_speech(t2, b2, params, ex.frames, ex.m, ex.frame_dim);
  Tensor h_t = encode_text(t2, b2, params, ex.asr);
  Tensor cat = ops::concat_cols(t2, ops::mean_rows(t2, h_s), ops::mean_rows(t2, h_t));
  Tensor probs = classify(t2, b2, params, cat);
  for (int j = 0; j < c.n_emotions; ++j)
    CHECK(probs.at(0, j) == r.bundle.emotion_probs.at(0, j));
}

TEST_CASE("empty hypothesis skips auxiliary losses but keeps the emotion loss") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 16);
  UtteranceExample ex = tiny_example();
  ex.asr.clear();
  Tape tape;
  ParamBinder bind(tape);
  TrainResult r = forward_train(tape, bind, params, ex, 0.1, 3.0);
  CHECK(r.aux_skipped);
  CHECK(r.loss_emo.values);
  CHECK_FALSE(r.loss_d.values);
  CHECK_FALSE(r.loss_e.values);
  CHECK(r.loss_total.at(0) == r.loss_emo.at(0));

  // Inference accepts the same degenerate example.
  Tape t2;
  ParamBinder b2(t2);
  Tensor p = forward_infer(t2, b2, params, ex);
  CHECK(p.at(0, 0) == r.bundle.emotion_probs.at(0, 0));
}

TEST_CASE("forward_infer equals the training emotion branch in every mode") {
  ModelConfig c = tiny_config();
  for (AblationMode mode : {AblationMode::kFull, AblationMode::kNoAed,
                            AblationMode::kNoAec, AblationMode::kNoMf}) {
    CAPTURE(ablation_mode_name(mode));
    ModelParams params = init_params(c, mode, 17);
    for (uint64_t s = 0; s < 5; ++s) {
      UtteranceExample ex = tiny_example(200 + s, 4, 10);
      Tape t1;
      ParamBinder b1(t1);
      TrainResult r = forward_train(t1, b1, params, ex, 0.1, 3.0);
      Tape t2;
      ParamBinder b2(t2);
      Tensor p = forward_infer(t2, b2, params, ex);
      for (int j = 0; j < c.n_emotions; ++j)
        CHECK(p.at(0, j) == r.bundle.emotion_probs.at(0, j));  // bitwise
    }
  }
}

TEST_CASE("forward_infer never touches auxiliary parameters") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 18);
  UtteranceExample ex = tiny_example();
  Tape tape;
  ParamBinder bind(tape);
  forward_infer(tape, bind, params, ex);
  for (const auto& p : params.set)
    if (is_aux_param(p.name)) CHECK(bind.node_of(p) == kNoNode);
}

TEST_CASE("emotion argmax is invariant to a shared additive logit shift") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 19);
  UtteranceExample ex = tiny_example();
  Tape t1;
  ParamBinder b1(t1);
  Tensor p1 = forward_infer(t1, b1, params, ex);
  for (auto& v : *params.set.at("cls.fc.b").values) v += 2.5;
  Tape t2;
  ParamBinder b2(t2);
  Tensor p2 = forward_infer(t2, b2, params, ex);
  int arg1 = 0, arg2 = 0;
  for (int j = 1; j < c.n_emotions; ++j) {
    if (p1.at(0, j) > p1.at(0, arg1)) arg1 = j;
    if (p2.at(0, j) > p2.at(0, arg2)) arg2 = j;
  }
  CHECK(arg1 == arg2);
  for (int j = 0; j < c.n_emotions; ++j)
    CHECK(p1.at(0, j) == doctest::Approx(p2.at(0, j)).epsilon(1e-9));
}

TEST_CASE("dropout draws change the training pass but never inference") {
  ModelConfig c = tiny_config();
  c.dropout = 0.3;
  ModelParams params = init_params(c, AblationMode::kFull, 20);
  UtteranceExample ex = tiny_example();

  Tape t0;
  ParamBinder b0(t0);
  CHECK_THROWS_WITH_AS(forward_train(t0, b0, params, ex, 0.1, 3.0),
                       doctest::Contains("noise"), std::runtime_error);

  auto train_loss = [&](uint64_t seed) {
    Rng rng(seed);
    Tape t;
    ParamBinder b(t);
    return forward_train(t, b, params, ex, 0.1, 3.0, &rng).loss_total.at(0);
  };
  CHECK(train_loss(1) == train_loss(1));
  CHECK(train_loss(1) != train_loss(2));

  auto infer_probs = [&] {
    Tape t;
    ParamBinder b(t);
    Tensor p = forward_infer(t, b, params, ex);
    return std::vector<double>(p.values->begin(), p.values->end());
  };
  CHECK(infer_probs() == infer_probs());
}

TEST_CASE("shape ledger holds across random draws") {
  Rng rng(900);
  for (int it = 0; it < 20; ++it) {
    ModelConfig c = tiny_config();
    c.d = 4 * rng.range_int(1, 3);
    c.heads = (it % 2 == 0) ? 2 : 1;
    const int mp_target = rng.range_int(1, 6);
    const int n = rng.range_int(1, 6);
    ModelParams params = init_params(c, AblationMode::kFull, 500 + it);

    UtteranceExample ex;
    ex.emotion = rng.range_int(0, c.n_emotions - 1);
    ex.frame_dim = c.frame_dim;
    ex.m = mp_target * c.downsample;
    ex.frames = mfaec::testutil::random_values(rng, int64_t{ex.m} * c.frame_dim);
    for (int i = 0; i < n; ++i)
      ex.transcript.push_back(Vocab::kNumReserved + rng.range_int(0, 7));
    ex.asr = ex.transcript;

    Tape tape;
    ParamBinder bind(tape);
    TrainResult r = forward_train(tape, bind, params, ex, 0.1, 3.0);
    CHECK(r.bundle.h_s.shape == std::vector<int>{mp_target, c.d});
    CHECK(r.bundle.h_t.shape == std::vector<int>{n, c.d});
    CHECK(r.bundle.h_st_fus.shape == std::vector<int>{2 * (mp_target + n), c.d});
    double s = 0.0;
    for (int j = 0; j < c.n_emotions; ++j) s += r.bundle.emotion_probs.at(0, j);
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("full-model gradient check on a tiny config passes at 1e-4") {
  ModelConfig c = tiny_config();
  ModelParams params = init_params(c, AblationMode::kFull, 21);
  UtteranceExample ex = tiny_example(42, 3, 6);
  ScalarFn f = [&](Tape& t, ParamBinder& b) {
    return forward_train(t, b, params, ex, 0.1, 3.0).loss_total;
  };
  GradCheckReport rep = grad_check(f, params.set, 1e-5, 1e-4);
  CAPTURE(rep.max_rel_err);
  CAPTURE(rep.kink_excluded);
  CHECK(rep.pass);
  CHECK(rep.checked > 0);
}
