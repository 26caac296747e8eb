// Copyright 2026 The JBNN Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace jbnn {
namespace {

using testing::model_grad_check;
using testing::GradCheckSetup;

ModelConfig tiny_config() {
  ModelConfig c;
  c.embedding_dim = 5;
  c.hidden = 4;
  c.attention_dim = 8;
  c.labels = 8;
  return c;
}

TEST(LstmCell, ZeroParamsGiveZeroState) {
  LstmParams p{Matrix(12, 6), Matrix(12, 1)};
  const std::vector<double> x = {1, -2, 3}, zero(3, 0.0);
  const auto out = lstm_cell(x, zero, zero, p);
  for (double v : out.c) EXPECT_EQ(v, 0.0);
  for (double v : out.h) EXPECT_EQ(v, 0.0);
}

TEST(LstmCell, SaturatedForgetGateKeepsCell) {
  const std::size_t h = 3;
  LstmParams p{Matrix(4 * h, 2 + h), Matrix(4 * h, 1)};
  for (std::size_t k = 0; k < h; ++k) p.bias[h + k] = 20.0;
  const std::vector<double> x(2, 0.0), h_prev(h, 0.0), c_prev = {0.3, -1.2, 2.0};
  const auto out = lstm_cell(x, h_prev, c_prev, p);
  for (std::size_t k = 0; k < h; ++k) EXPECT_NEAR(out.c[k], c_prev[k], 1e-8);
}

TEST(LstmCell, RejectsMismatchedShapes) {
  LstmParams p{Matrix(12, 6), Matrix(12, 1)};
  const std::vector<double> x(2), hc(3);
  EXPECT_THROW(lstm_cell(x, hc, hc, p), ShapeError);
}

TEST(LstmCell, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const std::size_t d = 3, h = 4;
    Rng rng(seed);
    auto rnd = [&](std::size_t n) {
      std::vector<double> v(n);
      for (double& e : v) e = rng.uniform(-1, 1);
      return v;
    };
    LstmParams p{Matrix(4 * h, d + h), Matrix(4 * h, 1)};
    for (double& v : p.weights.values()) v = rng.uniform(-0.8, 0.8);
    for (double& v : p.bias.values()) v = rng.uniform(-0.8, 0.8);
    auto x = rnd(d), h_prev = rnd(h), c_prev = rnd(h);
    const auto rh = rnd(h), rc = rnd(h);
    auto row_matrix = [](const std::vector<double>& v) {
      Matrix m(1, v.size());
      std::copy(v.begin(), v.end(), m.values().begin());
      return m;
    };
    Matrix xm = row_matrix(x), hm = row_matrix(h_prev), cm = row_matrix(c_prev);
    auto objective = [&] {
      const auto out = lstm_cell(xm.row(0), hm.row(0), cm.row(0), p);
      return dot(out.h, rh) + dot(out.c, rc);
    };
    const auto out = lstm_cell(x, h_prev, c_prev, p);
    LstmParams g{Matrix(4 * h, d + h), Matrix(4 * h, 1)};
    std::vector<double> concat(d + h), dz(4 * h), dconcat(d + h), dx(d), dh_prev(h), dc_prev(h);
    detail::lstm_step_backward(x, h_prev, c_prev, out.gates, out.c, rh, rc, p, g, concat, dz, dconcat, dx, dh_prev,
                               dc_prev);
    const std::vector<ParamView> views = {{"W", p.weights.values(), g.weights.values()},
                                          {"b", p.bias.values(), g.bias.values()},
                                          {"x", xm.values(), dx},
                                          {"h_prev", hm.values(), dh_prev},
                                          {"c_prev", cm.values(), dc_prev}};
    const auto report = grad_check(objective, views, 1e-5);
    EXPECT_LT(report.max_relative_error, 1e-4) << "seed " << seed << " worst " << report.worst_name;
  }
}

TEST(Encode, SingleStepUsesZeroInitialState) {
  ModelConfig cfg = tiny_config();
  const auto params = init_params(cfg, cfg.labels, 4, 0.5);
  const Matrix emb = testing::random_embedding(6, cfg.embedding_dim, 1);
  const std::vector<std::size_t> ids = {3};
  const std::vector<std::uint8_t> mask = {1};
  const Matrix H = encode({ids, mask}, emb, params, cfg);
  const std::vector<double> zero(cfg.hidden, 0.0);
  const auto f = lstm_cell(emb.row(3), zero, zero, params.forward_lstm);
  const auto b = lstm_cell(emb.row(3), zero, zero, params.backward_lstm);
  for (std::size_t k = 0; k < cfg.hidden; ++k) {
    EXPECT_EQ(H(0, k), f.h[k]);
    EXPECT_EQ(H(0, cfg.hidden + k), b.h[k]);
  }
}

TEST(Encode, PaddingDoesNotChangeStates) {
  ModelConfig cfg = tiny_config();
  const auto params = init_params(cfg, cfg.labels, 5, 0.5);
  const Matrix emb = testing::random_embedding(10, cfg.embedding_dim, 2);
  const std::vector<std::size_t> ids = {4, 2, 7}, padded = {4, 2, 7, 0, 0};
  const std::vector<std::uint8_t> mask(3, 1), padded_mask = {1, 1, 1, 0, 0};
  const Matrix a = encode({ids, mask}, emb, params, cfg);
  const Matrix b = encode({padded, padded_mask}, emb, params, cfg);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t k = 0; k < cfg.encoder_dim(); ++k) EXPECT_EQ(a(t, k), b(t, k));
  for (std::size_t t = 3; t < 5; ++t)
    for (std::size_t k = 0; k < cfg.encoder_dim(); ++k) EXPECT_EQ(b(t, k), 0.0);
  EXPECT_EQ(forward(SequenceView{ids, mask}, emb, params, cfg).probs,
            forward(SequenceView{padded, padded_mask}, emb, params, cfg).probs);
}

TEST(Encode, ReversalSwapsDirections) {
  ModelConfig cfg = tiny_config();
  auto params = init_params(cfg, cfg.labels, 6, 0.5);
  params.backward_lstm = params.forward_lstm;
  const Matrix emb = testing::random_embedding(10, cfg.embedding_dim, 3);
  const std::vector<std::size_t> ids = {1, 5, 9, 2}, rev = {2, 9, 5, 1};
  const std::vector<std::uint8_t> mask(4, 1);
  const Matrix a = encode({ids, mask}, emb, params, cfg);
  const Matrix b = encode({rev, mask}, emb, params, cfg);
  const std::size_t h = cfg.hidden;
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t k = 0; k < h; ++k) {
      EXPECT_EQ(a(t, k), b(3 - t, h + k));
      EXPECT_EQ(a(t, h + k), b(3 - t, k));
    }
  }
}

TEST(Attention, EqualScoresGiveUniformWeights) {
  const std::vector<double> scores(4, 0.7);
  const std::vector<std::uint8_t> mask(4, 1);
  for (double a : masked_softmax(scores, mask)) EXPECT_NEAR(a, 0.25, 1e-15);
}

TEST(Attention, AnalyticSoftmax) {
  const std::vector<double> scores = {std::log(3.0), 0.0};
  const std::vector<std::uint8_t> mask = {1, 1};
  const auto alpha = masked_softmax(scores, mask);
  EXPECT_NEAR(alpha[0], 0.75, 1e-15);
  EXPECT_NEAR(alpha[1], 0.25, 1e-15);
}

TEST(Attention, PoolsHiddenStates) {
  // u_1 = (0.5, 0), u_2 = 0 with context (2 ln 3, 0): scores (ln 3, 0).
  ModelParams p;
  p.attention_weights = Matrix::from_rows({{std::atanh(0.5), 0.0}, {0.0, 0.0}});
  p.attention_bias = Matrix(2, 1);
  p.attention_context = Matrix::from_rows({{2 * std::log(3.0)}, {0.0}});
  const Matrix hidden = Matrix::from_rows({{1, 0}, {0, 1}});
  const std::vector<std::uint8_t> mask = {1, 1};
  const auto r = attention(hidden, mask, p);
  EXPECT_NEAR(r.alpha[0], 0.75, 1e-12);
  EXPECT_NEAR(r.pooled[0], 0.75, 1e-12);
  EXPECT_NEAR(r.pooled[1], 0.25, 1e-12);
}

TEST(Attention, MaskedPositionsGetZeroWeight) {
  const std::vector<double> scores = {1.0, 50.0, -2.0};
  const std::vector<std::uint8_t> mask = {1, 0, 1};
  const auto alpha = masked_softmax(scores, mask);
  EXPECT_EQ(alpha[1], 0.0);
  EXPECT_NEAR(alpha[0] + alpha[2], 1.0, 1e-15);
  EXPECT_THROW(masked_softmax(scores, std::vector<std::uint8_t>(3, 0)), EvaluationError);
}

TEST(Heads, ZeroAndKnownLogits) {
  ModelParams p;
  p.head_weights = Matrix(3, 2);
  p.head_bias = Matrix(3, 1);
  const std::vector<double> v = {0.4, -1.0};
  for (double prob : heads(v, p).probs) EXPECT_EQ(prob, 0.5);
  p.head_bias[1] = std::log(3.0);
  const auto out = heads(v, p);
  EXPECT_NEAR(out.probs[1], 0.75, 1e-15);
  EXPECT_NE(std::accumulate(out.probs.begin(), out.probs.end(), 0.0), 1.0);
}

TEST(Predict, ThresholdAndTie) {
  EXPECT_EQ(predict(std::vector<double>{0.6, 0.4}), (LabelVector{1, 0}));
  EXPECT_EQ(predict(std::vector<double>{0.5}), (LabelVector{0}));
  EXPECT_EQ(predict(std::vector<double>(3, 0.9)), (LabelVector{1, 1, 1}));
}

TEST(Forward, TraceInvariants) {
  ModelConfig cfg = tiny_config();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto prob = testing::tiny_problem(cfg, 7, 4, seed);
    const auto params = init_params(cfg, cfg.labels, seed, 0.5);
    for (std::size_t b = 0; b < 4; ++b) {
      const auto tr = forward(SequenceView{prob.ids[b], prob.masks[b]}, prob.embedding, params, cfg);
      double sum = 0.0;
      for (std::size_t t = 0; t < tr.width; ++t) {
        if (!prob.masks[b][t]) EXPECT_EQ(tr.alpha[t], 0.0);
        sum += tr.alpha[t];
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
      for (double p : tr.probs) {
        EXPECT_GT(p, 0.0);
        EXPECT_LT(p, 1.0);
      }
    }
  }
}

TEST(Forward, NoAttentionUsesLastState) {
  ModelConfig cfg = tiny_config();
  cfg.use_attention = false;
  const auto params = init_params(cfg, cfg.labels, 3, 0.5);
  const Matrix emb = testing::random_embedding(10, cfg.embedding_dim, 3);
  const std::vector<std::size_t> ids = {3, 1, 4, 0};
  const std::vector<std::uint8_t> mask = {1, 1, 1, 0};
  const auto tr = forward(SequenceView{ids, mask}, emb, params, cfg);
  EXPECT_TRUE(tr.alpha.empty());
  EXPECT_TRUE(params.attention_weights.empty());
  const auto last = tr.hidden.row(2);
  EXPECT_TRUE(std::equal(last.begin(), last.end(), tr.pooled.begin(), tr.pooled.end()));
}

TEST(Forward, Deterministic) {
  ModelConfig cfg = tiny_config();
  const auto prob = testing::tiny_problem(cfg, 7, 1, 2);
  const auto params = init_params(cfg, cfg.labels, 2, 0.5);
  const SequenceView seq{prob.ids[0], prob.masks[0]};
  const auto a = forward(seq, prob.embedding, params, cfg);
  const auto b = forward(seq, prob.embedding, params, cfg);
  EXPECT_EQ(a.probs, b.probs);
  EXPECT_EQ(a.alpha, b.alpha);
  EXPECT_EQ(a.hidden, b.hidden);
}

TEST(Forward, HeadPermutationCovariance) {
  ModelConfig cfg = tiny_config();
  const auto prob = testing::tiny_problem(cfg, 7, 1, 8);
  auto params = init_params(cfg, cfg.labels, 8, 0.5);
  const SequenceView seq{prob.ids[0], prob.masks[0]};
  const auto base = forward(seq, prob.embedding, params, cfg).probs;
  std::vector<std::size_t> perm(cfg.labels);
  std::iota(perm.begin(), perm.end(), 0);
  Rng(1).shuffle(perm);
  ModelParams permuted = params;
  for (std::size_t j = 0; j < cfg.labels; ++j) {
    auto src = params.head_weights.row(perm[j]);
    std::copy(src.begin(), src.end(), permuted.head_weights.row(j).begin());
    permuted.head_bias[j] = params.head_bias[perm[j]];
  }
  const auto p = forward(seq, prob.embedding, permuted, cfg).probs;
  for (std::size_t j = 0; j < cfg.labels; ++j) EXPECT_EQ(p[j], base[perm[j]]);
}

TEST(CountParams, ClosedForm) {
  ModelConfig full;
  full.attention_dim = 200;
  EXPECT_EQ(count_params(full), 282808u);
  EXPECT_EQ(count_params(ModelConfig{}), 282808u);

  ModelConfig one;
  one.embedding_dim = 1;
  one.hidden = 1;
  one.attention_dim = 1;
  one.labels = 1;
  EXPECT_EQ(count_params(one), 31u);

  ModelConfig brnn = full;
  brnn.mode = Mode::kBinaryRelevance;
  EXPECT_EQ(count_params(brnn), 8u * 281401u);
  EXPECT_LT(count_params(full), count_params(brnn));

  ModelConfig no_bi = full;
  no_bi.bidirectional = false;
  EXPECT_LT(count_params(no_bi), count_params(full));
  EXPECT_EQ(ModelParams::zeros(no_bi, 8).head_weights.cols(), 100u);
}

TEST(CountParams, MatchesAllocatedParameters) {
  for (RunMode mode : {RunMode::kJbnn, RunMode::kBrnn, RunMode::kJbnnNoBi, RunMode::kJbnnNoAtt}) {
    TrainConfig tc;
    tc.mode = mode;
    tc.hidden = 6;
    const ModelConfig cfg = model_config_for(tc, 7, 5);
    const Classifier c = make_classifier(cfg, {"a", "b", "c", "d", "e"}, Vocabulary{}, EmbeddingTable{Matrix(1, 7), false}, 1);
    std::size_t n = 0;
    for (const auto& net : c.networks) n += net.parameter_count();
    EXPECT_EQ(n, count_params(cfg)) << run_mode_name(mode);
  }
}

TEST(InitParams, RangeDeterminismAndMean) {
  ModelConfig full;
  const auto a = init_params(full, 8, 42);
  const auto b = init_params(full, 8, 42);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == init_params(full, 8, 43));
  double sum = 0.0;
  std::size_t n = 0;
  a.visit([&](std::string_view, const Matrix& m, bool) {
    for (double v : m.values()) {
      EXPECT_GE(v, -0.01);
      EXPECT_LE(v, 0.01);
      if (n < 100000) {
        sum += v;
        ++n;
      }
    }
  });
  ASSERT_EQ(n, 100000u);
  EXPECT_NEAR(sum / static_cast<double>(n), 0.0, 0.0005);
}

TEST(Backward, HeadLogitGradientIsPMinusY) {
  ModelConfig cfg = tiny_config();
  const auto prob = testing::tiny_problem(cfg, 7, 1, 4);
  const auto params = init_params(cfg, cfg.labels, 4, 0.5);
  const SequenceView seq{prob.ids[0], prob.masks[0]};
  const auto tr = forward(seq, prob.embedding, params, cfg);
  auto g = Gradients::zeros_like(cfg, cfg.labels, EmbeddingTable{prob.embedding, false});
  backward(tr, seq, prob.embedding, prob.labels[0], nullptr, 0.0, params, cfg, g);
  for (std::size_t j = 0; j < cfg.labels; ++j) {
    EXPECT_NEAR(g.params.head_bias[j], tr.probs[j] - prob.labels[0][j], 1e-15);
  }
}

TEST(Backward, SaturatedCorrectHeadHasNoGradient) {
  ModelConfig cfg = tiny_config();
  const auto prob = testing::tiny_problem(cfg, 7, 1, 4);
  auto params = init_params(cfg, cfg.labels, 4, 0.5);
  params.head_bias[0] = 60.0;
  const SequenceView seq{prob.ids[0], prob.masks[0]};
  const auto tr = forward(seq, prob.embedding, params, cfg);
  LabelVector y = prob.labels[0];
  y[0] = 1;
  auto g = Gradients::zeros_like(cfg, cfg.labels, EmbeddingTable{prob.embedding, false});
  backward(tr, seq, prob.embedding, y, nullptr, 0.0, params, cfg, g);
  EXPECT_LT(std::abs(g.params.head_bias[0]), 1e-20);
}

TEST(ReferenceForward, AgreesWithLibraryForward) {
  for (RunMode mode : {RunMode::kJbnn, RunMode::kJbnnNoBi, RunMode::kJbnnNoAtt}) {
    TrainConfig tc;
    tc.mode = mode;
    tc.hidden = 4;
    tc.attention_dim = 8;
    const ModelConfig cfg = model_config_for(tc, 5, 8);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto prob = testing::tiny_problem(cfg, 7, 3, seed);
      const auto params = init_params(cfg, cfg.labels, seed, 0.5);
      for (std::size_t b = 0; b < 3; ++b) {
        const SequenceView seq{prob.ids[b], prob.masks[b]};
        const auto lib = forward(seq, prob.embedding, params, cfg).probs;
        const auto ref = testing::reference::probabilities(params, prob.embedding, cfg, seq);
        for (std::size_t j = 0; j < lib.size(); ++j) EXPECT_NEAR(lib[j], static_cast<double>(ref[j]), 1e-13);
      }
    }
  }
}

class FullGradient : public ::testing::TestWithParam<RunMode> {};

TEST_P(FullGradient, MatchesFiniteDifferencesAcrossSeeds) {
  for (double lambda1 : {0.0, 1.0}) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      GradCheckSetup s;
      s.mode = GetParam();
      s.seed = seed;
      s.lambda1 = lambda1;
      const auto r = model_grad_check(s);
      EXPECT_LT(r.max_relative_error, 1e-4)
          << run_mode_name(s.mode) << " seed " << seed << " lambda1 " << lambda1 << " worst " << r.worst_name << "["
          << r.worst_index << "] analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Modes, FullGradient,
                         ::testing::Values(RunMode::kJbnn, RunMode::kBrnn, RunMode::kJbnnNoBi, RunMode::kJbnnNoAtt,
                                           RunMode::kJbnnNoEmoRel),
                         [](const auto& info) {
                           std::string n = run_mode_name(info.param);
                           std::replace(n.begin(), n.end(), '-', '_');
                           return n;
                         });

TEST(FullGradientEmbeddings, TrainableTableMatchesFiniteDifferences) {
  for (RunMode mode : {RunMode::kJbnn, RunMode::kJbnnNoBi, RunMode::kJbnnNoAtt}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      GradCheckSetup s;
      s.mode = mode;
      s.seed = seed;
      s.train_embeddings = true;
      const auto r = model_grad_check(s);
      EXPECT_LT(r.max_relative_error, 1e-4) << run_mode_name(mode) << " seed " << seed << " worst " << r.worst_name;
    }
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (RunMode mode : {RunMode::kJbnn, RunMode::kBrnn}) {
    TrainConfig tc;
    tc.mode = mode;
    tc.hidden = 3;
    const ModelConfig cfg = model_config_for(tc, 4, 2);
    Vocabulary vocab;
    vocab.add("alpha");
    vocab.add("beta");
    vocab.reserve_oov();
    Matrix emb = testing::random_embedding(vocab.id_count(), 4, 5);
    const Classifier c = make_classifier(cfg, {"joy", "sadness"}, vocab, EmbeddingTable{emb, false}, 9, 0.3);
    const std::string path = ::testing::TempDir() + "/ckpt_" + run_mode_name(mode) + ".json";
    save_checkpoint(path, c);
    const Classifier back = load_checkpoint(path);
    EXPECT_EQ(back.label_names, c.label_names);
    EXPECT_TRUE(back.vocab == c.vocab);
    EXPECT_EQ(back.embeddings.vectors, c.embeddings.vectors);
    ASSERT_EQ(back.networks.size(), c.networks.size());
    for (std::size_t n = 0; n < c.networks.size(); ++n) EXPECT_TRUE(back.networks[n] == c.networks[n]);
    const Sentence s{{1, 2, 3}};
    EXPECT_EQ(back.predict_proba(s), c.predict_proba(s));
    std::remove(path.c_str());
  }
}

TEST(Checkpoint, RejectsCorruptFiles) {
  EXPECT_THROW(checkpoint_from_json(nlohmann::json{{"format", "other"}}), ParseError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.json"), ParseError);
}

}  // namespace
}  // namespace jbnn
