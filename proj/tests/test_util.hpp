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

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jbnn/jbnn.hpp"

namespace jbnn::testing {

/// Parameter/gradient views for grad_check, in visit order.
inline std::vector<ParamView> views_of(ModelParams& params, const ModelParams& grads, const std::string& prefix = "") {
  std::vector<ParamView> views;
  std::vector<const Matrix*> g;
  grads.visit([&](std::string_view, const Matrix& m, bool) { g.push_back(&m); });
  std::size_t i = 0;
  params.visit([&](std::string_view name, Matrix& m, bool) {
    views.push_back({prefix + std::string(name), m.values(), g[i++]->values()});
  });
  return views;
}

/// Random embedding table with a zero padding row.
inline Matrix random_embedding(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  Matrix e(rows, dim);
  Rng rng(seed);
  for (std::size_t r = 1; r < rows; ++r)
    for (double& v : e.row(r)) v = rng.normal();
  return e;
}

struct TinyProblem {
  ModelConfig config;
  Matrix embedding;
  std::vector<std::vector<std::size_t>> ids;
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<LabelVector> labels;
};

/// A small padded batch: the first sentence fills the full width, the others
/// are shorter and padded with id 0.
inline TinyProblem tiny_problem(const ModelConfig& cfg, std::size_t width, std::size_t batch, std::uint64_t seed,
                                std::size_t vocab = 12) {
  TinyProblem p;
  p.config = cfg;
  p.embedding = random_embedding(vocab, cfg.embedding_dim, derive_seed(seed, 7));
  Rng rng(derive_seed(seed, 8));
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t n = b == 0 ? width : 1 + rng.below(width);
    std::vector<std::size_t> ids(width, kPadId);
    std::vector<std::uint8_t> mask(width, 0);
    for (std::size_t t = 0; t < n; ++t) {
      ids[t] = 1 + rng.below(vocab - 1);
      mask[t] = 1;
    }
    LabelVector y(cfg.labels);
    for (auto& v : y) v = rng.uniform() < 0.4 ? 1 : 0;
    p.ids.push_back(std::move(ids));
    p.masks.push_back(std::move(mask));
    p.labels.push_back(std::move(y));
  }
  return p;
}

/// Independent forward pass written directly from the model equations and
/// evaluated in long double. Finite differences of this objective carry far
/// less roundoff than differences of the 64-bit library forward.
namespace reference {

using Real = long double;
using Vec = std::vector<Real>;

inline Real sig(Real z) { return Real{1} / (Real{1} + std::exp(-z)); }

// y = W x + b for a row-major double matrix.
inline Vec affine(const Matrix& w, const Matrix& b, const Vec& x) {
  Vec y(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    Real acc = b[r];
    for (std::size_t c = 0; c < w.cols(); ++c) acc += static_cast<Real>(w(r, c)) * x[c];
    y[r] = acc;
  }
  return y;
}

inline std::vector<Vec> run_lstm(const LstmParams& p, const Matrix& emb, std::span<const std::size_t> ids,
                                 const std::vector<std::size_t>& order, std::size_t h) {
  Vec hs(h, 0), cs(h, 0);
  std::vector<Vec> out(ids.size());
  for (std::size_t t : order) {
    Vec xh;
    for (double v : emb.row(ids[t])) xh.push_back(v);
    xh.insert(xh.end(), hs.begin(), hs.end());
    const Vec z = affine(p.weights, p.bias, xh);
    for (std::size_t k = 0; k < h; ++k) {
      const Real i = sig(z[k]), f = sig(z[h + k]), o = sig(z[2 * h + k]), g = std::tanh(z[3 * h + k]);
      cs[k] = f * cs[k] + i * g;
      hs[k] = o * std::tanh(cs[k]);
    }
    out[t] = hs;
  }
  return out;
}

inline Vec probabilities(const ModelParams& p, const Matrix& emb, const ModelConfig& cfg, const SequenceView& seq) {
  std::vector<std::size_t> order;
  for (std::size_t t = 0; t < seq.ids.size(); ++t)
    if (seq.mask[t]) order.push_back(t);
  const auto fwd = run_lstm(p.forward_lstm, emb, seq.ids, order, cfg.hidden);
  std::vector<Vec> bwd;
  if (cfg.bidirectional) bwd = run_lstm(p.backward_lstm, emb, seq.ids, {order.rbegin(), order.rend()}, cfg.hidden);
  auto state = [&](std::size_t t) {
    Vec s = fwd[t];
    if (cfg.bidirectional) s.insert(s.end(), bwd[t].begin(), bwd[t].end());
    return s;
  };
  Vec v;
  if (cfg.use_attention) {
    Vec score(order.size());
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t i = 0; i < order.size(); ++i) {
      Vec u = affine(p.attention_weights, p.attention_bias, state(order[i]));
      Real s = 0;
      for (std::size_t k = 0; k < u.size(); ++k) s += std::tanh(u[k]) * static_cast<Real>(p.attention_context[k]);
      score[i] = s;
      mx = std::max(mx, s);
    }
    Real z = 0;
    for (Real& s : score) z += (s = std::exp(s - mx));
    v.assign(cfg.encoder_dim(), 0);
    for (std::size_t i = 0; i < order.size(); ++i) {
      const Vec h = state(order[i]);
      for (std::size_t k = 0; k < h.size(); ++k) v[k] += score[i] / z * h[k];
    }
  } else {
    v = state(order.back());
  }
  Vec out = affine(p.head_weights, p.head_bias, v);
  for (Real& x : out) x = sig(x);
  return out;
}

inline Real instance_loss(const Vec& p, std::span<const std::uint8_t> y, const RelationMatrix* rel, double lambda1) {
  Real loss = 0;
  for (std::size_t j = 0; j < p.size(); ++j) loss -= y[j] ? std::log(p[j]) : std::log(Real{1} - p[j]);
  if (rel != nullptr) {
    for (std::size_t s = 0; s < p.size(); ++s)
      for (std::size_t t = s + 1; t < p.size(); ++t) {
        const Real d = p[s] - p[t];
        loss += static_cast<Real>(lambda1) * static_cast<Real>((*rel)(s, t)) * d * d;
      }
  }
  return loss;
}

}  // namespace reference

struct GradCheckSetup {
  RunMode mode = RunMode::kJbnn;
  std::uint64_t seed = 1;
  double lambda1 = 1e-3;
  double init_scale = 0.5;
  bool train_embeddings = false;
  std::size_t dim = 5, hidden = 4, attention = 8, labels = 8, width = 7, batch = 3;
};

/// Checks the analytic gradient of the batch objective (mean instance loss,
/// summed over networks; no L2) against central differences of the
/// reference objective.
inline GradCheckReport model_grad_check(const GradCheckSetup& s, double epsilon = 1e-5) {
  TrainConfig tc;
  tc.mode = s.mode;
  tc.hidden = s.hidden;
  tc.attention_dim = s.attention;
  tc.lambda1 = s.lambda1;
  const ModelConfig cfg = model_config_for(tc, s.dim, s.labels);
  const double lambda1 = loss_config_for(tc).relation_weight;
  TinyProblem prob = tiny_problem(cfg, s.width, s.batch, s.seed);
  std::vector<double> angles = {0, 45, 90, 135, 180, 225, 270, 315};
  Rng(derive_seed(s.seed, 9)).shuffle(angles);
  angles.resize(s.labels);
  const RelationMatrix rel = plutchik_weights(angles);
  const bool joint = cfg.mode == Mode::kJoint;

  std::vector<ModelParams> nets;
  for (std::size_t n = 0; n < cfg.network_count(); ++n) {
    nets.push_back(init_params(cfg, cfg.heads_per_network(), derive_seed(s.seed, 20 + n), s.init_scale));
  }
  EmbeddingTable table{prob.embedding, s.train_embeddings};
  std::vector<Gradients> grads;
  for (const auto& net : nets) grads.push_back(Gradients::zeros_like(cfg, net.head_count(), table));

  const double inv = 1.0 / static_cast<double>(s.batch);
  auto labels_for = [&](std::size_t b, std::size_t n) {
    return joint ? prob.labels[b] : LabelVector{prob.labels[b][n]};
  };
  auto network_loss = [&](std::size_t n) {
    reference::Real total = 0;
    for (std::size_t b = 0; b < s.batch; ++b) {
      const SequenceView seq{prob.ids[b], prob.masks[b]};
      const auto p = reference::probabilities(nets[n], table.vectors, cfg, seq);
      total += reference::instance_loss(p, labels_for(b, n), joint && lambda1 != 0.0 ? &rel : nullptr, lambda1);
    }
    return total / static_cast<reference::Real>(s.batch);
  };
  Matrix embedding_grad(table.vectors.rows(), table.vectors.cols());
  for (std::size_t n = 0; n < nets.size(); ++n) {
    for (std::size_t b = 0; b < s.batch; ++b) {
      const SequenceView seq{prob.ids[b], prob.masks[b]};
      const auto tr = forward(seq, table.vectors, nets[n], cfg);
      const LabelVector y = labels_for(b, n);
      backward(tr, seq, table.vectors, y, joint ? &rel : nullptr, lambda1, nets[n], cfg, grads[n], inv);
    }
    if (s.train_embeddings) {
      for (std::size_t k = 0; k < embedding_grad.size(); ++k) embedding_grad[k] += grads[n].embedding[k];
    }
  }
  // Networks share no parameters, so each is checked against its own loss.
  GradCheckReport worst;
  for (std::size_t n = 0; n < nets.size(); ++n) {
    auto views = views_of(nets[n], grads[n].params, "net" + std::to_string(n) + ".");
    auto r = grad_check([&] { return network_loss(n); }, views, epsilon);
    if (n == 0 || r.max_relative_error > worst.max_relative_error) {
      r.checked += worst.checked;
      worst = r;
    } else {
      worst.checked += r.checked;
    }
  }
  if (s.train_embeddings) {
    const std::vector<ParamView> views = {{"embeddings", table.vectors.values(), embedding_grad.values()}};
    auto r = grad_check(
        [&] {
          reference::Real total = 0;
          for (std::size_t n = 0; n < nets.size(); ++n) total += network_loss(n);
          return total;
        },
        views, epsilon);
    if (r.max_relative_error > worst.max_relative_error) {
      r.checked += worst.checked;
      worst = r;
    } else {
      worst.checked += r.checked;
    }
  }
  return worst;
}

}  // namespace jbnn::testing
