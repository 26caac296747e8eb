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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "jbnn/data.hpp"
#include "jbnn/errors.hpp"
#include "jbnn/loss.hpp"
#include "jbnn/numerics.hpp"
#include "jbnn/types.hpp"

namespace jbnn {

/// kJoint: one shared encoder with one logistic head per label.
/// kBinaryRelevance: one independent single-head network per label.
enum class Mode { kJoint, kBinaryRelevance };

struct ModelConfig {
  std::size_t embedding_dim = 200;
  std::size_t hidden = 100;        // per direction
  std::size_t attention_dim = 0;   // 0 means 2 * hidden
  std::size_t labels = 8;
  std::size_t max_len = kDefaultMaxLen;
  bool bidirectional = true;
  bool use_attention = true;
  Mode mode = Mode::kJoint;

  std::size_t attention_size() const { return attention_dim == 0 ? 2 * hidden : attention_dim; }
  std::size_t encoder_dim() const { return bidirectional ? 2 * hidden : hidden; }
  std::size_t heads_per_network() const { return mode == Mode::kJoint ? labels : 1; }
  std::size_t network_count() const { return mode == Mode::kJoint ? 1 : labels; }

  void validate() const {
    if (embedding_dim == 0 || hidden == 0 || labels == 0 || max_len == 0) {
      throw ConfigError("model config: d, h, m and max_len must all be >= 1");
    }
  }
};

/// Stacked gate weights. Row blocks of size `hidden`, in order: input,
/// forget, output, candidate. Columns are [x_t ; h_{t-1}].
struct LstmParams {
  Matrix weights;  // 4h x (d + h)
  Matrix bias;     // 4h x 1
};

struct ModelParams {
  LstmParams forward_lstm;
  LstmParams backward_lstm;  // empty when unidirectional
  Matrix attention_weights;  // a x H
  Matrix attention_bias;     // a x 1
  Matrix attention_context;  // a x 1
  Matrix head_weights;       // heads x H
  Matrix head_bias;          // heads x 1

  /// Allocates zero-filled parameters for `heads` output heads.
  static ModelParams zeros(const ModelConfig& cfg, std::size_t heads) {
    cfg.validate();
    const std::size_t d = cfg.embedding_dim, h = cfg.hidden, a = cfg.attention_size(), H = cfg.encoder_dim();
    ModelParams p;
    p.forward_lstm = {Matrix(4 * h, d + h), Matrix(4 * h, 1)};
    if (cfg.bidirectional) p.backward_lstm = {Matrix(4 * h, d + h), Matrix(4 * h, 1)};
    if (cfg.use_attention) {
      p.attention_weights = Matrix(a, H);
      p.attention_bias = Matrix(a, 1);
      p.attention_context = Matrix(a, 1);
    }
    p.head_weights = Matrix(heads, H);
    p.head_bias = Matrix(heads, 1);
    return p;
  }

  std::size_t head_count() const { return head_bias.rows(); }

  /// Calls f(name, matrix, is_weight) for every non-empty group in a fixed
  /// order. Biases have is_weight == false and are excluded from L2.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](std::string_view, const Matrix& m, bool) { n += m.size(); });
    return n;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    bool same = true;
    std::vector<const Matrix*> lhs;
    a.visit([&](std::string_view, const Matrix& m, bool) { lhs.push_back(&m); });
    std::size_t i = 0;
    b.visit([&](std::string_view, const Matrix& m, bool) {
      if (i >= lhs.size() || !(*lhs[i] == m)) same = false;
      ++i;
    });
    return same && i == lhs.size();
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    auto emit = [&](std::string_view name, auto& m, bool is_weight) {
      if (!m.empty()) f(name, m, is_weight);
    };
    emit("forward_lstm.weights", self.forward_lstm.weights, true);
    emit("forward_lstm.bias", self.forward_lstm.bias, false);
    emit("backward_lstm.weights", self.backward_lstm.weights, true);
    emit("backward_lstm.bias", self.backward_lstm.bias, false);
    emit("attention.weights", self.attention_weights, true);
    emit("attention.bias", self.attention_bias, false);
    emit("attention.context", self.attention_context, true);
    emit("heads.weights", self.head_weights, true);
    emit("heads.bias", self.head_bias, false);
  }
};

/// Gradient buffers mirroring ModelParams, plus the embedding table when it
/// is trainable (otherwise `embedding` stays empty).
struct Gradients {
  ModelParams params;
  Matrix embedding;

  static Gradients zeros_like(const ModelConfig& cfg, std::size_t heads, const EmbeddingTable& table) {
    Gradients g;
    g.params = ModelParams::zeros(cfg, heads);
    if (table.trainable) g.embedding = Matrix(table.vectors.rows(), table.vectors.cols());
    return g;
  }

  void zero() {
    params.visit([](std::string_view, Matrix& m, bool) { m.fill(0.0); });
    embedding.fill(0.0);
  }
};

/// Every entry i.i.d. uniform on [-scale, scale] under `seed`.
inline ModelParams init_params(const ModelConfig& cfg, std::size_t heads, std::uint64_t seed, double scale = 0.01) {
  ModelParams p = ModelParams::zeros(cfg, heads);
  Rng rng(seed);
  p.visit([&](std::string_view, Matrix& m, bool) {
    for (double& v : m.values()) v = rng.uniform(-scale, scale);
  });
  return p;
}

/// Trainable parameter count excluding the embedding table.
inline std::size_t count_params(const ModelConfig& cfg) {
  const std::size_t d = cfg.embedding_dim, h = cfg.hidden, a = cfg.attention_size(), H = cfg.encoder_dim();
  const std::size_t directions = cfg.bidirectional ? 2 : 1;
  std::size_t per_network = directions * 4 * (h * (d + h) + h);
  if (cfg.use_attention) per_network += a * H + a + a;
  per_network += cfg.heads_per_network() * (H + 1);
  return per_network * cfg.network_count();
}

inline double weight_square_sum(const ModelParams& p) {
  double s = 0.0;
  p.visit([&](std::string_view, const Matrix& m, bool is_weight) {
    if (is_weight) for (double v : m.values()) s += v * v;
  });
  return s;
}

// ---------------------------------------------------------------------------
// LSTM cell
// ---------------------------------------------------------------------------

struct CellOutput {
  std::vector<double> h;
  std::vector<double> c;
  std::vector<double> gates;  // post-activation i, f, o, g
};

namespace detail {

// One LSTM step. `concat` is scratch of size d + h.
inline void lstm_step(std::span<const double> x, std::span<const double> h_prev, std::span<const double> c_prev,
                      const LstmParams& p, std::span<double> concat, std::span<double> gates, std::span<double> c,
                      std::span<double> h) {
  const std::size_t n = h.size();
  std::copy(x.begin(), x.end(), concat.begin());
  std::copy(h_prev.begin(), h_prev.end(), concat.begin() + static_cast<std::ptrdiff_t>(x.size()));
  std::copy(p.bias.values().begin(), p.bias.values().end(), gates.begin());
  gemv_acc(p.weights, concat, gates);
  sigmoid_inplace(gates.subspan(0, 3 * n));
  tanh_inplace(gates.subspan(3 * n, n));
  for (std::size_t k = 0; k < n; ++k) {
    const double i = gates[k], f = gates[n + k], o = gates[2 * n + k], g = gates[3 * n + k];
    c[k] = f * c_prev[k] + i * g;
    h[k] = o * std::tanh(c[k]);
  }
}

// Backward through one step. dh and dc are the gradients arriving at this
// step's outputs. Accumulates into grads and writes dx, dh_prev, dc_prev.
inline void lstm_step_backward(std::span<const double> x, std::span<const double> h_prev,
                               std::span<const double> c_prev, std::span<const double> gates,
                               std::span<const double> c, std::span<const double> dh, std::span<const double> dc,
                               const LstmParams& p, LstmParams& grads, std::span<double> concat,
                               std::span<double> dz, std::span<double> dconcat, std::span<double> dx,
                               std::span<double> dh_prev, std::span<double> dc_prev) {
  const std::size_t n = c.size();
  for (std::size_t k = 0; k < n; ++k) {
    const double i = gates[k], f = gates[n + k], o = gates[2 * n + k], g = gates[3 * n + k];
    const double tc = std::tanh(c[k]);
    const double dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
    dz[k] = dct * g * i * (1.0 - i);
    dz[n + k] = dct * c_prev[k] * f * (1.0 - f);
    dz[2 * n + k] = dh[k] * tc * o * (1.0 - o);
    dz[3 * n + k] = dct * i * (1.0 - g * g);
    dc_prev[k] = dct * f;
  }
  std::copy(x.begin(), x.end(), concat.begin());
  std::copy(h_prev.begin(), h_prev.end(), concat.begin() + static_cast<std::ptrdiff_t>(x.size()));
  outer_acc(grads.weights, dz, concat);
  auto db = grads.bias.values();
  for (std::size_t k = 0; k < dz.size(); ++k) db[k] += dz[k];
  std::fill(dconcat.begin(), dconcat.end(), 0.0);
  gemv_t_acc(p.weights, dz, dconcat);
  std::copy(dconcat.begin(), dconcat.begin() + static_cast<std::ptrdiff_t>(dx.size()), dx.begin());
  std::copy(dconcat.begin() + static_cast<std::ptrdiff_t>(dx.size()), dconcat.end(), dh_prev.begin());
}

}  // namespace detail

/// Standard four-gate LSTM cell with forget gate:
///   i, f, o = sigmoid(W[x; h_prev] + b), g = tanh(W_g[x; h_prev] + b_g)
///   c = f * c_prev + i * g,  h = o * tanh(c)
inline CellOutput lstm_cell(std::span<const double> x, std::span<const double> h_prev, std::span<const double> c_prev,
                            const LstmParams& p) {
  const std::size_t n = h_prev.size();
  if (p.weights.rows() != 4 * n || p.weights.cols() != x.size() + n || c_prev.size() != n) {
    throw ShapeError("lstm_cell: weights " + p.weights.shape_string() + " do not match x=" + std::to_string(x.size()) +
                     " h=" + std::to_string(n));
  }
  CellOutput out{std::vector<double>(n), std::vector<double>(n), std::vector<double>(4 * n)};
  std::vector<double> concat(x.size() + n);
  detail::lstm_step(x, h_prev, c_prev, p, concat, out.gates, out.c, out.h);
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Token ids with a validity mask of the same width. Masked positions are
/// skipped by both LSTM directions and get zero attention.
struct SequenceView {
  std::span<const std::size_t> ids;
  std::span<const std::uint8_t> mask;
};

struct DirectionTrace {
  std::vector<std::size_t> positions;  // in scan order
  Matrix gates;                        // steps x 4h
  Matrix cells;                        // steps x h
  Matrix hidden;                       // steps x h
};

struct ForwardTrace {
  std::size_t width = 0;
  std::vector<std::uint8_t> mask;
  DirectionTrace forward_dir;
  DirectionTrace backward_dir;
  Matrix hidden;                         // width x H, zero rows at masked positions
  Matrix attention_hidden;               // width x a, u_t
  std::vector<double> attention_scores;  // u_t . context
  std::vector<double> alpha;             // empty when attention is off
  std::size_t last_valid = 0;
  std::vector<double> pooled;            // v
  std::vector<double> logits;
  ProbVector probs;
};

/// Runs both LSTM directions over the valid positions and returns the width x
/// H matrix of concatenated states [h_fwd ; h_bwd].
inline Matrix encode(const SequenceView& seq, const Matrix& embedding, const ModelParams& params,
                     const ModelConfig& cfg, ForwardTrace* trace = nullptr) {
  if (seq.ids.size() != seq.mask.size()) throw ShapeError("encode: ids and mask widths differ");
  const std::size_t h = cfg.hidden, d = cfg.embedding_dim, width = seq.ids.size();
  if (embedding.cols() != d) {
    throw ShapeError("encode: embedding dim " + std::to_string(embedding.cols()) + " != config d " + std::to_string(d));
  }
  Matrix out(width, cfg.encoder_dim());
  std::vector<std::size_t> order;
  for (std::size_t t = 0; t < width; ++t) {
    if (seq.mask[t]) {
      if (seq.ids[t] >= embedding.rows()) throw ShapeError("encode: token id " + std::to_string(seq.ids[t]) + " out of range");
      order.push_back(t);
    }
  }
  std::vector<double> concat(d + h);
  auto scan = [&](const LstmParams& p, std::vector<std::size_t> positions, std::size_t offset, DirectionTrace& dt) {
    const std::size_t steps = positions.size();
    dt.gates = Matrix(steps, 4 * h);
    dt.cells = Matrix(steps, h);
    dt.hidden = Matrix(steps, h);
    const std::vector<double> zero(h, 0.0);
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t t = positions[s];
      std::span<const double> h_prev = s == 0 ? std::span<const double>(zero) : dt.hidden.row(s - 1);
      std::span<const double> c_prev = s == 0 ? std::span<const double>(zero) : dt.cells.row(s - 1);
      detail::lstm_step(embedding.row(seq.ids[t]), h_prev, c_prev, p, concat, dt.gates.row(s), dt.cells.row(s),
                        dt.hidden.row(s));
      auto hrow = dt.hidden.row(s);
      std::copy(hrow.begin(), hrow.end(), out.row(t).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    dt.positions = std::move(positions);
  };
  DirectionTrace fwd_local, bwd_local;
  DirectionTrace& fwd = trace ? trace->forward_dir : fwd_local;
  DirectionTrace& bwd = trace ? trace->backward_dir : bwd_local;
  scan(params.forward_lstm, order, 0, fwd);
  if (cfg.bidirectional) {
    std::vector<std::size_t> reversed(order.rbegin(), order.rend());
    scan(params.backward_lstm, std::move(reversed), h, bwd);
  }
  return out;
}

/// Softmax over the valid positions with max subtraction; masked entries are
/// exactly zero.
inline std::vector<double> masked_softmax(std::span<const double> scores, std::span<const std::uint8_t> mask) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < scores.size(); ++t)
    if (mask[t]) mx = std::max(mx, scores[t]);
  if (mx == -std::numeric_limits<double>::infinity()) {
    throw EvaluationError("attention: every position is masked");
  }
  std::vector<double> alpha(scores.size(), 0.0);
  double z = 0.0;
  for (std::size_t t = 0; t < scores.size(); ++t) {
    if (!mask[t]) continue;
    alpha[t] = std::exp(scores[t] - mx);
    z += alpha[t];
  }
  for (double& a : alpha) a /= z;
  return alpha;
}

struct AttentionResult {
  Matrix projected;             // width x a, u_t = tanh(W1 h_t + b1)
  std::vector<double> scores;   // u_t . context
  std::vector<double> alpha;
  std::vector<double> pooled;   // v = sum_t alpha_t h_t
};

inline AttentionResult attention(const Matrix& hidden, std::span<const std::uint8_t> mask, const ModelParams& params) {
  const std::size_t width = hidden.rows(), a = params.attention_weights.rows();
  if (params.attention_weights.cols() != hidden.cols()) {
    throw ShapeError("attention: weights " + params.attention_weights.shape_string() + " vs hidden " +
                     hidden.shape_string());
  }
  AttentionResult r;
  r.projected = Matrix(width, a);
  r.scores.assign(width, 0.0);
  for (std::size_t t = 0; t < width; ++t) {
    if (!mask[t]) continue;
    auto u = r.projected.row(t);
    std::copy(params.attention_bias.values().begin(), params.attention_bias.values().end(), u.begin());
    gemv_acc(params.attention_weights, hidden.row(t), u);
    tanh_inplace(u);
    r.scores[t] = dot(u, params.attention_context.values());
  }
  r.alpha = masked_softmax(r.scores, mask);
  r.pooled.assign(hidden.cols(), 0.0);
  for (std::size_t t = 0; t < width; ++t) {
    if (r.alpha[t] == 0.0) continue;
    auto hr = hidden.row(t);
    for (std::size_t k = 0; k < hr.size(); ++k) r.pooled[k] += r.alpha[t] * hr[k];
  }
  return r;
}

struct HeadOutput {
  std::vector<double> logits;
  ProbVector probs;
};

/// Independent logistic heads: p_j = sigmoid(w_j . v + b_j).
inline HeadOutput heads(std::span<const double> v, const ModelParams& params) {
  if (params.head_weights.cols() != v.size()) {
    throw ShapeError("heads: weights " + params.head_weights.shape_string() + " vs v of size " + std::to_string(v.size()));
  }
  HeadOutput out;
  out.logits.assign(params.head_bias.values().begin(), params.head_bias.values().end());
  gemv_acc(params.head_weights, v, out.logits);
  out.probs.resize(out.logits.size());
  for (std::size_t j = 0; j < out.logits.size(); ++j) out.probs[j] = sigmoid(out.logits[j]);
  return out;
}

/// y_j = 1 iff p_j > 0.5; an exact tie predicts 0.
inline LabelVector predict(std::span<const double> p) {
  LabelVector y(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) y[j] = p[j] > 0.5 ? 1 : 0;
  return y;
}

inline ForwardTrace forward(const SequenceView& seq, const Matrix& embedding, const ModelParams& params,
                            const ModelConfig& cfg) {
  ForwardTrace tr;
  tr.width = seq.ids.size();
  tr.mask.assign(seq.mask.begin(), seq.mask.end());
  tr.hidden = encode(seq, embedding, params, cfg, &tr);
  if (tr.forward_dir.positions.empty()) throw EvaluationError("forward: sentence has no valid positions");
  tr.last_valid = tr.forward_dir.positions.back();
  if (cfg.use_attention) {
    auto att = attention(tr.hidden, tr.mask, params);
    tr.attention_hidden = std::move(att.projected);
    tr.attention_scores = std::move(att.scores);
    tr.alpha = std::move(att.alpha);
    tr.pooled = std::move(att.pooled);
  } else {
    auto last = tr.hidden.row(tr.last_valid);
    tr.pooled.assign(last.begin(), last.end());
  }
  auto out = heads(tr.pooled, params);
  tr.logits = std::move(out.logits);
  tr.probs = std::move(out.probs);
  return tr;
}

/// Convenience for unpadded sentences.
inline ForwardTrace forward(const Sentence& s, const Matrix& embedding, const ModelParams& params,
                            const ModelConfig& cfg) {
  const std::vector<std::uint8_t> mask(s.ids.size(), 1);
  return forward(SequenceView{s.ids, mask}, embedding, params, cfg);
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Backpropagates d loss / d logits through heads, attention and both LSTM
/// directions, accumulating into `grads`. The embedding gradient is only
/// accumulated when grads.embedding is non-empty.
inline void backward_from_logits(const ForwardTrace& tr, const SequenceView& seq, const Matrix& embedding,
                                 std::span<const double> dlogits, const ModelParams& params, const ModelConfig& cfg,
                                 Gradients& grads) {
  const std::size_t H = cfg.encoder_dim(), h = cfg.hidden, d = cfg.embedding_dim;
  ModelParams& g = grads.params;

  // heads
  std::vector<double> dv(H, 0.0);
  outer_acc(g.head_weights, dlogits, tr.pooled);
  for (std::size_t j = 0; j < dlogits.size(); ++j) g.head_bias[j] += dlogits[j];
  gemv_t_acc(params.head_weights, dlogits, dv);

  // pooling
  Matrix dhidden(tr.width, H);
  if (cfg.use_attention) {
    const std::size_t a = params.attention_weights.rows();
    std::vector<double> dalpha(tr.width, 0.0);
    double weighted = 0.0;
    for (std::size_t t = 0; t < tr.width; ++t) {
      if (!tr.mask[t]) continue;
      dalpha[t] = dot(dv, tr.hidden.row(t));
      weighted += tr.alpha[t] * dalpha[t];
      auto dh = dhidden.row(t);
      for (std::size_t k = 0; k < H; ++k) dh[k] += tr.alpha[t] * dv[k];
    }
    std::vector<double> dpre(a);
    for (std::size_t t = 0; t < tr.width; ++t) {
      if (!tr.mask[t]) continue;
      const double dscore = tr.alpha[t] * (dalpha[t] - weighted);
      auto u = tr.attention_hidden.row(t);
      for (std::size_t k = 0; k < a; ++k) {
        g.attention_context[k] += dscore * u[k];
        dpre[k] = dscore * params.attention_context[k] * (1.0 - u[k] * u[k]);
        g.attention_bias[k] += dpre[k];
      }
      outer_acc(g.attention_weights, dpre, tr.hidden.row(t));
      gemv_t_acc(params.attention_weights, dpre, dhidden.row(t));
    }
  } else {
    auto dh = dhidden.row(tr.last_valid);
    std::copy(dv.begin(), dv.end(), dh.begin());
  }

  // recurrences
  std::vector<double> concat(d + h), dconcat(d + h), dz(4 * h), dx(d), dh_next(h), dc_next(h), dh(h), dc(h);
  const std::vector<double> zero(h, 0.0);
  auto unroll = [&](const DirectionTrace& dt, const LstmParams& p, LstmParams& gp, std::size_t offset) {
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    std::fill(dc_next.begin(), dc_next.end(), 0.0);
    for (std::size_t s = dt.positions.size(); s-- > 0;) {
      const std::size_t t = dt.positions[s];
      auto dout = dhidden.row(t);
      for (std::size_t k = 0; k < h; ++k) dh[k] = dout[offset + k] + dh_next[k];
      std::copy(dc_next.begin(), dc_next.end(), dc.begin());
      std::span<const double> h_prev = s == 0 ? std::span<const double>(zero) : dt.hidden.row(s - 1);
      std::span<const double> c_prev = s == 0 ? std::span<const double>(zero) : dt.cells.row(s - 1);
      detail::lstm_step_backward(embedding.row(seq.ids[t]), h_prev, c_prev, dt.gates.row(s), dt.cells.row(s), dh, dc,
                                 p, gp, concat, dz, dconcat, dx, dh_next, dc_next);
      if (!grads.embedding.empty()) {
        auto erow = grads.embedding.row(seq.ids[t]);
        for (std::size_t k = 0; k < d; ++k) erow[k] += dx[k];
      }
    }
  };
  unroll(tr.forward_dir, params.forward_lstm, g.forward_lstm, 0);
  if (cfg.bidirectional) unroll(tr.backward_dir, params.backward_lstm, g.backward_lstm, h);
}

/// Accumulates scale * d(instance loss)/d(params), where the instance loss is
/// jbce + lambda1 * relation term. L2 is applied by the optimizer.
inline void backward(const ForwardTrace& tr, const SequenceView& seq, const Matrix& embedding,
                     std::span<const std::uint8_t> y, const RelationMatrix* relation, double relation_weight,
                     const ModelParams& params, const ModelConfig& cfg, Gradients& grads, double scale = 1.0) {
  std::vector<double> dlogits(tr.probs.size());
  logit_gradient(tr.probs, y, relation, relation_weight, dlogits);
  for (double& v : dlogits) v *= scale;
  backward_from_logits(tr, seq, embedding, dlogits, params, cfg, grads);
}

// ---------------------------------------------------------------------------
// Bundled classifier and checkpoints
// ---------------------------------------------------------------------------

/// Everything needed to score raw token lists: config, labels, vocabulary,
/// embeddings and one network (joint) or one per label (binary relevance).
struct Classifier {
  ModelConfig config;
  std::vector<std::string> label_names;
  Vocabulary vocab;
  EmbeddingTable embeddings;
  std::vector<ModelParams> networks;

  ProbVector predict_proba(const SequenceView& seq) const {
    if (config.mode == Mode::kJoint) return forward(seq, embeddings.vectors, networks.at(0), config).probs;
    ProbVector p;
    p.reserve(networks.size());
    for (const auto& net : networks) p.push_back(forward(seq, embeddings.vectors, net, config).probs.at(0));
    return p;
  }

  ProbVector predict_proba(const Sentence& s) const {
    const std::vector<std::uint8_t> mask(s.ids.size(), 1);
    return predict_proba(SequenceView{s.ids, mask});
  }
};

inline std::string mode_name(Mode m) { return m == Mode::kJoint ? "joint" : "binary-relevance"; }

inline Mode parse_model_mode(const std::string& s) {
  if (s == "joint") return Mode::kJoint;
  if (s == "binary-relevance") return Mode::kBinaryRelevance;
  throw ConfigError("unknown model mode '" + s + "'");
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"embedding_dim", c.embedding_dim}, {"hidden", c.hidden},     {"attention_dim", c.attention_size()},
          {"labels", c.labels},               {"max_len", c.max_len},   {"bidirectional", c.bidirectional},
          {"use_attention", c.use_attention}, {"mode", mode_name(c.mode)}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.attention_dim = j.at("attention_dim").get<std::size_t>();
  c.labels = j.at("labels").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.bidirectional = j.at("bidirectional").get<bool>();
  c.use_attention = j.at("use_attention").get<bool>();
  c.mode = parse_model_mode(j.at("mode").get<std::string>());
  c.validate();
  return c;
}

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.values().begin(), m.values().end())}};
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& name) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != m.size()) {
    throw ParseError("checkpoint: array '" + name + "' declares " + m.shape_string() + " but holds " +
                     std::to_string(data.size()) + " values");
  }
  std::copy(data.begin(), data.end(), m.values().begin());
  return m;
}

}  // namespace detail

/// Self-describing JSON checkpoint. Doubles are written in shortest
/// round-trip form, so save -> load is bit-exact.
inline nlohmann::json checkpoint_to_json(const Classifier& c) {
  nlohmann::json j;
  j["format"] = "jbnn-checkpoint";
  j["version"] = 1;
  j["config"] = config_to_json(c.config);
  j["label_names"] = c.label_names;
  std::vector<std::string> tokens;
  for (std::size_t id = 0; id < c.vocab.id_count(); ++id) tokens.push_back(c.vocab.token(id));
  j["vocab"] = {{"tokens", tokens}, {"oov_id", c.vocab.has_oov() ? nlohmann::json(c.vocab.oov_id()) : nlohmann::json()}};
  j["embeddings"] = detail::matrix_to_json(c.embeddings.vectors);
  j["embeddings"]["trainable"] = c.embeddings.trainable;
  auto& nets = j["networks"] = nlohmann::json::array();
  for (const auto& net : c.networks) {
    nlohmann::json n = nlohmann::json::object();
    net.visit([&](std::string_view name, const Matrix& m, bool) { n[std::string(name)] = detail::matrix_to_json(m); });
    nets.push_back(std::move(n));
  }
  return j;
}

inline Classifier checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "jbnn-checkpoint") throw ParseError("checkpoint: wrong format tag");
    if (j.at("version").get<int>() != 1) throw ParseError("checkpoint: unsupported version");
    Classifier c;
    c.config = config_from_json(j.at("config"));
    c.label_names = j.at("label_names").get<std::vector<std::string>>();
    if (c.label_names.size() != c.config.labels) throw ParseError("checkpoint: label_names size != config labels");
    const auto tokens = j.at("vocab").at("tokens").get<std::vector<std::string>>();
    const auto& oov = j.at("vocab").at("oov_id");
    for (std::size_t id = 1; id < tokens.size(); ++id) {
      if (!oov.is_null() && id == oov.get<std::size_t>()) {
        if (id + 1 != tokens.size()) throw ParseError("checkpoint: OOV id must be the last id");
        c.vocab.reserve_oov();
      } else {
        c.vocab.add(tokens[id]);
      }
    }
    c.embeddings.vectors = detail::matrix_from_json(j.at("embeddings"), "embeddings");
    c.embeddings.trainable = j.at("embeddings").at("trainable").get<bool>();
    if (c.embeddings.vectors.rows() != c.vocab.id_count() || c.embeddings.dim() != c.config.embedding_dim) {
      throw ParseError("checkpoint: embedding table " + c.embeddings.vectors.shape_string() + " does not match vocabulary/config");
    }
    const auto& nets = j.at("networks");
    if (nets.size() != c.config.network_count()) throw ParseError("checkpoint: wrong number of networks");
    for (const auto& n : nets) {
      ModelParams p = ModelParams::zeros(c.config, c.config.heads_per_network());
      p.visit([&](std::string_view name, Matrix& m, bool) {
        const std::string key(name);
        Matrix loaded = detail::matrix_from_json(n.at(key), key);
        if (loaded.rows() != m.rows() || loaded.cols() != m.cols()) {
          throw ParseError("checkpoint: '" + key + "' has shape " + loaded.shape_string() + ", expected " + m.shape_string());
        }
        m = std::move(loaded);
      });
      c.networks.push_back(std::move(p));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Classifier& c) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path);
  out << checkpoint_to_json(c).dump() << '\n';
}

inline Classifier load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace jbnn
