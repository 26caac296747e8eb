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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "jbnn/data.hpp"
#include "jbnn/errors.hpp"
#include "jbnn/loss.hpp"
#include "jbnn/metrics.hpp"
#include "jbnn/model.hpp"
#include "jbnn/numerics.hpp"

namespace jbnn {

// ---------------------------------------------------------------------------
// Logging
// ---------------------------------------------------------------------------

enum class LogLevel { kQuiet, kInfo, kDebug };

/// Reads JBNN_LOG (quiet | info | debug); unset means info.
inline LogLevel log_level_from_env() {
  const char* v = std::getenv("JBNN_LOG");
  if (v == nullptr) return LogLevel::kInfo;
  const std::string s(v);
  if (s == "quiet") return LogLevel::kQuiet;
  if (s == "info" || s.empty()) return LogLevel::kInfo;
  if (s == "debug") return LogLevel::kDebug;
  throw ConfigError("JBNN_LOG must be quiet, info or debug, got '" + s + "'");
}

inline void log_line(LogLevel level, LogLevel threshold, const std::string& msg) {
  static std::mutex mu;
  if (threshold == LogLevel::kQuiet || static_cast<int>(level) > static_cast<int>(threshold)) return;
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << msg << '\n';
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class RunMode { kJbnn, kBrnn, kJbnnNoBi, kJbnnNoAtt, kJbnnNoEmoRel };

inline const char* run_mode_name(RunMode m) {
  switch (m) {
    case RunMode::kJbnn: return "jbnn";
    case RunMode::kBrnn: return "brnn";
    case RunMode::kJbnnNoBi: return "jbnn-no-bi";
    case RunMode::kJbnnNoAtt: return "jbnn-no-att";
    case RunMode::kJbnnNoEmoRel: return "jbnn-no-emorel";
  }
  return "";
}

inline const char* run_mode_title(RunMode m) {
  switch (m) {
    case RunMode::kJbnn: return "JBNN";
    case RunMode::kBrnn: return "BRNN";
    case RunMode::kJbnnNoBi: return "JBNN-No-Bi";
    case RunMode::kJbnnNoAtt: return "JBNN-No-Att";
    case RunMode::kJbnnNoEmoRel: return "JBNN-No-EmoRel";
  }
  return "";
}

inline RunMode parse_run_mode(const std::string& s) {
  for (RunMode m : {RunMode::kJbnn, RunMode::kBrnn, RunMode::kJbnnNoBi, RunMode::kJbnnNoAtt, RunMode::kJbnnNoEmoRel}) {
    if (s == run_mode_name(m)) return m;
  }
  throw ConfigError("unknown mode '" + s + "' (expected jbnn, brnn, jbnn-no-bi, jbnn-no-att or jbnn-no-emorel)");
}

struct TrainConfig {
  double learning_rate = 0.005;
  double lambda1 = 1e-3;
  double lambda2 = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::uint64_t seed = 1;
  RunMode mode = RunMode::kJbnn;
  double validation_fraction = 0.1;
  std::size_t folds = 10;       // >= 2: cross-validation; 1: single held-out test split
  double test_fraction = 0.1;   // used when folds == 1
  double clip_norm = 0.0;       // 0 disables global-norm clipping
  bool train_embeddings = false;
  std::size_t workers = 1;
  std::size_t hidden = 100;
  std::size_t attention_dim = 0;  // 0 means 2 * hidden
  std::size_t max_len = kDefaultMaxLen;
  double init_scale = 0.01;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be finite and >= 0");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("lambda1 and lambda2 must be >= 0");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) throw ConfigError("validation fraction must be in (0, 1)");
    if (folds == 1 && !(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must be in (0, 1)");
    if (folds == 0) throw ConfigError("folds must be >= 1");
    if (!(clip_norm >= 0.0)) throw ConfigError("clip norm must be >= 0");
    if (workers == 0) throw ConfigError("workers must be >= 1");
    if (hidden == 0) throw ConfigError("hidden size must be >= 1");
    if (!(init_scale > 0.0)) throw ConfigError("init scale must be > 0");
    if (train_embeddings && mode == RunMode::kBrnn) {
      throw ConfigError("train_embeddings is not supported in brnn mode (the per-label networks would share the table)");
    }
  }
};

inline ModelConfig model_config_for(const TrainConfig& tc, std::size_t embedding_dim, std::size_t labels) {
  ModelConfig mc;
  mc.embedding_dim = embedding_dim;
  mc.hidden = tc.hidden;
  mc.attention_dim = tc.attention_dim;
  mc.labels = labels;
  mc.max_len = tc.max_len;
  mc.bidirectional = tc.mode != RunMode::kJbnnNoBi;
  mc.use_attention = tc.mode != RunMode::kJbnnNoAtt;
  mc.mode = tc.mode == RunMode::kBrnn ? Mode::kBinaryRelevance : Mode::kJoint;
  mc.validate();
  return mc;
}

/// jbnn-no-emorel differs from jbnn only in lambda1 = 0. Binary relevance
/// networks see one label each, so the relation term never applies there.
inline LossConfig loss_config_for(const TrainConfig& tc) {
  LossConfig lc;
  lc.relation_weight = tc.mode == RunMode::kJbnnNoEmoRel || tc.mode == RunMode::kBrnn ? 0.0 : tc.lambda1;
  lc.l2_weight = tc.lambda2;
  return lc;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"mode", run_mode_name(c.mode)},
          {"validation_fraction", c.validation_fraction},
          {"folds", c.folds},
          {"test_fraction", c.test_fraction},
          {"clip_norm", c.clip_norm},
          {"train_embeddings", c.train_embeddings},
          {"hidden", c.hidden},
          {"attention_dim", c.attention_dim},
          {"max_len", c.max_len},
          {"init_scale", c.init_scale},
          {"adam", {{"beta1", 0.9}, {"beta2", 0.999}, {"epsilon", 1e-8}}}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.lambda1 = j.at("lambda1").get<double>();
  c.lambda2 = j.at("lambda2").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.mode = parse_run_mode(j.at("mode").get<std::string>());
  c.validation_fraction = j.at("validation_fraction").get<double>();
  c.folds = j.at("folds").get<std::size_t>();
  c.test_fraction = j.at("test_fraction").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.train_embeddings = j.at("train_embeddings").get<bool>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.attention_dim = j.at("attention_dim").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.init_scale = j.at("init_scale").get<double>();
  return c;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update on a flat block. `step` is the already
/// incremented timestep (t >= 1).
inline void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m1,
                        std::span<double> m2, std::uint64_t step, double lr, const AdamHyper& hp = {}) {
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m1[i] = hp.beta1 * m1[i] + (1.0 - hp.beta1) * grad[i];
    m2[i] = hp.beta2 * m2[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
    theta[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + hp.epsilon);
  }
}

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  z.visit([](std::string_view, Matrix& m, bool) { m.fill(0.0); });
  return z;
}

struct AdamState {
  ModelParams first;
  ModelParams second;
  Matrix embedding_first;
  Matrix embedding_second;
  std::uint64_t step = 0;
  AdamHyper hyper;

  static AdamState for_params(const ModelParams& p, const Matrix* embedding = nullptr) {
    AdamState s;
    s.first = zeros_like(p);
    s.second = zeros_like(p);
    if (embedding != nullptr) {
      s.embedding_first = Matrix(embedding->rows(), embedding->cols());
      s.embedding_second = Matrix(embedding->rows(), embedding->cols());
    }
    return s;
  }
};

struct StepOptions {
  double learning_rate = 0.005;
  double l2_weight = 0.0;
  double clip_norm = 0.0;
};

/// Adds 2 * lambda2 * theta to the gradient of every weight group.
inline void add_l2_gradient(const ModelParams& params, ModelParams& grads, double l2_weight) {
  if (l2_weight == 0.0) return;
  std::vector<const Matrix*> theta;
  params.visit([&](std::string_view, const Matrix& m, bool is_weight) { theta.push_back(is_weight ? &m : nullptr); });
  std::size_t i = 0;
  grads.visit([&](std::string_view, Matrix& g, bool) {
    if (const Matrix* t = theta[i++]) {
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += 2.0 * l2_weight * (*t)[k];
    }
  });
}

/// Applies coupled L2, optional global-norm clipping, and one Adam update.
/// With a non-null `embedding`, the embedding gradient is applied too and
/// the padding row is pinned to zero.
inline void adam_step(ModelParams& params, Gradients& grads, AdamState& state, const StepOptions& opt,
                      Matrix* embedding = nullptr) {
  add_l2_gradient(params, grads.params, opt.l2_weight);
  double norm_sq = 0.0;
  grads.params.visit([&](std::string_view name, const Matrix& g, bool) {
    for (double v : g.values()) {
      if (!std::isfinite(v)) throw EvaluationError("non-finite gradient in parameter group " + std::string(name));
      norm_sq += v * v;
    }
  });
  const bool with_embedding = embedding != nullptr && !grads.embedding.empty();
  if (with_embedding) {
    for (double v : grads.embedding.values()) {
      if (!std::isfinite(v)) throw EvaluationError("non-finite gradient in parameter group embeddings");
      norm_sq += v * v;
    }
  }
  if (opt.clip_norm > 0.0) {
    const double norm = std::sqrt(norm_sq);
    if (norm > opt.clip_norm) {
      const double s = opt.clip_norm / norm;
      grads.params.visit([&](std::string_view, Matrix& g, bool) {
        for (double& v : g.values()) v *= s;
      });
      for (double& v : grads.embedding.values()) v *= s;
    }
  }
  ++state.step;
  std::vector<Matrix*> theta, m1, m2;
  params.visit([&](std::string_view, Matrix& m, bool) { theta.push_back(&m); });
  state.first.visit([&](std::string_view, Matrix& m, bool) { m1.push_back(&m); });
  state.second.visit([&](std::string_view, Matrix& m, bool) { m2.push_back(&m); });
  std::size_t i = 0;
  grads.params.visit([&](std::string_view, const Matrix& g, bool) {
    adam_update(theta[i]->values(), g.values(), m1[i]->values(), m2[i]->values(), state.step, opt.learning_rate,
                state.hyper);
    ++i;
  });
  if (with_embedding) {
    adam_update(embedding->values(), grads.embedding.values(), state.embedding_first.values(),
                state.embedding_second.values(), state.step, opt.learning_rate, state.hyper);
    std::fill(embedding->row(kPadId).begin(), embedding->row(kPadId).end(), 0.0);
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Fresh classifier: one joint network, or one single-head network per label.
inline Classifier make_classifier(const ModelConfig& mc, std::vector<std::string> label_names, Vocabulary vocab,
                                  EmbeddingTable embeddings, std::uint64_t seed, double init_scale = 0.01) {
  if (label_names.size() != mc.labels) throw ConfigError("label count does not match model config");
  if (embeddings.dim() != mc.embedding_dim) throw ConfigError("embedding dim does not match model config");
  Classifier c{mc, std::move(label_names), std::move(vocab), std::move(embeddings), {}};
  if (mc.mode == Mode::kJoint) {
    c.networks.push_back(init_params(mc, mc.labels, derive_seed(seed, 0), init_scale));
  } else {
    for (std::size_t j = 0; j < mc.labels; ++j) c.networks.push_back(init_params(mc, 1, derive_seed(seed, 10 + j), init_scale));
  }
  return c;
}

/// Owns the optimizer state for one classifier and runs mini-batch epochs.
class Trainer {
 public:
  Trainer(Classifier& model, const TrainConfig& tc, const RelationMatrix* relation)
      : model_(model), tc_(tc), loss_(loss_config_for(tc)), relation_(relation) {
    if (model_.config.mode == Mode::kJoint && loss_.relation_weight != 0.0) {
      if (relation_ == nullptr) throw ConfigError("lambda1 > 0 needs a relation matrix");
      if (relation_->size() != model_.config.labels) throw ConfigError("relation matrix size does not match label count");
    }
    model_.embeddings.trainable = tc.train_embeddings;
    for (const auto& net : model_.networks) {
      states_.push_back(AdamState::for_params(net, tc.train_embeddings ? &model_.embeddings.vectors : nullptr));
      grads_.push_back(Gradients::zeros_like(model_.config, net.head_count(), model_.embeddings));
    }
  }

  const LossConfig& loss_config() const { return loss_; }

  /// One optimizer step per batch and network. Returns the mean batch loss;
  /// for binary relevance the per-network losses are summed.
  double train_batches(const Dataset& ds, std::span<const Batch> batches) {
    if (batches.empty()) throw ConfigError("train_epoch: no batches");
    double total = 0.0;
    for (const Batch& b : batches) {
      for (std::size_t net = 0; net < model_.networks.size(); ++net) total += step(ds, b, net);
    }
    return total / static_cast<double>(batches.size());
  }

  /// Reshuffles with a seed derived from (epoch_seed, epoch).
  double train_epoch(const Dataset& ds, std::uint64_t epoch_seed, std::size_t epoch) {
    const auto batches = make_batches(ds, tc_.batch_size, derive_seed(epoch_seed, epoch));
    return train_batches(ds, batches);
  }

 private:
  double step(const Dataset& ds, const Batch& b, std::size_t net_index) {
    ModelParams& net = model_.networks[net_index];
    Gradients& g = grads_[net_index];
    g.zero();
    const bool joint = model_.config.mode == Mode::kJoint;
    const RelationMatrix* rel = joint ? relation_ : nullptr;
    const double inv = 1.0 / static_cast<double>(b.size());
    double loss = 0.0;
    LabelVector single(1);
    for (std::size_t r = 0; r < b.size(); ++r) {
      const SequenceView seq{b.tokens(r), b.valid(r)};
      const auto& labels = ds.examples[b.indices[r]].labels;
      std::span<const std::uint8_t> y = labels;
      if (!joint) {
        single[0] = labels[net_index];
        y = single;
      }
      const auto tr = forward(seq, model_.embeddings.vectors, net, model_.config);
      loss += instance_loss(tr.probs, y, rel, loss_.relation_weight);
      backward(tr, seq, model_.embeddings.vectors, y, rel, loss_.relation_weight, net, model_.config, g, inv);
    }
    loss = loss * inv + loss_.l2_weight * weight_square_sum(net);
    adam_step(net, g, states_[net_index], {tc_.learning_rate, loss_.l2_weight, tc_.clip_norm},
              tc_.train_embeddings ? &model_.embeddings.vectors : nullptr);
    return loss;
  }

  Classifier& model_;
  TrainConfig tc_;
  LossConfig loss_;
  const RelationMatrix* relation_;
  std::vector<AdamState> states_;
  std::vector<Gradients> grads_;
};

inline std::vector<EvalInstance> predict_all(const Classifier& c, const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<EvalInstance> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto& ex = ds.examples.at(i);
    EvalInstance e{ex.labels, c.predict_proba(ex.sentence), {}};
    e.y_hat = predict(e.p);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<EvalInstance> predict_all(const Classifier& c, const Dataset& ds) {
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return predict_all(c, ds, all);
}

// ---------------------------------------------------------------------------
// Cross-validation harness
// ---------------------------------------------------------------------------

/// Where the relation matrix came from, recorded in the manifest.
struct RelationSource {
  std::string kind = "none";  // none | angles-default | angles | matrix
  std::string path;
  std::optional<RelationMatrix> matrix;

  const RelationMatrix* get() const { return matrix ? &*matrix : nullptr; }
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<double> validation_ap;
  double seconds = 0.0;  // wall clock; excluded from reproducibility checks
};

struct FoldRecord {
  std::size_t index = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  MetricsReport test_metrics;
  std::string checkpoint;
};

/// Everything needed to rerun and audit a training run. Wall-clock numbers
/// live only under "wall_clock" in the JSON form.
struct RunManifest {
  TrainConfig train;
  ModelConfig model;
  LossConfig loss;
  std::string relation_kind;
  std::string relation_path;
  std::optional<Matrix> relation_matrix;
  std::size_t parameter_count = 0;
  std::size_t examples = 0;
  std::vector<std::string> label_names;
  std::vector<FoldRecord> folds;
  AggregateReport aggregate;

  std::vector<MetricsReport> fold_reports() const {
    std::vector<MetricsReport> r;
    for (const auto& f : folds) r.push_back(f.test_metrics);
    return r;
  }
};

inline nlohmann::json manifest_to_json(const RunManifest& m) {
  nlohmann::json j;
  j["format"] = "jbnn-run-manifest";
  j["version"] = 1;
  j["train_config"] = train_config_to_json(m.train);
  j["model_config"] = config_to_json(m.model);
  j["loss_config"] = {{"lambda1", m.loss.relation_weight}, {"lambda2", m.loss.l2_weight}};
  nlohmann::json rel = {{"kind", m.relation_kind}, {"path", m.relation_path}};
  if (m.relation_matrix) {
    std::vector<std::vector<double>> rows;
    for (std::size_t r = 0; r < m.relation_matrix->rows(); ++r) {
      auto row = m.relation_matrix->row(r);
      rows.emplace_back(row.begin(), row.end());
    }
    rel["matrix"] = rows;
  }
  j["relation"] = rel;
  j["parameter_count"] = m.parameter_count;
  j["data"] = {{"examples", m.examples}, {"label_names", m.label_names}};
  auto& folds = j["folds"] = nlohmann::json::array();
  auto& clock = j["wall_clock"]["epoch_seconds"] = nlohmann::json::array();
  for (const auto& f : m.folds) {
    nlohmann::json fj;
    fj["index"] = f.index;
    fj["train_indices"] = f.train;
    fj["validation_indices"] = f.validation;
    fj["test_indices"] = f.test;
    fj["best_epoch"] = f.best_epoch;
    fj["checkpoint"] = f.checkpoint;
    auto& ep = fj["epochs"] = nlohmann::json::array();
    std::vector<double> secs;
    for (const auto& e : f.epochs) {
      ep.push_back({{"epoch", e.epoch},
                    {"loss", e.loss},
                    {"validation_ap", e.validation_ap ? nlohmann::json(*e.validation_ap) : nlohmann::json()}});
      secs.push_back(e.seconds);
    }
    fj["test_metrics"] = report_to_json(f.test_metrics);
    folds.push_back(std::move(fj));
    clock.push_back(secs);
  }
  j["aggregate"] = aggregate_to_json(m.aggregate);
  return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "jbnn-run-manifest") throw ParseError("manifest: wrong format tag");
    RunManifest m;
    m.train = train_config_from_json(j.at("train_config"));
    m.model = config_from_json(j.at("model_config"));
    m.loss.relation_weight = j.at("loss_config").at("lambda1").get<double>();
    m.loss.l2_weight = j.at("loss_config").at("lambda2").get<double>();
    m.relation_kind = j.at("relation").at("kind").get<std::string>();
    m.relation_path = j.at("relation").at("path").get<std::string>();
    if (j.at("relation").contains("matrix")) {
      auto rows = j.at("relation").at("matrix").get<std::vector<std::vector<double>>>();
      Matrix w(rows.size(), rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) w(r, c) = rows[r].at(c);
      m.relation_matrix = std::move(w);
    }
    m.parameter_count = j.at("parameter_count").get<std::size_t>();
    m.examples = j.at("data").at("examples").get<std::size_t>();
    m.label_names = j.at("data").at("label_names").get<std::vector<std::string>>();
    const auto& clock = j.at("wall_clock").at("epoch_seconds");
    std::size_t fi = 0;
    for (const auto& fj : j.at("folds")) {
      FoldRecord f;
      f.index = fj.at("index").get<std::size_t>();
      f.train = fj.at("train_indices").get<std::vector<std::size_t>>();
      f.validation = fj.at("validation_indices").get<std::vector<std::size_t>>();
      f.test = fj.at("test_indices").get<std::vector<std::size_t>>();
      f.best_epoch = fj.at("best_epoch").get<std::size_t>();
      f.checkpoint = fj.at("checkpoint").get<std::string>();
      std::size_t ei = 0;
      for (const auto& ej : fj.at("epochs")) {
        EpochLog e;
        e.epoch = ej.at("epoch").get<std::size_t>();
        e.loss = ej.at("loss").get<double>();
        if (!ej.at("validation_ap").is_null()) e.validation_ap = ej.at("validation_ap").get<double>();
        if (fi < clock.size() && ei < clock[fi].size()) e.seconds = clock[fi][ei].get<double>();
        f.epochs.push_back(e);
        ++ei;
      }
      f.test_metrics = report_from_json(fj.at("test_metrics"));
      m.folds.push_back(std::move(f));
      ++fi;
    }
    m.aggregate = aggregate(m.fold_reports());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
}

struct FitResult {
  RunManifest manifest;
  std::vector<Classifier> models;  // one per fold, best-validation checkpoint
  std::size_t best_fold = 0;       // fold with the highest validation AP
};

struct FitInputs {
  const Dataset& dataset;
  const Vocabulary& vocab;
  const EmbeddingTable& embeddings;
  RelationSource relation;
};

namespace detail {

struct FoldOutcome {
  FoldRecord record;
  Classifier model;
  double best_validation_ap = -std::numeric_limits<double>::infinity();
};

inline FoldOutcome run_fold(const FitInputs& in, const TrainConfig& tc, const ModelConfig& mc, std::size_t fold_index,
                            std::vector<std::size_t> train_all, std::vector<std::size_t> test, LogLevel log) {
  const std::uint64_t fold_seed = derive_seed(tc.seed, 100 + fold_index);
  auto [train, validation] = holdout_split(train_all, tc.validation_fraction, derive_seed(fold_seed, 2));
  const Dataset train_ds = in.dataset.subset(train);

  FoldOutcome out{{}, make_classifier(mc, in.dataset.label_names, in.vocab, in.embeddings, derive_seed(fold_seed, 1),
                                      tc.init_scale)};
  out.record.index = fold_index;
  out.record.train = train;
  out.record.validation = validation;
  out.record.test = std::move(test);

  Trainer trainer(out.model, tc, in.relation.get());
  std::vector<ModelParams> best_networks = out.model.networks;
  Matrix best_embedding = out.model.embeddings.vectors;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double loss = trainer.train_epoch(train_ds, derive_seed(fold_seed, 3), epoch);
    const auto val = evaluate(predict_all(out.model, in.dataset, validation));
    const auto ap = val[Metric::kAveragePrecision].value;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.record.epochs.push_back({epoch, loss, ap, secs});
    const double score = ap.value_or(-std::numeric_limits<double>::infinity());
    if (epoch == 1 || score > out.best_validation_ap) {
      out.best_validation_ap = score;
      out.record.best_epoch = epoch;
      best_networks = out.model.networks;
      if (tc.train_embeddings) best_embedding = out.model.embeddings.vectors;
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "fold %zu epoch %zu loss %.6f val_ap %s seconds %.3f", fold_index, epoch, loss,
                  ap ? std::to_string(*ap).c_str() : "undefined", secs);
    log_line(LogLevel::kInfo, log, buf);
  }
  out.model.networks = std::move(best_networks);
  if (tc.train_embeddings) out.model.embeddings.vectors = std::move(best_embedding);
  out.record.test_metrics = evaluate(predict_all(out.model, in.dataset, out.record.test));
  return out;
}

}  // namespace detail

/// Trains one model per fold (or one on a single held-out split when
/// tc.folds == 1). Within each fold a validation slice of the training part
/// picks the epoch with the best Average Precision.
inline FitResult fit(const FitInputs& in, const TrainConfig& tc, LogLevel log = LogLevel::kQuiet) {
  tc.validate();
  const Dataset& ds = in.dataset;
  const ModelConfig mc = model_config_for(tc, in.embeddings.dim(), ds.label_count());
  for (const auto& ex : ds.examples) {
    if (ex.labels.size() != ds.label_count()) throw ShapeError("fit: label vector size mismatch");
    for (std::size_t id : ex.sentence.ids)
      if (id >= in.embeddings.vectors.rows()) throw ShapeError("fit: token id outside the embedding table");
  }

  std::vector<Fold> splits;
  if (tc.folds >= 2) {
    splits = kfold_split(ds, tc.folds, derive_seed(tc.seed, 3));
  } else {
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto [train, test] = holdout_split(all, tc.test_fraction, derive_seed(tc.seed, 4));
    splits.push_back({std::move(train), std::move(test)});
  }

  std::vector<std::optional<detail::FoldOutcome>> outcomes(splits.size());
  std::vector<std::string> errors(splits.size());
  auto job = [&](std::size_t f) {
    try {
      outcomes[f] = detail::run_fold(in, tc, mc, f, splits[f].train, splits[f].test, log);
    } catch (const std::exception& e) {
      errors[f] = e.what();
    }
  };
  if (tc.workers <= 1 || splits.size() == 1) {
    for (std::size_t f = 0; f < splits.size(); ++f) job(f);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(tc.workers, splits.size()); ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t f;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= splits.size()) return;
            f = next++;
          }
          job(f);
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (!e.empty()) throw Error(e);

  FitResult result;
  RunManifest& m = result.manifest;
  m.train = tc;
  m.model = mc;
  m.loss = loss_config_for(tc);
  m.relation_kind = in.relation.kind;
  m.relation_path = in.relation.path;
  if (in.relation.matrix) m.relation_matrix = in.relation.matrix->matrix();
  m.parameter_count = count_params(mc);
  m.examples = ds.size();
  m.label_names = ds.label_names;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < outcomes.size(); ++f) {
    auto& o = *outcomes[f];
    if (f == 0 || o.best_validation_ap > best) {
      best = o.best_validation_ap;
      result.best_fold = f;
    }
    m.folds.push_back(std::move(o.record));
    result.models.push_back(std::move(o.model));
  }
  m.aggregate = aggregate(m.fold_reports());
  return result;
}

// ---------------------------------------------------------------------------
// Comparisons
// ---------------------------------------------------------------------------

struct MetricComparison {
  Metric metric;
  double mean_a = 0.0;
  double mean_b = 0.0;
  TTestResult test;
};

/// Paired t-test per metric between two runs over the same folds. Folds are
/// paired by index and must hold identical test indices.
inline std::vector<MetricComparison> compare_runs(const RunManifest& a, const RunManifest& b, double alpha = 0.05) {
  if (a.folds.size() != b.folds.size()) throw ConfigError("compare: runs have different fold counts");
  for (std::size_t f = 0; f < a.folds.size(); ++f) {
    if (a.folds[f].test != b.folds[f].test) {
      throw ConfigError("compare: fold " + std::to_string(f) + " has different test indices; runs are not paired");
    }
  }
  std::vector<MetricComparison> out;
  for (Metric m : kAllMetrics) {
    std::vector<double> va, vb;
    for (std::size_t f = 0; f < a.folds.size(); ++f) {
      const auto& x = a.folds[f].test_metrics[m].value;
      const auto& y = b.folds[f].test_metrics[m].value;
      if (x && y) {
        va.push_back(*x);
        vb.push_back(*y);
      }
    }
    MetricComparison c{m, summarize(va).mean, summarize(vb).mean, {}};
    if (va.size() >= 2) c.test = paired_ttest(va, vb, alpha);
    out.push_back(c);
  }
  return out;
}

/// Paired comparison over pooled folds of several runs (e.g. several seeds),
/// paired position by position.
inline std::vector<MetricComparison> compare_pooled(std::span<const RunManifest> a, std::span<const RunManifest> b,
                                                    double alpha = 0.05) {
  if (a.size() != b.size()) throw ConfigError("compare: unequal numbers of runs");
  RunManifest pa, pb;
  for (std::size_t r = 0; r < a.size(); ++r) {
    if (a[r].folds.size() != b[r].folds.size()) throw ConfigError("compare: runs have different fold counts");
    pa.folds.insert(pa.folds.end(), a[r].folds.begin(), a[r].folds.end());
    pb.folds.insert(pb.folds.end(), b[r].folds.begin(), b[r].folds.end());
  }
  return compare_runs(pa, pb, alpha);
}

inline std::string format_comparisons(const std::string& name_a, const std::string& name_b,
                                      const std::vector<MetricComparison>& cmp) {
  std::string out = name_a + " vs " + name_b + " (paired two-tailed t-test, 5% level)\n";
  for (const auto& c : cmp) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "  %-22s %.4f vs %.4f  t=%+.4f  p=%.6f  %s\n", metric_title(c.metric), c.mean_a,
                  c.mean_b, c.test.t, c.test.p_value, c.test.significant ? "significant" : "not significant");
    out += buf;
  }
  return out;
}

struct AblationResult {
  std::vector<RunMode> modes;
  std::vector<RunManifest> runs;
  std::string table;
  std::string tests;
};

/// Runs JBNN and its three ablations under one seed and reports each
/// reduced model against the full one.
inline AblationResult run_ablation(const FitInputs& in, TrainConfig tc, LogLevel log = LogLevel::kQuiet) {
  AblationResult r;
  r.modes = {RunMode::kJbnn, RunMode::kJbnnNoBi, RunMode::kJbnnNoAtt, RunMode::kJbnnNoEmoRel};
  std::vector<TableRow> rows;
  for (RunMode mode : r.modes) {
    tc.mode = mode;
    r.runs.push_back(fit(in, tc, log).manifest);
    rows.push_back(aggregate_row(run_mode_title(mode), r.runs.back().aggregate));
  }
  r.table = format_table(rows);
  for (std::size_t i = 1; i < r.runs.size(); ++i) {
    if (r.runs[0].folds.size() >= 2) {
      r.tests += format_comparisons(run_mode_title(r.modes[0]), run_mode_title(r.modes[i]), compare_runs(r.runs[0], r.runs[i]));
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Efficiency
// ---------------------------------------------------------------------------

struct BenchReport {
  RunMode mode = RunMode::kJbnn;
  std::size_t parameter_count = 0;
  std::vector<double> epoch_seconds;
  double median_seconds = 0.0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Times `epochs` (at least 3) training epochs on the whole dataset.
inline BenchReport benchmark(const FitInputs& in, TrainConfig tc, std::size_t epochs = 3) {
  tc.validate();
  epochs = std::max<std::size_t>(epochs, 3);
  const ModelConfig mc = model_config_for(tc, in.embeddings.dim(), in.dataset.label_count());
  Classifier model = make_classifier(mc, in.dataset.label_names, in.vocab, in.embeddings, derive_seed(tc.seed, 1), tc.init_scale);
  Trainer trainer(model, tc, in.relation.get());
  BenchReport r;
  r.mode = tc.mode;
  r.parameter_count = count_params(mc);
  for (std::size_t e = 1; e <= epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    trainer.train_epoch(in.dataset, derive_seed(tc.seed, 5), e);
    r.epoch_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  r.median_seconds = median(r.epoch_seconds);
  return r;
}

inline std::string format_bench(std::span<const BenchReport> reports) {
  std::string out = "Algorithm       Params      Time Cost(s/epoch)\n";
  for (const auto& r : reports) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-15s %-11zu %.4f\n", run_mode_title(r.mode), r.parameter_count, r.median_seconds);
    out += buf;
  }
  return out;
}

}  // namespace jbnn
