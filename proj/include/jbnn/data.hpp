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
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "jbnn/errors.hpp"
#include "jbnn/loss.hpp"
#include "jbnn/numerics.hpp"
#include "jbnn/types.hpp"

namespace jbnn {

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kDefaultMaxLen = 90;

/// kFileOnly: ids are padding plus the tokens of the embedding file; unknown
/// corpus tokens are an error. kReserveOov: one extra id after the file
/// tokens with a zero vector, shared by every unknown token.
enum class VocabPolicy { kFileOnly, kReserveOov };

class Vocabulary {
 public:
  Vocabulary() : tokens_{"<pad>"} {}

  /// Appends a token and returns its id. Duplicates are rejected.
  std::size_t add(const std::string& token) {
    if (oov_) throw ConfigError("vocabulary: cannot add '" + token + "' after the OOV id is reserved");
    auto [it, inserted] = ids_.emplace(token, tokens_.size());
    if (!inserted) throw ParseError("duplicate token '" + token + "'");
    tokens_.push_back(token);
    return it->second;
  }

  void reserve_oov() {
    if (oov_) return;
    oov_ = tokens_.size();
    tokens_.push_back("<unk>");
  }

  std::optional<std::size_t> find(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  /// Unknown tokens map to the OOV id; without one they are an error.
  std::size_t lookup(const std::string& token) const {
    if (auto id = find(token)) return *id;
    if (oov_) return *oov_;
    throw ParseError("token '" + token + "' is not in the vocabulary");
  }

  bool has_oov() const { return oov_.has_value(); }
  std::size_t oov_id() const { return oov_.value(); }

  /// Number of real tokens, excluding padding and OOV.
  std::size_t size() const { return ids_.size(); }
  /// Number of ids, i.e. embedding table rows.
  std::size_t id_count() const { return tokens_.size(); }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_ && oov_ == o.oov_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
  std::optional<std::size_t> oov_;
};

/// Row i is the vector of token id i. Row 0 (padding) and the OOV row are zero.
struct EmbeddingTable {
  Matrix vectors;
  bool trainable = false;

  std::size_t dim() const { return vectors.cols(); }
};

struct LoadedEmbeddings {
  Vocabulary vocab;
  EmbeddingTable table;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": non-numeric value '" + s + "'");
  }
}

inline std::size_t parse_count(const std::string& s, const std::string& where) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError(where + ": malformed header value '" + s + "'");
  return v;
}

}  // namespace detail

/// word2vec text format: "count dim" header, then "token v1 ... v_dim".
inline LoadedEmbeddings parse_embeddings(std::istream& in, VocabPolicy policy, const std::string& source = "<embeddings>") {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source + ":1: missing header");
  auto header = detail::split_ws(line);
  if (header.size() != 2) throw ParseError(source + ":1: malformed header, expected 'count dim'");
  const std::size_t count = detail::parse_count(header[0], source + ":1");
  const std::size_t dim = detail::parse_count(header[1], source + ":1");
  if (dim == 0) throw ParseError(source + ":1: dimension must be positive");

  LoadedEmbeddings out;
  std::vector<double> rows(dim, 0.0);  // padding row
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    auto fields = detail::split_ws(line);
    if (fields.empty()) continue;
    if (fields.size() != dim + 1) {
      throw ParseError(where + ": expected " + std::to_string(dim) + " values, got " + std::to_string(fields.size() - 1));
    }
    if (out.vocab.find(fields[0])) throw ParseError(where + ": duplicate token '" + fields[0] + "'");
    out.vocab.add(fields[0]);
    for (std::size_t k = 1; k <= dim; ++k) rows.push_back(detail::parse_double(fields[k], where));
  }
  if (out.vocab.size() != count) {
    throw ParseError(source + ": header declares " + std::to_string(count) + " tokens, file has " +
                     std::to_string(out.vocab.size()));
  }
  if (policy == VocabPolicy::kReserveOov) {
    out.vocab.reserve_oov();
    rows.resize(rows.size() + dim, 0.0);
  }
  out.table.vectors = Matrix(out.vocab.id_count(), dim);
  std::copy(rows.begin(), rows.end(), out.table.vectors.values().begin());
  return out;
}

inline LoadedEmbeddings load_embeddings(const std::string& path, VocabPolicy policy = VocabPolicy::kReserveOov) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open embeddings file " + path);
  return parse_embeddings(in, policy, path);
}

/// Writes the real-token rows in word2vec text format with 17 significant
/// digits, which round-trips every finite double.
inline void write_embeddings(std::ostream& out, const Vocabulary& vocab, const EmbeddingTable& table) {
  out << vocab.size() << ' ' << table.dim() << '\n';
  out << std::setprecision(17);
  for (std::size_t id = 1; id < vocab.id_count(); ++id) {
    if (vocab.has_oov() && id == vocab.oov_id()) continue;
    out << vocab.token(id);
    for (double v : table.vectors.row(id)) out << ' ' << v;
    out << '\n';
  }
}

inline void save_embeddings(const std::string& path, const Vocabulary& vocab, const EmbeddingTable& table) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_embeddings(out, vocab, table);
}

struct Sentence {
  std::vector<std::size_t> ids;  // unpadded, 1 <= size() <= max_len
  std::size_t length() const { return ids.size(); }
};

struct Example {
  Sentence sentence;
  LabelVector labels;
};

struct Dataset {
  std::vector<Example> examples;
  std::vector<std::string> label_names;

  std::size_t size() const { return examples.size(); }
  std::size_t label_count() const { return label_names.size(); }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset d;
    d.label_names = label_names;
    d.examples.reserve(indices.size());
    for (std::size_t i : indices) d.examples.push_back(examples.at(i));
    return d;
  }
};

/// Sidecar header path: "corpus.jsonl" -> "corpus.header.json".
inline std::string header_path_for(const std::string& corpus_path) {
  const std::string ext = ".jsonl";
  if (corpus_path.size() > ext.size() && corpus_path.compare(corpus_path.size() - ext.size(), ext.size(), ext) == 0) {
    return corpus_path.substr(0, corpus_path.size() - ext.size()) + ".header.json";
  }
  return corpus_path + ".header.json";
}

inline std::vector<std::string> load_label_names(const std::string& header_path) {
  std::ifstream in(header_path);
  if (!in) throw ParseError("cannot open corpus header " + header_path);
  nlohmann::json j;
  try {
    in >> j;
    auto names = j.at("label_names").get<std::vector<std::string>>();
    if (names.empty()) throw ParseError(header_path + ": label_names is empty");
    return names;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(header_path + ": " + e.what());
  }
}

/// One JSON object per line: {"tokens": [...], "labels": [0/1 x m]}.
/// Sentences longer than max_len are truncated.
inline Dataset parse_dataset(std::istream& in, const std::vector<std::string>& label_names, const Vocabulary& vocab,
                             std::size_t max_len = kDefaultMaxLen, const std::string& source = "<corpus>") {
  Dataset ds;
  ds.label_names = label_names;
  const std::size_t m = label_names.size();
  std::string line;
  std::size_t line_no = 0;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ": record " + std::to_string(record) + " (line " + std::to_string(line_no) + ")";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("tokens") || !j.contains("labels")) {
      throw ParseError(where + ": expected an object with 'tokens' and 'labels'");
    }
    const auto& tokens = j.at("tokens");
    const auto& labels = j.at("labels");
    if (!tokens.is_array() || tokens.empty()) throw ParseError(where + ": empty token list");
    if (!labels.is_array() || labels.size() != m) {
      throw ParseError(where + ": expected " + std::to_string(m) + " labels, got " +
                       std::to_string(labels.is_array() ? labels.size() : 0));
    }
    Example ex;
    for (const auto& t : tokens) {
      if (!t.is_string()) throw ParseError(where + ": token is not a string");
      if (ex.sentence.ids.size() == max_len) break;
      try {
        ex.sentence.ids.push_back(vocab.lookup(t.get<std::string>()));
      } catch (const ParseError& e) {
        throw ParseError(where + ": " + e.what());
      }
    }
    for (const auto& l : labels) {
      if (!l.is_number_integer() || (l.get<int>() != 0 && l.get<int>() != 1)) {
        throw ParseError(where + ": non-binary label " + l.dump());
      }
      ex.labels.push_back(static_cast<std::uint8_t>(l.get<int>()));
    }
    ds.examples.push_back(std::move(ex));
    ++record;
  }
  if (ds.examples.empty()) throw ParseError(source + ": no records");
  return ds;
}

inline Dataset load_dataset(const std::string& path, const Vocabulary& vocab, std::size_t max_len = kDefaultMaxLen,
                            std::optional<std::string> header_path = std::nullopt) {
  auto names = load_label_names(header_path.value_or(header_path_for(path)));
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open corpus " + path);
  return parse_dataset(in, names, vocab, max_len, path);
}

inline void write_dataset(const std::string& path, const Dataset& ds, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (const auto& ex : ds.examples) {
    nlohmann::json j;
    auto& tokens = j["tokens"] = nlohmann::json::array();
    for (std::size_t id : ex.sentence.ids) tokens.push_back(vocab.token(id));
    j["labels"] = ex.labels;
    out << j.dump() << '\n';
  }
  std::ofstream header(header_path_for(path));
  if (!header) throw Error("cannot write " + header_path_for(path));
  header << nlohmann::json{{"label_names", ds.label_names}}.dump(2) << '\n';
}

/// A padded mini-batch. `ids` and `mask` are row-major (size x width); the
/// width is the longest sentence in the batch.
struct Batch {
  std::vector<std::size_t> indices;
  std::size_t width = 0;
  std::vector<std::size_t> ids;
  std::vector<std::uint8_t> mask;

  std::size_t size() const { return indices.size(); }
  std::span<const std::size_t> tokens(std::size_t b) const { return {ids.data() + b * width, width}; }
  std::span<const std::uint8_t> valid(std::size_t b) const { return {mask.data() + b * width, width}; }
};

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  return idx;
}

inline std::vector<Batch> make_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  const auto order = shuffled_indices(ds.size(), seed);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    const std::size_t end = std::min(order.size(), start + batch_size);
    b.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
    for (std::size_t i : b.indices) b.width = std::max(b.width, ds.examples[i].sentence.length());
    b.ids.assign(b.size() * b.width, kPadId);
    b.mask.assign(b.size() * b.width, 0);
    for (std::size_t r = 0; r < b.size(); ++r) {
      const auto& ids = ds.examples[b.indices[r]].sentence.ids;
      for (std::size_t t = 0; t < ids.size(); ++t) {
        b.ids[r * b.width + t] = ids[t];
        b.mask[r * b.width + t] = 1;
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Shuffles 0..n-1 under seed and deals it into k contiguous test folds whose
/// sizes differ by at most one. Index lists are returned sorted.
inline std::vector<Fold> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("kfold_split: k must be >= 2");
  if (n < k) throw ConfigError("kfold_split: " + std::to_string(n) + " examples cannot fill " + std::to_string(k) + " folds");
  const auto order = shuffled_indices(n, seed);
  std::vector<std::size_t> fold_of(n);
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t begin = f * n / k;
    const std::size_t end = (f + 1) * n / k;
    for (std::size_t p = begin; p < end; ++p) fold_of[order[p]] = f;
  }
  std::vector<Fold> folds(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < k; ++f) (fold_of[i] == f ? folds[f].test : folds[f].train).push_back(i);
  }
  return folds;
}

inline std::vector<Fold> kfold_split(const Dataset& ds, std::size_t k, std::uint64_t seed) {
  return kfold_split(ds.size(), k, seed);
}

/// Splits `indices` into (kept, held) with round(fraction * size) held out,
/// at least one on each side when size >= 2.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(std::span<const std::size_t> indices,
                                                                                   double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must be in (0, 1)");
  if (indices.size() < 2) throw ConfigError("holdout_split needs at least two examples");
  auto held_n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(indices.size())));
  held_n = std::clamp<std::size_t>(held_n, 1, indices.size() - 1);
  const auto order = shuffled_indices(indices.size(), seed);
  std::vector<std::size_t> kept, held;
  for (std::size_t p = 0; p < order.size(); ++p) (p < held_n ? held : kept).push_back(indices[order[p]]);
  std::sort(kept.begin(), kept.end());
  std::sort(held.begin(), held.end());
  return {std::move(kept), std::move(held)};
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

/// Generative recipe for a labelled corpus with planted signal tokens.
///
/// Each sentence first draws a primary label j with probability
/// primary_rates[j]; every other label t switches on independently with
/// probability cooccurrence(j, t). Label sets with every label on are
/// resampled. Each active label contributes at least one of its own signal
/// tokens; the remaining positions are noise tokens, except that each one is
/// replaced by a signal token of a random active label with probability
/// signal_rate.
struct SynthSpec {
  std::vector<std::string> label_names = {"anger", "anxiety", "expect", "hate", "joy", "love", "sorrow", "surprise"};
  std::size_t examples = 2000;
  std::size_t vocab_size = 1000;
  std::size_t min_len = 8;
  std::size_t max_len = 20;
  std::size_t signal_tokens_per_label = 5;
  std::size_t embedding_dim = 50;
  double signal_rate = 0.2;
  std::vector<double> primary_rates;  // empty = uniform
  Matrix cooccurrence;                // empty = from the wheel relations

  std::size_t label_count() const { return label_names.size(); }
};

/// Conditional co-occurrence from relation weights: max(0, 0.12 + 0.24 w).
/// Adjacent emotions (w = 0.5) co-occur at 0.24, orthogonal ones at 0.12,
/// opposed ones never.
inline Matrix cooccurrence_from_relations(const RelationMatrix& w) {
  const std::size_t m = w.size();
  Matrix q(m, m);
  for (std::size_t s = 0; s < m; ++s)
    for (std::size_t t = 0; t < m; ++t) q(s, t) = s == t ? 0.0 : std::max(0.0, 0.12 + 0.24 * w(s, t));
  return q;
}

/// Fills defaults and validates. Throws ConfigError on inconsistency.
inline SynthSpec resolve_synth_spec(SynthSpec spec) {
  const std::size_t m = spec.label_count();
  if (m < 2) throw ConfigError("synthetic spec needs at least two labels");
  if (spec.examples == 0) throw ConfigError("synthetic spec: examples must be >= 1");
  if (spec.embedding_dim == 0) throw ConfigError("synthetic spec: embedding_dim must be >= 1");
  if (spec.signal_tokens_per_label == 0) throw ConfigError("synthetic spec: signal_tokens_per_label must be >= 1");
  if (spec.signal_tokens_per_label * m >= spec.vocab_size) {
    throw ConfigError("synthetic spec: " + std::to_string(spec.signal_tokens_per_label * m) +
                      " signal tokens leave no room for noise in a vocabulary of " + std::to_string(spec.vocab_size));
  }
  if (spec.min_len == 0 || spec.min_len > spec.max_len) throw ConfigError("synthetic spec: need 1 <= min_len <= max_len");
  if (!(spec.signal_rate >= 0.0 && spec.signal_rate <= 1.0)) throw ConfigError("synthetic spec: signal_rate must be in [0, 1]");
  if (spec.primary_rates.empty()) spec.primary_rates.assign(m, 1.0 / static_cast<double>(m));
  if (spec.primary_rates.size() != m) throw ConfigError("synthetic spec: primary_rates must have one entry per label");
  double total = 0.0;
  for (double r : spec.primary_rates) {
    if (!(r >= 0.0)) throw ConfigError("synthetic spec: primary_rates must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("synthetic spec: primary_rates must sum to 1");
  if (spec.cooccurrence.empty()) {
    spec.cooccurrence = cooccurrence_from_relations(plutchik_weights(default_angles(spec.label_names)));
  }
  if (spec.cooccurrence.rows() != m || spec.cooccurrence.cols() != m) {
    throw ConfigError("synthetic spec: cooccurrence must be " + std::to_string(m) + "x" + std::to_string(m));
  }
  for (double q : spec.cooccurrence.values()) {
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("synthetic spec: cooccurrence entries must be probabilities");
  }
  // A full label set must not be certain for every primary label, or resampling never ends.
  double p_full = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double prod = spec.primary_rates[j];
    for (std::size_t t = 0; t < m; ++t) if (t != j) prod *= spec.cooccurrence(j, t);
    p_full += prod;
  }
  if (p_full > 1.0 - 1e-9) throw ConfigError("synthetic spec: every sampled label set would be full");
  return spec;
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec spec;
  static const std::vector<std::string> kKeys = {"label_names", "examples", "vocab_size", "min_len", "max_len",
                                                 "signal_tokens_per_label", "embedding_dim", "signal_rate",
                                                 "primary_rates", "cooccurrence", "relation_angles"};
  if (!j.is_object()) throw ConfigError("synthetic spec must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(kKeys.begin(), kKeys.end(), it.key()) == kKeys.end()) {
      throw ConfigError("synthetic spec: unknown key '" + it.key() + "'");
    }
  }
  try {
    if (j.contains("label_names")) spec.label_names = j["label_names"].get<std::vector<std::string>>();
    if (j.contains("examples")) spec.examples = j["examples"].get<std::size_t>();
    if (j.contains("vocab_size")) spec.vocab_size = j["vocab_size"].get<std::size_t>();
    if (j.contains("min_len")) spec.min_len = j["min_len"].get<std::size_t>();
    if (j.contains("max_len")) spec.max_len = j["max_len"].get<std::size_t>();
    if (j.contains("signal_tokens_per_label")) spec.signal_tokens_per_label = j["signal_tokens_per_label"].get<std::size_t>();
    if (j.contains("embedding_dim")) spec.embedding_dim = j["embedding_dim"].get<std::size_t>();
    if (j.contains("signal_rate")) spec.signal_rate = j["signal_rate"].get<double>();
    if (j.contains("primary_rates")) spec.primary_rates = j["primary_rates"].get<std::vector<double>>();
    if (j.contains("cooccurrence")) {
      auto rows = j["cooccurrence"].get<std::vector<std::vector<double>>>();
      spec.cooccurrence = Matrix(rows.size(), rows.empty() ? 0 : rows[0].size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != spec.cooccurrence.cols()) throw ConfigError("synthetic spec: ragged cooccurrence matrix");
        for (std::size_t c = 0; c < rows[r].size(); ++c) spec.cooccurrence(r, c) = rows[r][c];
      }
    } else if (j.contains("relation_angles")) {
      spec.cooccurrence = cooccurrence_from_relations(plutchik_weights(parse_angles_json(j["relation_angles"], spec.label_names)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  return spec;
}

struct SyntheticCorpus {
  Dataset dataset;
  Vocabulary vocab;
  EmbeddingTable embeddings;
};

inline std::string signal_token(const std::string& label, std::size_t k) { return label + "_" + std::to_string(k); }

inline SyntheticCorpus generate_synthetic(const SynthSpec& raw_spec, std::uint64_t seed) {
  const SynthSpec spec = resolve_synth_spec(raw_spec);
  const std::size_t m = spec.label_count();
  const std::size_t k = spec.signal_tokens_per_label;
  SyntheticCorpus out;
  out.dataset.label_names = spec.label_names;

  // ids 1..m*k are signal tokens (label-major), the rest noise.
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t s = 0; s < k; ++s) out.vocab.add(signal_token(spec.label_names[j], s));
  const std::size_t noise_count = spec.vocab_size - m * k;
  for (std::size_t s = 0; s < noise_count; ++s) out.vocab.add("w" + std::to_string(s));
  out.vocab.reserve_oov();
  const std::size_t first_noise = 1 + m * k;

  Rng emb_rng(derive_seed(seed, 1));
  out.embeddings.vectors = Matrix(out.vocab.id_count(), spec.embedding_dim);
  for (std::size_t id = 1; id <= spec.vocab_size; ++id) {
    auto row = out.embeddings.vectors.row(id);
    double norm = 0.0;
    for (double& v : row) {
      v = emb_rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : row) v /= norm;
  }

  Rng rng(derive_seed(seed, 2));
  for (std::size_t n = 0; n < spec.examples; ++n) {
    LabelVector y(m, 0);
    std::size_t active = 0;
    do {
      double u = rng.uniform();
      std::size_t primary = m - 1;
      for (std::size_t j = 0; j < m; ++j) {
        if (u < spec.primary_rates[j]) {
          primary = j;
          break;
        }
        u -= spec.primary_rates[j];
      }
      active = 0;
      for (std::size_t t = 0; t < m; ++t) {
        y[t] = t == primary || rng.uniform() < spec.cooccurrence(primary, t) ? 1 : 0;
        active += y[t];
      }
    } while (active == m);

    std::vector<std::size_t> on;
    for (std::size_t t = 0; t < m; ++t) if (y[t]) on.push_back(t);
    std::size_t len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
    len = std::max(len, on.size());
    Sentence s;
    s.ids.resize(len);
    for (auto& id : s.ids) {
      if (rng.uniform() < spec.signal_rate) {
        id = 1 + on[rng.below(on.size())] * k + rng.below(k);
      } else {
        id = first_noise + rng.below(noise_count);
      }
    }
    // One guaranteed signal token per active label, at distinct positions.
    auto positions = shuffled_indices(len, derive_seed(seed, 1000 + n));
    for (std::size_t a = 0; a < on.size(); ++a) s.ids[positions[a]] = 1 + on[a] * k + rng.below(k);
    out.dataset.examples.push_back({std::move(s), std::move(y)});
  }
  return out;
}

}  // namespace jbnn
