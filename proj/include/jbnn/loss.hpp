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
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jbnn/errors.hpp"
#include "jbnn/numerics.hpp"
#include "jbnn/types.hpp"

namespace jbnn {

/// Symmetric label-relation weights with a zero diagonal. Every entry is one
/// of -1, -0.5, 0, 0.5.
class RelationMatrix {
 public:
  RelationMatrix() = default;

  static RelationMatrix from_matrix(Matrix w) {
    if (w.rows() != w.cols()) throw ConfigError("relation matrix must be square, got " + w.shape_string());
    const std::size_t m = w.rows();
    for (std::size_t s = 0; s < m; ++s) {
      if (w(s, s) != 0.0) throw ConfigError("relation matrix diagonal must be zero at " + std::to_string(s));
      for (std::size_t t = 0; t < m; ++t) {
        const double v = w(s, t);
        if (v != w(t, s)) {
          throw ConfigError("relation matrix not symmetric at (" + std::to_string(s) + "," +
                            std::to_string(t) + ")");
        }
        if (v != -1.0 && v != -0.5 && v != 0.0 && v != 0.5) {
          throw ConfigError("relation weight " + std::to_string(v) + " at (" + std::to_string(s) + "," +
                            std::to_string(t) + ") is not one of -1, -0.5, 0, 0.5");
        }
      }
    }
    RelationMatrix r;
    r.w_ = std::move(w);
    return r;
  }

  std::size_t size() const { return w_.rows(); }
  double operator()(std::size_t s, std::size_t t) const { return w_(s, t); }
  const Matrix& matrix() const { return w_; }

 private:
  Matrix w_;
};

struct LossConfig {
  double relation_weight = 1e-3;  // lambda_1
  double l2_weight = 1e-4;        // lambda_2

  void validate() const {
    if (!(relation_weight >= 0.0)) throw ConfigError("lambda1 must be >= 0");
    if (!(l2_weight >= 0.0)) throw ConfigError("lambda2 must be >= 0");
  }
};

/// Relation weights from positions on the emotion wheel. Angles are degrees,
/// multiples of 45 in [0, 360), pairwise distinct.
inline RelationMatrix plutchik_weights(std::span<const double> angles) {
  const std::size_t m = angles.size();
  for (std::size_t s = 0; s < m; ++s) {
    const double a = angles[s];
    if (!(a >= 0.0 && a < 360.0) || std::fmod(a, 45.0) != 0.0) {
      throw ConfigError("angle " + std::to_string(a) + " for label " + std::to_string(s) +
                        " is not a multiple of 45 in [0, 360)");
    }
  }
  Matrix w(m, m);
  for (std::size_t s = 0; s < m; ++s) {
    for (std::size_t t = s + 1; t < m; ++t) {
      const double diff = std::abs(angles[s] - angles[t]);
      const double delta = std::min(diff, 360.0 - diff);
      double v = 0.0;
      if (delta == 0.0) {
        throw ConfigError("labels " + std::to_string(s) + " and " + std::to_string(t) + " share angle " +
                          std::to_string(angles[s]));
      } else if (delta == 45.0) {
        v = 0.5;
      } else if (delta == 90.0) {
        v = 0.0;
      } else if (delta == 135.0) {
        v = -0.5;
      } else {
        v = -1.0;
      }
      w(s, t) = v;
      w(t, s) = v;
    }
  }
  return RelationMatrix::from_matrix(std::move(w));
}

/// Default wheel positions. Covers the eight primary emotions and the
/// Ren-CECps label names mapped onto them (love/trust, anxiety/fear,
/// sorrow/sadness, hate/disgust, expect/anticipation). This is configuration;
/// supply an angles file to override.
inline std::optional<double> default_wheel_angle(const std::string& label) {
  static const std::map<std::string, double> kAngles = {
      {"joy", 0.0},        {"trust", 45.0},   {"love", 45.0},         {"fear", 90.0},
      {"anxiety", 90.0},   {"surprise", 135.0}, {"sadness", 180.0},   {"sorrow", 180.0},
      {"disgust", 225.0},  {"hate", 225.0},   {"anger", 270.0},       {"anticipation", 315.0},
      {"expect", 315.0},
  };
  auto it = kAngles.find(label);
  if (it == kAngles.end()) return std::nullopt;
  return it->second;
}

inline std::vector<double> default_angles(const std::vector<std::string>& label_names) {
  std::vector<double> angles;
  for (const auto& name : label_names) {
    auto a = default_wheel_angle(name);
    if (!a) throw ConfigError("no default wheel angle for label '" + name + "'; supply --relation-angles");
    angles.push_back(*a);
  }
  return angles;
}

/// Parses {"label": degrees, ...}; the key set must equal label_names.
inline std::vector<double> parse_angles_json(const nlohmann::json& j, const std::vector<std::string>& label_names) {
  if (!j.is_object()) throw ConfigError("angles file must be a JSON object");
  std::vector<double> angles;
  for (const auto& name : label_names) {
    if (!j.contains(name)) throw ConfigError("angles file missing label '" + name + "'");
    if (!j.at(name).is_number()) throw ConfigError("angle for '" + name + "' is not a number");
    angles.push_back(j.at(name).get<double>());
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(label_names.begin(), label_names.end(), it.key()) == label_names.end()) {
      throw ConfigError("angles file names unknown label '" + it.key() + "'");
    }
  }
  return angles;
}

inline RelationMatrix load_relation_angles(const std::string& path, const std::vector<std::string>& label_names) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open angles file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return plutchik_weights(parse_angles_json(j, label_names));
}

/// m x m comma-separated matrix, one row per line.
inline RelationMatrix parse_relation_csv(std::istream& in, std::size_t m, const std::string& source = "<csv>") {
  Matrix w(m, m);
  std::string line;
  std::size_t r = 0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (r >= m) throw ParseError(source + ":" + std::to_string(line_no) + ": more than " + std::to_string(m) + " rows");
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      if (c >= m) throw ParseError(source + ":" + std::to_string(line_no) + ": more than " + std::to_string(m) + " columns");
      try {
        std::size_t used = 0;
        w(r, c) = std::stod(cell, &used);
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError(source + ":" + std::to_string(line_no) + ": non-numeric value '" + cell + "'");
      }
      ++c;
    }
    if (c != m) throw ParseError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(m) + " columns");
    ++r;
  }
  if (r != m) throw ParseError(source + ": expected " + std::to_string(m) + " rows, got " + std::to_string(r));
  return RelationMatrix::from_matrix(std::move(w));
}

inline RelationMatrix load_relation_csv(const std::string& path, std::size_t m) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open relation matrix " + path);
  return parse_relation_csv(in, m, path);
}

inline constexpr double kLogClamp = 1e-12;

/// Joint binary cross entropy summed over labels.
inline double jbce(std::span<const double> p, std::span<const std::uint8_t> y) {
  if (p.size() != y.size()) throw ShapeError("jbce: prob/label length mismatch");
  double loss = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    loss -= y[j] ? std::log(std::max(p[j], kLogClamp)) : std::log(std::max(1.0 - p[j], kLogClamp));
  }
  return loss;
}

/// Sum over unordered pairs s < t of w(s,t) (p_s - p_t)^2.
inline double relation_penalty(std::span<const double> p, const RelationMatrix& w) {
  if (p.size() != w.size()) throw ShapeError("relation_penalty: prob/relation size mismatch");
  double r = 0.0;
  for (std::size_t s = 0; s < p.size(); ++s) {
    for (std::size_t t = s + 1; t < p.size(); ++t) {
      const double d = p[s] - p[t];
      r += w(s, t) * d * d;
    }
  }
  return r;
}

/// d relation_penalty / d p_j = sum_t 2 w(j,t) (p_j - p_t).
inline void relation_gradient(std::span<const double> p, const RelationMatrix& w, std::span<double> out) {
  for (std::size_t j = 0; j < p.size(); ++j) {
    double g = 0.0;
    for (std::size_t t = 0; t < p.size(); ++t) g += 2.0 * w(j, t) * (p[j] - p[t]);
    out[j] = g;
  }
}

/// Gradient of jbce + lambda1 * relation_penalty with respect to the head
/// logits (p = sigmoid(logit)). `relation` may be null when lambda1 is unused.
inline void logit_gradient(std::span<const double> p, std::span<const std::uint8_t> y, const RelationMatrix* relation,
                           double relation_weight, std::span<double> out) {
  for (std::size_t j = 0; j < p.size(); ++j) out[j] = p[j] - static_cast<double>(y[j]);
  if (relation != nullptr && relation_weight != 0.0) {
    std::vector<double> dp(p.size());
    relation_gradient(p, *relation, dp);
    for (std::size_t j = 0; j < p.size(); ++j) out[j] += relation_weight * dp[j] * p[j] * (1.0 - p[j]);
  }
}

/// Per-instance objective: jbce + lambda1 * relation term.
inline double instance_loss(std::span<const double> p, std::span<const std::uint8_t> y, const RelationMatrix* relation,
                            double relation_weight) {
  double loss = jbce(p, y);
  if (relation != nullptr && relation_weight != 0.0) loss += relation_weight * relation_penalty(p, *relation);
  return loss;
}

/// Batch objective: mean instance loss plus lambda2 times the squared norm of
/// the weight (non-bias) parameters, supplied by the caller.
inline double total_loss(std::span<const ProbVector> probs, std::span<const LabelVector> labels,
                         const RelationMatrix* relation, const LossConfig& cfg, double weight_square_sum) {
  if (probs.size() != labels.size()) throw ShapeError("total_loss: traces and labels are not aligned");
  if (probs.empty()) throw ShapeError("total_loss: empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    sum += instance_loss(probs[i], labels[i], relation, cfg.relation_weight);
  }
  return sum / static_cast<double>(probs.size()) + cfg.l2_weight * weight_square_sum;
}

}  // namespace jbnn
