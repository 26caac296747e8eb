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
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jbnn/errors.hpp"
#include "jbnn/types.hpp"

namespace jbnn {

/// Ground truth, scores and thresholded prediction for one instance.
struct EvalInstance {
  LabelVector y;
  ProbVector p;
  LabelVector y_hat;
};

/// Labels ordered by descending score; equal scores keep the lower label
/// index first. Returns 1-based ranks indexed by label.
inline std::vector<std::size_t> label_ranks(std::span<const double> p) {
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  std::vector<std::size_t> rank(p.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
  return rank;
}

struct MetricValue {
  std::optional<double> value;  // empty when no instance was evaluable
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
};

namespace detail {

inline std::size_t relevant_count(const EvalInstance& e) {
  return static_cast<std::size_t>(std::count(e.y.begin(), e.y.end(), std::uint8_t{1}));
}

inline void check_instance(const EvalInstance& e, std::size_t m) {
  if (e.y.size() != m || e.p.size() != m) throw ShapeError("metrics: inconsistent label count across results");
}

template <typename Skip, typename Score>
MetricValue mean_over(std::span<const EvalInstance> results, Skip skip, Score score) {
  MetricValue mv;
  double sum = 0.0;
  const std::size_t m = results.empty() ? 0 : results[0].y.size();
  for (const auto& e : results) {
    check_instance(e, m);
    if (skip(e)) {
      ++mv.skipped;
      continue;
    }
    sum += score(e);
    ++mv.evaluated;
  }
  if (mv.evaluated > 0) mv.value = sum / static_cast<double>(mv.evaluated);
  return mv;
}

}  // namespace detail

inline MetricValue hamming_loss(std::span<const EvalInstance> results) {
  return detail::mean_over(
      results, [](const EvalInstance&) { return false; },
      [](const EvalInstance& e) {
        if (e.y_hat.size() != e.y.size()) throw ShapeError("hamming_loss: prediction length mismatch");
        std::size_t wrong = 0;
        for (std::size_t j = 0; j < e.y.size(); ++j) wrong += e.y[j] != e.y_hat[j];
        return static_cast<double>(wrong) / static_cast<double>(e.y.size());
      });
}

inline MetricValue one_error(std::span<const EvalInstance> results) {
  return detail::mean_over(
      results, [](const EvalInstance& e) { return detail::relevant_count(e) == 0; },
      [](const EvalInstance& e) {
        const auto rank = label_ranks(e.p);
        const auto top = static_cast<std::size_t>(std::find(rank.begin(), rank.end(), 1) - rank.begin());
        return e.y[top] ? 0.0 : 1.0;
      });
}

inline MetricValue coverage(std::span<const EvalInstance> results) {
  return detail::mean_over(
      results, [](const EvalInstance& e) { return detail::relevant_count(e) == 0; },
      [](const EvalInstance& e) {
        const auto rank = label_ranks(e.p);
        std::size_t worst = 0;
        for (std::size_t j = 0; j < e.y.size(); ++j)
          if (e.y[j]) worst = std::max(worst, rank[j]);
        return static_cast<double>(worst) - 1.0;
      });
}

inline MetricValue ranking_loss(std::span<const EvalInstance> results) {
  return detail::mean_over(
      results,
      [](const EvalInstance& e) {
        const auto k = detail::relevant_count(e);
        return k == 0 || k == e.y.size();
      },
      [](const EvalInstance& e) {
        const auto rank = label_ranks(e.p);
        // Walk labels in rank order, counting irrelevant labels seen so far.
        std::vector<std::size_t> by_rank(e.y.size());
        for (std::size_t j = 0; j < e.y.size(); ++j) by_rank[rank[j] - 1] = j;
        std::size_t irrelevant_above = 0, inverted = 0, relevant = 0;
        for (std::size_t j : by_rank) {
          if (e.y[j]) {
            inverted += irrelevant_above;
            ++relevant;
          } else {
            ++irrelevant_above;
          }
        }
        const std::size_t irrelevant = e.y.size() - relevant;
        return static_cast<double>(inverted) / static_cast<double>(relevant * irrelevant);
      });
}

inline MetricValue average_precision(std::span<const EvalInstance> results) {
  return detail::mean_over(
      results, [](const EvalInstance& e) { return detail::relevant_count(e) == 0; },
      [](const EvalInstance& e) {
        const auto rank = label_ranks(e.p);
        std::vector<std::size_t> by_rank(e.y.size());
        for (std::size_t j = 0; j < e.y.size(); ++j) by_rank[rank[j] - 1] = j;
        double sum = 0.0;
        std::size_t hits = 0;
        for (std::size_t r = 0; r < by_rank.size(); ++r) {
          if (!e.y[by_rank[r]]) continue;
          ++hits;
          sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
        return sum / static_cast<double>(hits);
      });
}

enum class Metric { kRankingLoss, kHammingLoss, kOneError, kCoverage, kAveragePrecision };

inline constexpr std::array<Metric, 5> kAllMetrics = {Metric::kRankingLoss, Metric::kHammingLoss, Metric::kOneError,
                                                      Metric::kCoverage, Metric::kAveragePrecision};

inline const char* metric_key(Metric m) {
  switch (m) {
    case Metric::kRankingLoss: return "ranking_loss";
    case Metric::kHammingLoss: return "hamming_loss";
    case Metric::kOneError: return "one_error";
    case Metric::kCoverage: return "coverage";
    case Metric::kAveragePrecision: return "average_precision";
  }
  return "";
}

inline const char* metric_title(Metric m) {
  switch (m) {
    case Metric::kRankingLoss: return "Ranking Loss(-)";
    case Metric::kHammingLoss: return "Hamming Loss(-)";
    case Metric::kOneError: return "One-Error(-)";
    case Metric::kCoverage: return "Coverage(-)";
    case Metric::kAveragePrecision: return "Average Precision(+)";
  }
  return "";
}

inline bool larger_is_better(Metric m) { return m == Metric::kAveragePrecision; }

struct MetricsReport {
  std::array<MetricValue, 5> values;
  std::size_t instances = 0;

  const MetricValue& operator[](Metric m) const { return values[static_cast<std::size_t>(m)]; }
  MetricValue& operator[](Metric m) { return values[static_cast<std::size_t>(m)]; }
};

inline MetricsReport evaluate(std::span<const EvalInstance> results) {
  MetricsReport r;
  r.instances = results.size();
  r[Metric::kRankingLoss] = ranking_loss(results);
  r[Metric::kHammingLoss] = hamming_loss(results);
  r[Metric::kOneError] = one_error(results);
  r[Metric::kCoverage] = coverage(results);
  r[Metric::kAveragePrecision] = average_precision(results);
  return r;
}

/// Per-fold values with their mean and sample standard deviation.
struct MetricSummary {
  std::vector<double> folds;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stddev = 0.0;
  bool stddev_defined = false;  // false with a single fold; stddev then reads 0
};

struct AggregateReport {
  std::array<MetricSummary, 5> metrics;
  std::size_t folds = 0;

  const MetricSummary& operator[](Metric m) const { return metrics[static_cast<std::size_t>(m)]; }
  MetricSummary& operator[](Metric m) { return metrics[static_cast<std::size_t>(m)]; }
};

inline MetricSummary summarize(std::vector<double> values) {
  MetricSummary s;
  s.folds = std::move(values);
  if (s.folds.empty()) return s;
  const double n = static_cast<double>(s.folds.size());
  // Shifted by the first value so identical folds give exactly zero spread.
  const double shift = s.folds.front();
  double offset = 0.0;
  for (double v : s.folds) offset += v - shift;
  s.mean = shift + offset / n;
  if (s.folds.size() >= 2) {
    double ss = 0.0;
    for (double v : s.folds) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / (n - 1.0));
    s.stddev_defined = true;
  }
  return s;
}

/// Folds where a metric is undefined are left out of that metric's summary.
inline AggregateReport aggregate(std::span<const MetricsReport> folds) {
  AggregateReport out;
  out.folds = folds.size();
  for (Metric m : kAllMetrics) {
    std::vector<double> vals;
    for (const auto& f : folds)
      if (f[m].value) vals.push_back(*f[m].value);
    out[m] = summarize(std::move(vals));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Paired t-test
// ---------------------------------------------------------------------------

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw EvaluationError("incomplete beta: continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Two-tailed p-value of Student's t with `dof` degrees of freedom.
inline double student_t_two_tailed(double t, double dof) {
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

struct TTestResult {
  double t = 0.0;         // +/-inf when the differences have zero variance and nonzero mean
  double p_value = 1.0;
  std::size_t dof = 0;
  bool significant = false;
};

/// Paired two-tailed t-test on per-fold values a and b at level alpha.
inline TTestResult paired_ttest(std::span<const double> a, std::span<const double> b, double alpha = 0.05) {
  if (a.size() != b.size()) throw ShapeError("paired_ttest: samples have different lengths");
  if (a.size() < 2) throw ShapeError("paired_ttest: need at least two pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  TTestResult r;
  r.dof = n - 1;
  if (sd == 0.0) {
    if (mean == 0.0) return r;
    r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p_value = 0.0;
    r.significant = true;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p_value = student_t_two_tailed(r.t, static_cast<double>(r.dof));
  r.significant = r.p_value < alpha;
  return r;
}

// ---------------------------------------------------------------------------
// Files and tables
// ---------------------------------------------------------------------------

inline nlohmann::json instance_to_json(const EvalInstance& e) {
  return {{"y", e.y}, {"p", e.p}, {"y_hat", e.y_hat}};
}

inline std::vector<EvalInstance> parse_results(std::istream& in, const std::string& source = "<results>") {
  std::vector<EvalInstance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      EvalInstance e{j.at("y").get<LabelVector>(), j.at("p").get<ProbVector>(), {}};
      if (j.contains("y_hat")) e.y_hat = j.at("y_hat").get<LabelVector>();
      for (auto v : e.y)
        if (v > 1) throw ParseError("non-binary label");
      out.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["instances"] = r.instances;
  for (Metric m : kAllMetrics) {
    const auto& v = r[m];
    j[metric_key(m)] = {{"value", v.value ? nlohmann::json(*v.value) : nlohmann::json()},
                        {"evaluated", v.evaluated},
                        {"skipped", v.skipped}};
  }
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.instances = j.at("instances").get<std::size_t>();
  for (Metric m : kAllMetrics) {
    const auto& e = j.at(metric_key(m));
    if (!e.at("value").is_null()) r[m].value = e.at("value").get<double>();
    r[m].evaluated = e.at("evaluated").get<std::size_t>();
    r[m].skipped = e.at("skipped").get<std::size_t>();
  }
  return r;
}

inline nlohmann::json aggregate_to_json(const AggregateReport& r) {
  nlohmann::json j;
  j["folds"] = r.folds;
  for (Metric m : kAllMetrics) {
    const auto& s = r[m];
    j[metric_key(m)] = {{"per_fold", s.folds},
                        {"mean", std::isnan(s.mean) ? nlohmann::json() : nlohmann::json(s.mean)},
                        {"std", s.stddev},
                        {"std_defined", s.stddev_defined}};
  }
  return j;
}

inline std::string format_mean_std(const MetricSummary& s) {
  if (std::isnan(s.mean)) return "undefined";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f±%.4f", s.mean, s.stddev);
  return buf;
}

inline std::string format_value(const MetricValue& v) {
  if (!v.value) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v.value);
  return buf;
}

namespace detail {

// Display width, counting each UTF-8 code point as one column.
inline std::size_t display_width(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char ch : s)
    if ((ch & 0xC0) != 0x80) ++w;
  return w;
}

inline std::string pad(const std::string& s, std::size_t width) {
  const std::size_t w = display_width(s);
  return s + std::string(width > w ? width - w : 0, ' ');
}

}  // namespace detail

/// Aligned text table, one row per named result, "mean±std" cells. A row
/// marker ("*") may be appended per cell to flag significance.
struct TableRow {
  std::string name;
  std::array<std::string, 5> cells;
};

inline std::string format_table(const std::vector<TableRow>& rows) {
  std::array<std::string, 6> header = {"Algorithm"};
  for (std::size_t i = 0; i < 5; ++i) header[i + 1] = metric_title(kAllMetrics[i]);
  std::array<std::size_t, 6> width{};
  for (std::size_t c = 0; c < 6; ++c) width[c] = detail::display_width(header[c]);
  for (const auto& r : rows) {
    width[0] = std::max(width[0], detail::display_width(r.name));
    for (std::size_t c = 0; c < 5; ++c) width[c + 1] = std::max(width[c + 1], detail::display_width(r.cells[c]));
  }
  std::ostringstream out;
  auto line = [&](const std::array<std::string, 6>& cols) {
    for (std::size_t c = 0; c < 6; ++c) out << (c ? " | " : "") << detail::pad(cols[c], width[c]);
    out << '\n';
  };
  line(header);
  std::array<std::string, 6> rule;
  for (std::size_t c = 0; c < 6; ++c) rule[c] = std::string(width[c], '-');
  line(rule);
  for (const auto& r : rows) {
    std::array<std::string, 6> cols = {r.name};
    for (std::size_t c = 0; c < 5; ++c) cols[c + 1] = r.cells[c];
    line(cols);
  }
  return out.str();
}

inline TableRow aggregate_row(const std::string& name, const AggregateReport& r) {
  TableRow row{name, {}};
  for (std::size_t i = 0; i < 5; ++i) row.cells[i] = format_mean_std(r[kAllMetrics[i]]);
  return row;
}

}  // namespace jbnn
