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
#include <concepts>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "jbnn/errors.hpp"

namespace jbnn {

/// Dense row-major matrix of doubles. Vectors are stored as n x 1 matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m;
    m.rows_ = rows.size();
    m.cols_ = rows.size() == 0 ? 0 : rows.begin()->size();
    m.data_.reserve(m.rows_ * m.cols_);
    for (const auto& r : rows) {
      if (r.size() != m.cols_) throw ShapeError("from_rows: ragged initializer");
      m.data_.insert(m.data_.end(), r.begin(), r.end());
    }
    return m;
  }

  static Matrix column(std::span<const double> v) {
    Matrix m(v.size(), 1);
    std::copy(v.begin(), v.end(), m.data_.begin());
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + a.shape_string() + " * " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

inline double dot(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

// y += A x
inline void gemv_acc(const Matrix& a, std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < a.rows(); ++r) y[r] += dot(a.row(r), x);
}

// y += A^T x
inline void gemv_t_acc(const Matrix& a, std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    auto arow = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) y[c] += xr * arow[c];
  }
}

// A += u v^T
inline void outer_acc(Matrix& a, std::span<const double> u, std::span<const double> v) {
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double ur = u[r];
    if (ur == 0.0) continue;
    auto arow = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) arow[c] += ur * v[c];
  }
}

/// Logistic function. Branches on the sign of z so exp never overflows.
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double tanh_act(double z) { return std::tanh(z); }

inline void sigmoid_inplace(std::span<double> z) {
  for (double& v : z) v = sigmoid(v);
}

inline void tanh_inplace(std::span<double> z) {
  for (double& v : z) v = std::tanh(v);
}

/// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seeded generator. The engine is std::mt19937_64, whose output sequence is
/// fixed by the standard; the distributions are written out here because the
/// std:: ones are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), rejection sampled.
  std::size_t below(std::size_t n) {
    if (n == 0) throw ConfigError("Rng::below(0)");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_name;
  std::size_t worst_index = 0;
  double epsilon = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// A named block of parameters together with its analytic gradient.
struct ParamView {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

/// Compares analytic gradients to central differences of `f`. `f` reads the
/// parameters through whatever storage the views alias; each entry is nudged
/// by +/- epsilon in place and restored afterwards. The difference is taken
/// in f's return type, so an objective evaluated in long double keeps its
/// extra precision.
template <std::invocable F>
  requires std::floating_point<std::invoke_result_t<F>>
GradCheckReport grad_check(F&& f, std::span<const ParamView> views, double epsilon) {
  using Value = std::invoke_result_t<F>;
  if (!(epsilon > 0.0)) throw ConfigError("grad_check: epsilon must be > 0");
  GradCheckReport report;
  report.epsilon = epsilon;
  for (const ParamView& view : views) {
    if (view.values.size() != view.analytic.size()) {
      throw ShapeError("grad_check: gradient size mismatch for " + view.name);
    }
    for (std::size_t i = 0; i < view.values.size(); ++i) {
      const double saved = view.values[i];
      view.values[i] = saved + epsilon;
      const Value up = f();
      view.values[i] = saved - epsilon;
      const Value down = f();
      view.values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw EvaluationError("grad_check: non-finite objective at " + view.name + "[" +
                              std::to_string(i) + "]");
      }
      const double numeric = static_cast<double>((up - down) / (Value{2} * static_cast<Value>(epsilon)));
      const double analytic = view.analytic[i];
      const double err =
          std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      ++report.checked;
      if (report.worst_name.empty() || err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_name = view.name;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace jbnn
