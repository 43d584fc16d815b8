// Copyright 2026  Sourcetrace Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "sourcetrace/error.hpp"

namespace sourcetrace {

// Dense row-major matrix.  Everything in this library is desk scale, so
// the operations below are plain loops; all arithmetic is double precision.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) {
    return std::span<double>(data.data() + r * cols, cols);
  }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data.data() + r * cols, cols);
  }

  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ContractViolation("dot: length mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return s;
}

inline double norm(std::span<const double> a) {
  return std::sqrt(squared_norm(a));
}

inline bool all_finite(std::span<const double> a) {
  for (double v : a) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x,
                 std::span<double> y) {
  if (x.size() != y.size()) throw ContractViolation("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// W * x
inline std::vector<double> matvec(const Matrix& w,
                                  std::span<const double> x) {
  if (x.size() != w.cols) throw ContractViolation("matvec: length mismatch");
  std::vector<double> out(w.rows, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r) {
    double s = 0.0;
    const double* wr = w.data.data() + r * w.cols;
    for (std::size_t c = 0; c < w.cols; ++c) s += wr[c] * x[c];
    out[r] = s;
  }
  return out;
}

// W^T * g
inline std::vector<double> matvec_transposed(const Matrix& w,
                                             std::span<const double> g) {
  if (g.size() != w.rows) {
    throw ContractViolation("matvec_transposed: length mismatch");
  }
  std::vector<double> out(w.cols, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* wr = w.data.data() + r * w.cols;
    const double gr = g[r];
    for (std::size_t c = 0; c < w.cols; ++c) out[c] += wr[c] * gr;
  }
  return out;
}

// acc += g * x^T   (outer product accumulation for weight gradients)
inline void add_outer(Matrix& acc, std::span<const double> g,
                      std::span<const double> x) {
  if (g.size() != acc.rows || x.size() != acc.cols) {
    throw ContractViolation("add_outer: shape mismatch");
  }
  for (std::size_t r = 0; r < g.size(); ++r) {
    double* ar = acc.data.data() + r * acc.cols;
    const double gr = g[r];
    for (std::size_t c = 0; c < x.size(); ++c) ar[c] += gr * x[c];
  }
}

// x / ||x||; a zero vector has no direction and is rejected.
inline std::vector<double> normalized(std::span<const double> x) {
  const double n = norm(x);
  if (n == 0.0) throw DegenerateInput("normalized: zero-norm vector");
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) v /= n;
  return out;
}

}  // namespace sourcetrace
