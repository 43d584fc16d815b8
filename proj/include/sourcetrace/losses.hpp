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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "sourcetrace/error.hpp"
#include "sourcetrace/linalg.hpp"
#include "sourcetrace/nn.hpp"

namespace sourcetrace::nn {

// ---------------------------------------------------------------------------
// Softmax cross-entropy
// ---------------------------------------------------------------------------

// -log softmax(logits)[label], computed via log-sum-exp so large logits do
// not overflow.
inline double softmax_ce(std::span<const double> logits, std::size_t label) {
  if (logits.empty()) throw ContractViolation("softmax_ce: empty logits");
  if (label >= logits.size()) {
    throw ContractViolation("softmax_ce: label out of range");
  }
  if (!all_finite(logits)) {
    throw ContractViolation("softmax_ce: non-finite logits");
  }
  const double zmax = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - zmax);
  const double lse = zmax + std::log(sum);
  return lse - logits[label];
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double zmax = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - zmax);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

// Loss plus dLoss/dLogits (softmax minus one-hot), accumulated into
// `logit_grad`.
inline double softmax_ce_grad(std::span<const double> logits,
                              std::size_t label,
                              std::span<double> logit_grad) {
  const double loss = softmax_ce(logits, label);
  if (logit_grad.size() != logits.size()) {
    throw ContractViolation("softmax_ce_grad: gradient size mismatch");
  }
  const std::vector<double> p = softmax(logits);
  for (std::size_t i = 0; i < p.size(); ++i) {
    logit_grad[i] += p[i] - (i == label ? 1.0 : 0.0);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Binary cross-entropy on a raw logit
// ---------------------------------------------------------------------------

enum class BinaryLabel { positive, negative };

// softplus(x) = log(1 + e^x) without overflow for large |x|.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

// positive: -log sigmoid(logit) = softplus(-logit)
// negative: -log(1 - sigmoid(logit)) = softplus(logit)
inline double binary_ce(double logit, BinaryLabel label) {
  if (!std::isfinite(logit)) {
    throw ContractViolation("binary_ce: non-finite logit");
  }
  return label == BinaryLabel::positive ? softplus(-logit) : softplus(logit);
}

inline double binary_ce_dlogit(double logit, BinaryLabel label) {
  const double s = sigmoid(logit);
  return label == BinaryLabel::positive ? s - 1.0 : s;
}

// ---------------------------------------------------------------------------
// Contrastive loss over an embedding distance
// ---------------------------------------------------------------------------

enum class PairLabel { same, different };

// same:      d^2
// different: max(0, margin - d)^2
// d is a Euclidean distance between projections, so it must be >= 0.
inline double contrastive_loss(double distance, PairLabel label,
                               double margin) {
  if (!(distance >= 0.0)) {
    throw ContractViolation("contrastive_loss: distance must be >= 0");
  }
  if (!(margin > 0.0)) {
    throw ContractViolation("contrastive_loss: margin must be > 0");
  }
  if (label == PairLabel::same) return distance * distance;
  const double gap = margin - distance;
  return gap > 0.0 ? gap * gap : 0.0;
}

// dLoss/dDistance; zero beyond the margin for different-label pairs.
inline double contrastive_loss_ddistance(double distance, PairLabel label,
                                         double margin) {
  if (!(distance >= 0.0)) {
    throw ContractViolation("contrastive_loss: distance must be >= 0");
  }
  if (!(margin > 0.0)) {
    throw ContractViolation("contrastive_loss: margin must be > 0");
  }
  if (label == PairLabel::same) return 2.0 * distance;
  const double gap = margin - distance;
  return gap > 0.0 ? -2.0 * gap : 0.0;
}

// ---------------------------------------------------------------------------
// Additive angular margin softmax
// ---------------------------------------------------------------------------

// Classification head for angular-margin training: one weight row per
// class.  Rows are kept unit-norm by re-normalizing after every optimizer
// step; the loss itself also normalizes at use so gradients stay exact.
struct AamHead {
  Matrix class_weights;  // C x dim
  double scale = 30.0;   // s
  double margin = 0.5;   // m, radians, in [0, pi/2)
};

inline void renormalize_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    const double n = norm(row);
    if (n == 0.0) throw DegenerateInput("renormalize_rows: zero-norm row");
    for (double& v : row) v /= n;
  }
}

// Random unit-norm rows; weights drawn Xavier-style then normalized.
inline AamHead init_aam_head(std::size_t classes, std::size_t dim,
                             double scale, double margin,
                             std::uint64_t seed) {
  if (classes < 2) {
    throw DegenerateInput("init_aam_head: needs >= 2 classes");
  }
  if (dim == 0) throw ContractViolation("init_aam_head: zero dimension");
  AamHead head;
  head.scale = scale;
  head.margin = margin;
  head.class_weights = Matrix(classes, dim);
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(classes + dim));
  for (double& v : head.class_weights.data) v = rng.uniform(-bound, bound);
  renormalize_rows(head.class_weights);
  return head;
}

struct AamEval {
  double loss = 0.0;
  std::vector<double> logits;  // s-scaled, margin applied to the target
};

// Cosines are clamped to [-1 + 1e-7, 1 - 1e-7] before the angle arithmetic,
// which keeps sin(theta) bounded away from zero; there is no easy-margin
// fallback.  The target logit is s*cos(theta_y + m), expanded as
// cos(theta)cos(m) - sin(theta)sin(m) so no arccos is needed.
namespace detail {

constexpr double kCosClamp = 1.0 - 1e-7;

inline void check_aam_inputs(std::span<const double> embedding,
                             const AamHead& head, std::size_t label) {
  const std::size_t classes = head.class_weights.rows;
  if (classes < 2) throw DegenerateInput("aam_loss: needs >= 2 classes");
  if (label >= classes) throw ContractViolation("aam_loss: label out of range");
  if (embedding.size() != head.class_weights.cols) {
    throw ContractViolation("aam_loss: embedding dimension mismatch");
  }
  if (!all_finite(embedding)) {
    throw ContractViolation("aam_loss: non-finite embedding");
  }
  if (!(head.margin >= 0.0 && head.margin < std::numbers::pi / 2.0)) {
    throw ContractViolation("aam_loss: margin must lie in [0, pi/2)");
  }
  if (!(head.scale > 0.0)) {
    throw ContractViolation("aam_loss: scale must be > 0");
  }
}

}  // namespace detail

// Loss only (no gradients).  The embedding is L2-normalized internally; a
// zero embedding has no direction and is rejected.
inline AamEval aam_loss(std::span<const double> embedding, const AamHead& head,
                        std::size_t label) {
  detail::check_aam_inputs(embedding, head, label);
  const std::size_t classes = head.class_weights.rows;

  const double emb_norm = norm(embedding);
  if (emb_norm == 0.0) throw DegenerateInput("aam_loss: zero-norm embedding");

  const double cos_m = std::cos(head.margin);
  const double sin_m = std::sin(head.margin);

  AamEval eval;
  eval.logits.resize(classes);
  for (std::size_t j = 0; j < classes; ++j) {
    const auto wj = head.class_weights.row(j);
    const double w_norm = norm(wj);
    if (w_norm == 0.0) throw DegenerateInput("aam_loss: zero-norm class row");
    double c = dot(embedding, wj) / (emb_norm * w_norm);
    c = std::clamp(c, -detail::kCosClamp, detail::kCosClamp);
    if (j == label) {
      const double sin_t = std::sqrt(1.0 - c * c);
      eval.logits[j] = head.scale * (c * cos_m - sin_t * sin_m);
    } else {
      eval.logits[j] = head.scale * c;
    }
  }
  eval.loss = softmax_ce(eval.logits, label);
  return eval;
}

// Loss plus gradients w.r.t. the embedding and the class weight rows.
// Gradients flow through both L2 normalizations and vanish where the
// cosine clamp is active, so they agree with finite differences of
// aam_loss itself.  Both accumulators are added into, not overwritten.
inline AamEval aam_loss_grad(std::span<const double> embedding,
                             const AamHead& head, std::size_t label,
                             std::span<double> embedding_grad,
                             Matrix& weight_grad) {
  detail::check_aam_inputs(embedding, head, label);
  const std::size_t classes = head.class_weights.rows;
  const std::size_t dim = head.class_weights.cols;
  if (embedding_grad.size() != dim) {
    throw ContractViolation("aam_loss_grad: embedding gradient size mismatch");
  }
  if (!weight_grad.same_shape(head.class_weights)) {
    throw ContractViolation("aam_loss_grad: weight gradient shape mismatch");
  }

  const double emb_norm = norm(embedding);
  if (emb_norm == 0.0) {
    throw DegenerateInput("aam_loss_grad: zero-norm embedding");
  }
  std::vector<double> e_hat(embedding.begin(), embedding.end());
  for (double& v : e_hat) v /= emb_norm;

  const double cos_m = std::cos(head.margin);
  const double sin_m = std::sin(head.margin);

  std::vector<double> cosines(classes);      // post-clamp
  std::vector<double> clamp_mask(classes);   // 1 inside the clamp, else 0
  std::vector<double> w_norms(classes);
  std::vector<std::vector<double>> w_hats(classes);
  AamEval eval;
  eval.logits.resize(classes);
  double sin_target = 0.0;

  for (std::size_t j = 0; j < classes; ++j) {
    const auto wj = head.class_weights.row(j);
    w_norms[j] = norm(wj);
    if (w_norms[j] == 0.0) {
      throw DegenerateInput("aam_loss_grad: zero-norm class row");
    }
    w_hats[j].assign(wj.begin(), wj.end());
    for (double& v : w_hats[j]) v /= w_norms[j];
    double c = dot(std::span<const double>(e_hat),
                   std::span<const double>(w_hats[j]));
    clamp_mask[j] = (c > -detail::kCosClamp && c < detail::kCosClamp) ? 1 : 0;
    c = std::clamp(c, -detail::kCosClamp, detail::kCosClamp);
    cosines[j] = c;
    if (j == label) {
      sin_target = std::sqrt(1.0 - c * c);
      eval.logits[j] = head.scale * (c * cos_m - sin_target * sin_m);
    } else {
      eval.logits[j] = head.scale * c;
    }
  }
  eval.loss = softmax_ce(eval.logits, label);

  const std::vector<double> p = softmax(eval.logits);
  for (std::size_t j = 0; j < classes; ++j) {
    const double dloss_dlogit = p[j] - (j == label ? 1.0 : 0.0);
    // d(logit_j)/d(cos_j); for the target the angle-sum expansion gives
    // s * (cos m + cos(theta) sin(m) / sin(theta)); clamping keeps
    // sin(theta) > 0.
    double dlogit_dcos = head.scale;
    if (j == label) {
      dlogit_dcos = head.scale * (cos_m + cosines[j] * sin_m / sin_target);
    }
    const double gc = dloss_dlogit * dlogit_dcos * clamp_mask[j];
    if (gc == 0.0) continue;
    // cos_j = <e_hat, w_hat_j>:
    //   d cos / d e = (w_hat_j - cos_j e_hat) / ||e||
    //   d cos / d w = (e_hat - cos_j w_hat_j) / ||w_j||
    for (std::size_t i = 0; i < dim; ++i) {
      embedding_grad[i] +=
          gc * (w_hats[j][i] - cosines[j] * e_hat[i]) / emb_norm;
      weight_grad.at(j, i) +=
          gc * (e_hat[i] - cosines[j] * w_hats[j][i]) / w_norms[j];
    }
  }
  return eval;
}

}  // namespace sourcetrace::nn
