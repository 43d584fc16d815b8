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

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sourcetrace/error.hpp"
#include "sourcetrace/losses.hpp"
#include "sourcetrace/rng.hpp"

namespace sourcetrace::nn {

// Central finite differences: grad_i = (f(p + h e_i) - f(p - h e_i)) / 2h.
// This is the independent oracle the analytic backward passes are checked
// against; it never touches the backward code paths.
inline std::vector<double> finite_difference_grad(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> params, double h) {
  if (!(h > 0.0)) {
    throw ContractViolation("finite_difference_grad: h must be > 0");
  }
  std::vector<double> point(params.begin(), params.end());
  std::vector<double> grad(params.size(), 0.0);
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + h;
    const double f_plus = f(point);
    point[i] = saved - h;
    const double f_minus = f(point);
    point[i] = saved;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
      throw NumericError(
          "finite_difference_grad: objective returned a non-finite value");
    }
    grad[i] = (f_plus - f_minus) / (2.0 * h);
  }
  return grad;
}

// Guarded relative error.  The floor keeps finite-difference noise from
// dominating coordinates whose true gradient is essentially zero (e.g.
// a saturated softmax); any gradient large enough to matter is compared
// at full relative precision.
inline double gradient_rel_error(double analytic, double numeric) {
  const double denom =
      std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
  return std::fabs(analytic - numeric) / denom;
}

struct GradCheckReport {
  std::string loss_name;
  int points = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

namespace detail {

constexpr double kFdStep = 1e-5;

// Random AAM instance: unit-ish gaussian embedding, random unit class rows.
// The flattened parameter vector is [embedding | class_weights], so the
// check covers the gradient w.r.t. both.
inline double aam_gradcheck_point(Rng& rng, double scale, double margin,
                                  double tolerance) {
  const std::size_t dim = 8 + rng.below(17);     // 8..24
  const std::size_t classes = 2 + rng.below(5);  // 2..6
  const std::size_t label = rng.below(classes);

  std::vector<double> params(dim + classes * dim);
  for (double& v : params) v = rng.gaussian();

  AamHead head;
  head.scale = scale;
  head.margin = margin;
  head.class_weights = Matrix(classes, dim);

  const auto eval_loss = [&](std::span<const double> p) {
    AamHead h = head;
    std::copy(p.begin() + dim, p.end(), h.class_weights.data.begin());
    return aam_loss(p.subspan(0, dim), h, label).loss;
  };

  head.class_weights.data.assign(params.begin() + dim, params.end());
  std::vector<double> analytic_emb(dim, 0.0);
  Matrix analytic_w(classes, dim);
  aam_loss_grad(std::span<const double>(params).subspan(0, dim), head, label,
                analytic_emb, analytic_w);
  std::vector<double> analytic(analytic_emb);
  analytic.insert(analytic.end(), analytic_w.data.begin(),
                  analytic_w.data.end());

  const std::vector<double> numeric =
      finite_difference_grad(eval_loss, params, kFdStep);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, gradient_rel_error(analytic[i], numeric[i]));
  }
  (void)tolerance;
  return worst;
}

inline double softmax_ce_gradcheck_point(Rng& rng) {
  const std::size_t n = 2 + rng.below(7);  // 2..8
  const std::size_t label = rng.below(n);
  std::vector<double> logits(n);
  for (double& v : logits) v = 3.0 * rng.gaussian();

  const auto eval_loss = [&](std::span<const double> p) {
    return softmax_ce(p, label);
  };
  std::vector<double> analytic(n, 0.0);
  softmax_ce_grad(logits, label, analytic);
  const std::vector<double> numeric =
      finite_difference_grad(eval_loss, logits, kFdStep);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    worst = std::max(worst, gradient_rel_error(analytic[i], numeric[i]));
  }
  return worst;
}

inline double binary_ce_gradcheck_point(Rng& rng) {
  const double logit = rng.uniform(-6.0, 6.0);
  const BinaryLabel label =
      rng.below(2) == 0 ? BinaryLabel::positive : BinaryLabel::negative;
  const auto eval_loss = [&](std::span<const double> p) {
    return binary_ce(p[0], label);
  };
  const double analytic = binary_ce_dlogit(logit, label);
  const std::vector<double> numeric = finite_difference_grad(
      eval_loss, std::span<const double>(&logit, 1), kFdStep);
  return gradient_rel_error(analytic, numeric[0]);
}

inline double contrastive_gradcheck_point(Rng& rng) {
  const double margin = 1.0;
  // The hinge is non-differentiable exactly at d == margin, where a
  // finite-difference oracle is meaningless; sample clear of the kink.
  double d = rng.uniform(0.0, 2.0);
  while (std::fabs(d - margin) < 1e-3) d = rng.uniform(0.0, 2.0);
  const PairLabel label =
      rng.below(2) == 0 ? PairLabel::same : PairLabel::different;
  const auto eval_loss = [&](std::span<const double> p) {
    return contrastive_loss(p[0], label, margin);
  };
  const double analytic = contrastive_loss_ddistance(d, label, margin);
  const std::vector<double> numeric = finite_difference_grad(
      eval_loss, std::span<const double>(&d, 1), kFdStep);
  return gradient_rel_error(analytic, numeric[0]);
}

}  // namespace detail

// Checks the four analytic loss gradients against central finite
// differences at `points` seeded random instances each.  AAM runs at the
// production operating point (s=30, m=0.5).
inline std::vector<GradCheckReport> run_loss_gradchecks(
    int points, std::uint64_t seed, double tolerance) {
  if (points <= 0) throw ContractViolation("run_loss_gradchecks: points > 0");
  std::vector<GradCheckReport> reports;

  const auto run = [&](const std::string& name, auto&& point_fn,
                       std::uint64_t salt) {
    Rng rng(derive_seed(seed, salt));
    GradCheckReport report;
    report.loss_name = name;
    report.points = points;
    report.tolerance = tolerance;
    for (int i = 0; i < points; ++i) {
      report.max_rel_error = std::max(report.max_rel_error, point_fn(rng));
    }
    report.pass = report.max_rel_error < tolerance;
    reports.push_back(report);
  };

  run("aam_loss",
      [&](Rng& rng) {
        return detail::aam_gradcheck_point(rng, 30.0, 0.5, tolerance);
      },
      1);
  run("contrastive_loss",
      [&](Rng& rng) { return detail::contrastive_gradcheck_point(rng); }, 2);
  run("softmax_ce",
      [&](Rng& rng) { return detail::softmax_ce_gradcheck_point(rng); }, 3);
  run("binary_ce",
      [&](Rng& rng) { return detail::binary_ce_gradcheck_point(rng); }, 4);
  return reports;
}

}  // namespace sourcetrace::nn
