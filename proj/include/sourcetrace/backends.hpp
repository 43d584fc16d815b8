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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sourcetrace/adam.hpp"
#include "sourcetrace/error.hpp"
#include "sourcetrace/linalg.hpp"
#include "sourcetrace/losses.hpp"
#include "sourcetrace/nn.hpp"
#include "sourcetrace/rng.hpp"

namespace sourcetrace {

// Cosine similarity without intermediate normalized copies:
// dot(a, b) / sqrt(dot(a, a) * dot(b, b)).  This form makes
// cosine(v, v) == 1.0 exact for any nonzero v, because the numerator and
// the squared norms are the same sums.
inline double cosine_score(std::span<const double> a,
                           std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ContractViolation("cosine_score: dimension mismatch");
  }
  const double aa = squared_norm(a);
  const double bb = squared_norm(b);
  if (aa == 0.0 || bb == 0.0) {
    throw DegenerateInput("cosine_score: zero-norm vector");
  }
  const double s = dot(a, b) / std::sqrt(aa * bb);
  if (!std::isfinite(s)) throw NumericError("cosine_score: non-finite score");
  return s;
}

// Threshold rules shared by every backend: verification accepts at or
// above the threshold; identification returns the best-scoring candidate
// or nothing if even the best falls below the threshold.  Ties go to the
// lexicographically smallest candidate id so results never depend on map
// insertion order.
inline bool verify(double score, double threshold) {
  return score >= threshold;
}

inline std::optional<std::string> identify(
    const std::map<std::string, double>& scores, double threshold) {
  if (scores.empty()) throw ContractViolation("identify: no candidates");
  auto best = scores.begin();
  for (auto it = std::next(scores.begin()); it != scores.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  if (best->second < threshold) return std::nullopt;
  return best->first;
}

// ---------------------------------------------------------------------------
// Shared training-loop machinery
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr std::size_t kFullBatchLimit = 4096;
inline constexpr std::size_t kMiniBatch = 256;

struct TrainSplit {
  std::vector<std::size_t> fit;     // gradient steps run over these
  std::vector<std::size_t> select;  // model selection is scored on these
};

// Seeded split.  floor(val_fraction * n) examples are held out for
// selection; with nothing held out, selection falls back to the fit loss.
inline TrainSplit make_split(std::size_t n, double val_fraction,
                             std::uint64_t seed) {
  if (n == 0) throw ContractViolation("make_split: no examples");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ContractViolation("make_split: val_fraction must lie in [0, 1)");
  }
  const std::size_t n_val = static_cast<std::size_t>(
      val_fraction * static_cast<double>(n));
  Rng rng(seed);
  const std::vector<std::size_t> perm = rng.permutation(n);
  TrainSplit split;
  split.select.assign(perm.begin(), perm.begin() + n_val);
  split.fit.assign(perm.begin() + n_val, perm.end());
  if (split.fit.empty()) {
    throw ContractViolation("make_split: validation split leaves no "
                            "training examples");
  }
  if (split.select.empty()) split.select = split.fit;
  return split;
}

// One epoch's batches: everything in one go when the fit set is small,
// otherwise shuffled minibatches.
inline std::vector<std::vector<std::size_t>> make_batches(
    const std::vector<std::size_t>& fit, Rng& rng) {
  std::vector<std::size_t> order = fit;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  if (order.size() <= kFullBatchLimit) {
    batches.push_back(std::move(order));
    return batches;
  }
  for (std::size_t i = 0; i < order.size(); i += kMiniBatch) {
    const std::size_t end = std::min(order.size(), i + kMiniBatch);
    batches.emplace_back(order.begin() + i, order.begin() + end);
  }
  return batches;
}

// Seed salts so the independent random streams inside one training run
// can never collide.
inline constexpr std::uint64_t kSaltInit = 1;
inline constexpr std::uint64_t kSaltHead = 2;
inline constexpr std::uint64_t kSaltSplit = 3;
inline constexpr std::uint64_t kSaltEpochs = 4;

}  // namespace detail

// ---------------------------------------------------------------------------
// Siamese comparator
// ---------------------------------------------------------------------------

struct EmbeddingPair {
  std::vector<double> a;
  std::vector<double> b;
  bool same = false;
};

enum class SiameseLossMode { contrastive, cross_entropy };

inline std::string siamese_loss_mode_name(SiameseLossMode m) {
  return m == SiameseLossMode::contrastive ? "contrastive" : "cross_entropy";
}

inline SiameseLossMode siamese_loss_mode_from_name(const std::string& s) {
  if (s == "contrastive") return SiameseLossMode::contrastive;
  if (s == "cross_entropy") return SiameseLossMode::cross_entropy;
  throw ParseError(ParseError::Kind::malformed,
                   "unknown siamese loss mode: " + s);
}

struct SiameseHyper {
  std::size_t epochs = 100;
  double lr = 0.001;
  double margin = 1.0;          // contrastive margin
  double ce_scale_init = 10.0;  // initial logit scale, cross-entropy mode
  std::vector<std::size_t> hidden = {128, 64, 32};
  double val_fraction = 0.2;
};

// Twin-tower comparator: one shared trunk maps both embeddings into a
// space where cosine separates same-source from different-source pairs.
// The logit scale in cross-entropy mode is a trained parameter; scoring
// always uses the raw cosine, so both loss modes produce scores on the
// same [-1, 1] scale.
struct SiameseModel {
  nn::DenseNet trunk;
  SiameseLossMode loss_mode = SiameseLossMode::contrastive;
  double ce_scale = 10.0;
};

namespace detail {

inline double siamese_pair_loss(const SiameseModel& model,
                                const SiameseHyper& hyper,
                                const EmbeddingPair& p) {
  const std::vector<double> ta = nn::forward(model.trunk, p.a);
  const std::vector<double> tb = nn::forward(model.trunk, p.b);
  if (model.loss_mode == SiameseLossMode::contrastive) {
    std::vector<double> diff = ta;
    axpy(-1.0, tb, diff);
    return nn::contrastive_loss(
        norm(diff), p.same ? nn::PairLabel::same : nn::PairLabel::different,
        hyper.margin);
  }
  const double c = cosine_score(ta, tb);
  return nn::binary_ce(model.ce_scale * c,
                       p.same ? nn::BinaryLabel::positive
                              : nn::BinaryLabel::negative);
}

}  // namespace detail

inline SiameseModel train_siamese(const std::vector<EmbeddingPair>& pairs,
                                  SiameseLossMode mode,
                                  const SiameseHyper& hyper,
                                  std::uint64_t seed) {
  if (pairs.empty()) throw ContractViolation("train_siamese: no pairs");
  if (hyper.hidden.empty()) {
    throw ContractViolation("train_siamese: no hidden layers");
  }
  if (!(hyper.lr > 0.0)) throw ContractViolation("train_siamese: lr <= 0");
  if (!(hyper.margin > 0.0)) {
    throw ContractViolation("train_siamese: margin <= 0");
  }
  if (!(hyper.ce_scale_init > 0.0)) {
    throw ContractViolation("train_siamese: ce_scale_init <= 0");
  }
  const std::size_t dim = pairs.front().a.size();
  std::size_t n_same = 0;
  for (const EmbeddingPair& p : pairs) {
    if (p.a.size() != dim || p.b.size() != dim || dim == 0) {
      throw ContractViolation("train_siamese: inconsistent pair dimensions");
    }
    if (p.same) ++n_same;
  }
  if (n_same * 2 != pairs.size()) {
    throw ContractViolation(
        "train_siamese: pairs must be balanced, have " +
        std::to_string(n_same) + " same of " + std::to_string(pairs.size()));
  }

  std::vector<std::size_t> dims;
  dims.push_back(dim);
  dims.insert(dims.end(), hyper.hidden.begin(), hyper.hidden.end());

  SiameseModel model;
  model.loss_mode = mode;
  model.trunk = nn::init_params(dims, derive_seed(seed, detail::kSaltInit));
  model.ce_scale = hyper.ce_scale_init;

  const detail::TrainSplit split = detail::make_split(
      pairs.size(), hyper.val_fraction, derive_seed(seed, detail::kSaltSplit));

  const auto selection_loss = [&]() {
    double sum = 0.0;
    for (std::size_t i : split.select) {
      sum += detail::siamese_pair_loss(model, hyper, pairs[i]);
    }
    return sum / static_cast<double>(split.select.size());
  };

  // Parameter chunks: trunk weights and biases, plus the logit scale in
  // cross-entropy mode.
  std::vector<double> scale_param = {model.ce_scale};
  std::vector<std::span<double>> params = nn::param_views(model.trunk);
  const bool train_scale = mode == SiameseLossMode::cross_entropy;
  if (train_scale) params.emplace_back(scale_param);
  nn::AdamState adam =
      nn::init_adam(nn::chunk_sizes(params), nn::AdamConfig{hyper.lr});

  double best_loss = selection_loss();
  nn::DenseNet best_trunk = model.trunk;
  double best_scale = model.ce_scale;

  Rng epoch_rng(derive_seed(seed, detail::kSaltEpochs));
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (const std::vector<std::size_t>& batch :
         detail::make_batches(split.fit, epoch_rng)) {
      nn::NetGrad grad = nn::NetGrad::zeros_like(model.trunk);
      std::vector<double> scale_grad = {0.0};
      for (std::size_t idx : batch) {
        const EmbeddingPair& p = pairs[idx];
        const nn::ForwardTrace trace_a = nn::forward_trace(model.trunk, p.a);
        const nn::ForwardTrace trace_b = nn::forward_trace(model.trunk, p.b);
        const std::vector<double>& ta = trace_a.output();
        const std::vector<double>& tb = trace_b.output();
        const std::size_t out = ta.size();
        std::vector<double> ga(out, 0.0);
        std::vector<double> gb(out, 0.0);

        if (mode == SiameseLossMode::contrastive) {
          std::vector<double> diff = ta;
          axpy(-1.0, tb, diff);
          const double d = norm(diff);
          const double dloss_dd = nn::contrastive_loss_ddistance(
              d, p.same ? nn::PairLabel::same : nn::PairLabel::different,
              hyper.margin);
          if (d > 0.0 && dloss_dd != 0.0) {
            const double k = dloss_dd / d;
            for (std::size_t i = 0; i < out; ++i) {
              ga[i] = k * diff[i];
              gb[i] = -k * diff[i];
            }
          }
          // d == 0 on a different-label pair has no usable direction:
          // take the zero subgradient.
        } else {
          const double na = norm(ta);
          const double nb = norm(tb);
          if (na == 0.0 || nb == 0.0) {
            throw NumericError("train_siamese: projection collapsed to zero");
          }
          const double c = dot(ta, tb) / (na * nb);
          const double g = nn::binary_ce_dlogit(
              scale_param[0] * c, p.same ? nn::BinaryLabel::positive
                                         : nn::BinaryLabel::negative);
          scale_grad[0] += g * c;
          const double dc = g * scale_param[0];
          for (std::size_t i = 0; i < out; ++i) {
            ga[i] = dc * (tb[i] / nb - c * ta[i] / na) / na;
            gb[i] = dc * (ta[i] / na - c * tb[i] / nb) / nb;
          }
        }

        nn::backward(model.trunk, trace_a, ga, grad);
        nn::backward(model.trunk, trace_b, gb, grad);
      }
      const double inv = 1.0 / static_cast<double>(batch.size());
      grad.scale(inv);
      scale_grad[0] *= inv;

      std::vector<std::span<const double>> grads = nn::grad_views(grad);
      if (train_scale) grads.emplace_back(scale_grad);
      nn::adam_step(params, grads, adam);
      model.ce_scale = scale_param[0];
    }
    const double cur = selection_loss();
    if (cur < best_loss) {
      best_loss = cur;
      best_trunk = model.trunk;
      best_scale = model.ce_scale;
    }
  }

  model.trunk = std::move(best_trunk);
  model.ce_scale = best_scale;
  return model;
}

// Score = raw cosine of the two projections, whatever the training loss.
inline double siamese_score(const SiameseModel& model,
                            std::span<const double> a,
                            std::span<const double> b) {
  return cosine_score(nn::forward(model.trunk, a),
                      nn::forward(model.trunk, b));
}

// ---------------------------------------------------------------------------
// Closed-set classifier backends
// ---------------------------------------------------------------------------

struct LabeledExample {
  std::vector<double> vec;
  std::string label;
};

namespace detail {

// Index map for class ids, with the checks common to classifier training:
// ids unique and nonempty, every example labeled with a known id, every id
// actually represented.
inline std::map<std::string, std::size_t> class_index(
    const std::vector<LabeledExample>& examples,
    const std::vector<std::string>& class_ids, const char* who) {
  if (examples.empty()) {
    throw ContractViolation(std::string(who) + ": no training examples");
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    if (class_ids[i].empty() || !index.emplace(class_ids[i], i).second) {
      throw ContractViolation(std::string(who) +
                              ": class ids must be unique and nonempty");
    }
  }
  if (index.size() < 2) {
    throw DegenerateInput(std::string(who) + ": needs at least two classes");
  }
  std::vector<bool> seen(class_ids.size(), false);
  const std::size_t dim = examples.front().vec.size();
  for (const LabeledExample& e : examples) {
    const auto it = index.find(e.label);
    if (it == index.end()) {
      throw ContractViolation(std::string(who) + ": example labeled with "
                              "unknown class " + e.label);
    }
    seen[it->second] = true;
    if (e.vec.size() != dim || dim == 0) {
      throw ContractViolation(std::string(who) +
                              ": inconsistent example dimensions");
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) {
      throw ContractViolation(std::string(who) + ": class " + class_ids[i] +
                              " has no examples");
    }
  }
  return index;
}

}  // namespace detail

struct MlpHyper {
  std::size_t epochs = 100;
  double lr = 0.001;
  std::size_t hidden = 128;
  double val_fraction = 0.2;
};

// Softmax classifier over the enrolled attacks.  Its verification score
// for (utterance, claimed attack) is the claimed class's posterior, which
// is normalized across classes per utterance; that cross-class coupling is
// what the unnormalized similarity backends lack.
struct MlpModel {
  nn::DenseNet net;
  std::vector<std::string> class_ids;
};

inline MlpModel train_mlp(const std::vector<LabeledExample>& examples,
                          const std::vector<std::string>& class_ids,
                          const MlpHyper& hyper, std::uint64_t seed) {
  if (!(hyper.lr > 0.0)) throw ContractViolation("train_mlp: lr <= 0");
  if (hyper.hidden == 0) throw ContractViolation("train_mlp: hidden == 0");
  const std::map<std::string, std::size_t> index =
      detail::class_index(examples, class_ids, "train_mlp");
  const std::size_t dim = examples.front().vec.size();

  MlpModel model;
  model.class_ids = class_ids;
  model.net = nn::init_params({dim, hyper.hidden, class_ids.size()},
                              derive_seed(seed, detail::kSaltInit));

  const detail::TrainSplit split =
      detail::make_split(examples.size(), hyper.val_fraction,
                         derive_seed(seed, detail::kSaltSplit));

  const auto selection_loss = [&]() {
    double sum = 0.0;
    for (std::size_t i : split.select) {
      sum += nn::softmax_ce(nn::forward(model.net, examples[i].vec),
                            index.at(examples[i].label));
    }
    return sum / static_cast<double>(split.select.size());
  };

  const std::vector<std::span<double>> params = nn::param_views(model.net);
  nn::AdamState adam =
      nn::init_adam(nn::chunk_sizes(params), nn::AdamConfig{hyper.lr});

  double best_loss = selection_loss();
  nn::DenseNet best_net = model.net;

  Rng epoch_rng(derive_seed(seed, detail::kSaltEpochs));
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (const std::vector<std::size_t>& batch :
         detail::make_batches(split.fit, epoch_rng)) {
      nn::NetGrad grad = nn::NetGrad::zeros_like(model.net);
      for (std::size_t idx : batch) {
        const nn::ForwardTrace trace =
            nn::forward_trace(model.net, examples[idx].vec);
        std::vector<double> logit_grad(trace.output().size(), 0.0);
        nn::softmax_ce_grad(trace.output(), index.at(examples[idx].label),
                            logit_grad);
        nn::backward(model.net, trace, logit_grad, grad);
      }
      grad.scale(1.0 / static_cast<double>(batch.size()));
      nn::adam_step(params, nn::grad_views(grad), adam);
    }
    const double cur = selection_loss();
    if (cur < best_loss) {
      best_loss = cur;
      best_net = model.net;
    }
  }
  model.net = std::move(best_net);
  return model;
}

inline std::size_t class_index_of(const std::vector<std::string>& class_ids,
                                  const std::string& claimed,
                                  const char* who) {
  const auto it = std::find(class_ids.begin(), class_ids.end(), claimed);
  if (it == class_ids.end()) {
    throw ContractViolation(std::string(who) + ": unknown class " + claimed);
  }
  return static_cast<std::size_t>(it - class_ids.begin());
}

inline double mlp_score(const MlpModel& model, std::span<const double> emb,
                        const std::string& claimed) {
  const std::size_t idx =
      class_index_of(model.class_ids, claimed, "mlp_score");
  return nn::softmax(nn::forward(model.net, emb))[idx];
}

// ---------------------------------------------------------------------------
// Angular-margin projector
// ---------------------------------------------------------------------------

struct ProjectorHyper {
  double scale = 30.0;
  double margin = 0.5;
  std::size_t epochs = 100;
  double lr = 0.0001;
  std::vector<std::size_t> hidden = {128};
  std::size_t embedding_dim = 64;
  double val_fraction = 0.2;
};

// Maps raw feature vectors into an embedding space trained with an
// angular-margin softmax over the training attacks, so cosine similarity
// in the output space concentrates same-source mass.  The classification
// head only exists for training; scoring uses the projected embeddings.
struct ProjectorModel {
  nn::DenseNet net;
  nn::AamHead head;
  std::vector<std::string> class_ids;
};

inline ProjectorModel train_projector(
    const std::vector<LabeledExample>& examples,
    const std::vector<std::string>& class_ids, const ProjectorHyper& hyper,
    std::uint64_t seed) {
  if (!(hyper.lr > 0.0)) throw ContractViolation("train_projector: lr <= 0");
  if (hyper.embedding_dim == 0) {
    throw ContractViolation("train_projector: embedding_dim == 0");
  }
  const std::map<std::string, std::size_t> index =
      detail::class_index(examples, class_ids, "train_projector");
  const std::size_t dim = examples.front().vec.size();

  ProjectorModel model;
  model.class_ids = class_ids;
  std::vector<std::size_t> dims;
  dims.push_back(dim);
  dims.insert(dims.end(), hyper.hidden.begin(), hyper.hidden.end());
  dims.push_back(hyper.embedding_dim);
  model.net = nn::init_params(dims, derive_seed(seed, detail::kSaltInit));
  model.head =
      nn::init_aam_head(class_ids.size(), hyper.embedding_dim, hyper.scale,
                        hyper.margin, derive_seed(seed, detail::kSaltHead));

  const detail::TrainSplit split =
      detail::make_split(examples.size(), hyper.val_fraction,
                         derive_seed(seed, detail::kSaltSplit));

  const auto selection_loss = [&]() {
    double sum = 0.0;
    for (std::size_t i : split.select) {
      sum += nn::aam_loss(nn::forward(model.net, examples[i].vec), model.head,
                          index.at(examples[i].label))
                 .loss;
    }
    return sum / static_cast<double>(split.select.size());
  };

  std::vector<std::span<double>> params = nn::param_views(model.net);
  params.emplace_back(model.head.class_weights.data);
  nn::AdamState adam =
      nn::init_adam(nn::chunk_sizes(params), nn::AdamConfig{hyper.lr});

  double best_loss = selection_loss();
  nn::DenseNet best_net = model.net;
  Matrix best_weights = model.head.class_weights;

  Rng epoch_rng(derive_seed(seed, detail::kSaltEpochs));
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (const std::vector<std::size_t>& batch :
         detail::make_batches(split.fit, epoch_rng)) {
      nn::NetGrad grad = nn::NetGrad::zeros_like(model.net);
      Matrix weight_grad(model.head.class_weights.rows,
                         model.head.class_weights.cols);
      for (std::size_t idx : batch) {
        const nn::ForwardTrace trace =
            nn::forward_trace(model.net, examples[idx].vec);
        std::vector<double> emb_grad(hyper.embedding_dim, 0.0);
        nn::aam_loss_grad(trace.output(), model.head,
                          index.at(examples[idx].label), emb_grad,
                          weight_grad);
        nn::backward(model.net, trace, emb_grad, grad);
      }
      const double inv = 1.0 / static_cast<double>(batch.size());
      grad.scale(inv);
      for (double& v : weight_grad.data) v *= inv;

      std::vector<std::span<const double>> grads = nn::grad_views(grad);
      grads.emplace_back(weight_grad.data);
      nn::adam_step(params, grads, adam);
      nn::renormalize_rows(model.head.class_weights);
    }
    const double cur = selection_loss();
    if (cur < best_loss) {
      best_loss = cur;
      best_net = model.net;
      best_weights = model.head.class_weights;
    }
  }
  model.net = std::move(best_net);
  model.head.class_weights = std::move(best_weights);
  return model;
}

inline std::vector<double> project(const ProjectorModel& model,
                                   std::span<const double> raw) {
  return nn::forward(model.net, raw);
}

}  // namespace sourcetrace
