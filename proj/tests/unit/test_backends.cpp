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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sourcetrace/backends.hpp"
#include "sourcetrace/losses.hpp"
#include "sourcetrace/model_io.hpp"
#include "sourcetrace/nn.hpp"
#include "sourcetrace/rng.hpp"
#include "sourcetrace/text_io.hpp"
#include "test_util.hpp"

namespace st = sourcetrace;

namespace {

std::vector<double> random_vec(st::Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (double& x : v) {
    x = rng.uniform(0.1, 2.0) * (rng.below(2) == 0 ? 1.0 : -1.0);
  }
  return v;
}

std::vector<double> cluster_point(st::Rng& rng,
                                  const std::vector<double>& center,
                                  double sigma) {
  std::vector<double> v = center;
  for (double& x : v) x += sigma * rng.gaussian();
  return v;
}

std::vector<double> basis_center(std::size_t dim, std::size_t axis,
                                 double magnitude) {
  std::vector<double> v(dim, 0.0);
  v[axis] = magnitude;
  return v;
}

// Balanced pair set from two well separated clusters: same-source pairs stay
// within one cluster, different-source pairs straddle them.
std::vector<st::EmbeddingPair> cluster_pairs(st::Rng& rng, std::size_t n_same,
                                             std::size_t dim, double sigma) {
  const std::vector<double> c0 = basis_center(dim, 0, 2.0);
  const std::vector<double> c1 = basis_center(dim, 1, 2.0);
  std::vector<st::EmbeddingPair> pairs;
  for (std::size_t i = 0; i < n_same; ++i) {
    const std::vector<double>& c = (i % 2 == 0) ? c0 : c1;
    pairs.push_back({cluster_point(rng, c, sigma),
                     cluster_point(rng, c, sigma), true});
  }
  for (std::size_t i = 0; i < n_same; ++i) {
    pairs.push_back({cluster_point(rng, c0, sigma),
                     cluster_point(rng, c1, sigma), false});
  }
  return pairs;
}

// Eval-side pair loss computed from public pieces only, mirroring how the
// trainer scores a pair under each mode.
double pair_loss(const st::SiameseModel& model, const st::SiameseHyper& hyper,
                 const st::EmbeddingPair& p) {
  const std::vector<double> ta = st::nn::forward(model.trunk, p.a);
  const std::vector<double> tb = st::nn::forward(model.trunk, p.b);
  if (model.loss_mode == st::SiameseLossMode::contrastive) {
    std::vector<double> diff = ta;
    st::axpy(-1.0, tb, diff);
    return st::nn::contrastive_loss(
        st::norm(diff),
        p.same ? st::nn::PairLabel::same : st::nn::PairLabel::different,
        hyper.margin);
  }
  return st::nn::binary_ce(model.ce_scale * st::cosine_score(ta, tb),
                           p.same ? st::nn::BinaryLabel::positive
                                  : st::nn::BinaryLabel::negative);
}

double mean_pair_loss(const st::SiameseModel& model,
                      const st::SiameseHyper& hyper,
                      const std::vector<st::EmbeddingPair>& pairs) {
  double sum = 0.0;
  for (const st::EmbeddingPair& p : pairs) sum += pair_loss(model, hyper, p);
  return sum / static_cast<double>(pairs.size());
}

double separation(const st::SiameseModel& model,
                  const std::vector<st::EmbeddingPair>& pairs) {
  double same_sum = 0.0, diff_sum = 0.0;
  std::size_t n_same = 0, n_diff = 0;
  for (const st::EmbeddingPair& p : pairs) {
    const double s = st::siamese_score(model, p.a, p.b);
    if (p.same) {
      same_sum += s;
      ++n_same;
    } else {
      diff_sum += s;
      ++n_diff;
    }
  }
  return same_sum / static_cast<double>(n_same) -
         diff_sum / static_cast<double>(n_diff);
}

std::vector<st::LabeledExample> labeled_clusters(
    st::Rng& rng, const std::vector<std::string>& class_ids, std::size_t dim,
    std::size_t per_class, double sigma) {
  std::vector<st::LabeledExample> out;
  for (std::size_t k = 0; k < class_ids.size(); ++k) {
    const std::vector<double> c = basis_center(dim, 2 * k, 2.0);
    for (std::size_t i = 0; i < per_class; ++i) {
      out.push_back({cluster_point(rng, c, sigma), class_ids[k]});
    }
  }
  return out;
}

std::size_t argmax_index(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

bool nets_equal(const st::nn::DenseNet& a, const st::nn::DenseNet& b) {
  if (a.input_dim != b.input_dim || a.layers.size() != b.layers.size()) {
    return false;
  }
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    const st::nn::DenseLayer& la = a.layers[k];
    const st::nn::DenseLayer& lb = b.layers[k];
    if (!la.weight.same_shape(lb.weight) || la.weight.data != lb.weight.data ||
        la.bias != lb.bias || la.act != lb.act) {
      return false;
    }
  }
  return true;
}

st::SiameseModel identity_model(std::size_t dim) {
  st::SiameseModel model;
  model.trunk.input_dim = dim;
  st::nn::DenseLayer layer;
  layer.weight = st::Matrix(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) layer.weight.at(i, i) = 1.0;
  layer.bias.assign(dim, 0.0);
  layer.act = st::nn::Activation::identity;
  model.trunk.layers.push_back(std::move(layer));
  return model;
}

}  // namespace

TEST_CASE("cosine_score matches hand values", "[backends]") {
  const std::vector<double> e0 = {1.0, 0.0};
  const std::vector<double> diag = {1.0, 1.0};
  REQUIRE(st::cosine_score(e0, diag) == 1.0 / std::sqrt(2.0));
  REQUIRE(st::cosine_score(e0, std::vector<double>{0.0, 3.0}) == 0.0);
  REQUIRE(st::cosine_score(e0, std::vector<double>{-2.0, 0.0}) == -1.0);
}

TEST_CASE("cosine_score of a vector with itself is exactly one",
          "[backends]") {
  st::Rng rng(401);
  for (int t = 0; t < 100; ++t) {
    const std::vector<double> v = random_vec(rng, 1 + rng.below(24));
    REQUIRE(st::cosine_score(v, v) == 1.0);
  }
}

TEST_CASE("cosine_score is invariant under positive scaling", "[backends]") {
  st::Rng rng(402);
  for (int t = 0; t < 50; ++t) {
    const std::vector<double> a = random_vec(rng, 12);
    const std::vector<double> b = random_vec(rng, 12);
    const double base = st::cosine_score(a, b);

    // Power-of-two scales commute with every rounding step, so the score is
    // reproduced bit for bit.
    for (const double scale : {0.25, 8.0}) {
      std::vector<double> sa = a;
      for (double& x : sa) x *= scale;
      REQUIRE(st::cosine_score(sa, b) == base);
    }

    std::vector<double> ga = a;
    for (double& x : ga) x *= 1.7;
    REQUIRE_THAT(st::cosine_score(ga, b),
                 Catch::Matchers::WithinAbs(base, 1e-12));
  }
}

TEST_CASE("cosine_score input validation", "[backends]") {
  const std::vector<double> v = {1.0, 2.0};
  REQUIRE_THROWS_AS(st::cosine_score(v, std::vector<double>{1.0, 2.0, 3.0}),
                    st::ContractViolation);
  REQUIRE_THROWS_AS(st::cosine_score(v, std::vector<double>{0.0, 0.0}),
                    st::DegenerateInput);
  REQUIRE_THROWS_AS(st::cosine_score(std::vector<double>{0.0, 0.0}, v),
                    st::DegenerateInput);
  const double inf = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(st::cosine_score(std::vector<double>{inf, 0.0}, v),
                    st::NumericError);
  // Large finite inputs whose squared norms overflow also surface as a
  // numeric failure rather than a quiet NaN score.
  REQUIRE_THROWS_AS(st::cosine_score(std::vector<double>{1e308, 1e308},
                                     std::vector<double>{1e308, -1e308}),
                    st::NumericError);
}

TEST_CASE("verify accepts at the threshold", "[backends]") {
  REQUIRE(st::verify(0.5, 0.5));
  REQUIRE(st::verify(0.7, 0.5));
  REQUIRE_FALSE(st::verify(0.4999999, 0.5));
  REQUIRE(st::verify(-1.0, -2.0));
}

TEST_CASE("identify picks the best candidate with deterministic ties",
          "[backends]") {
  const std::map<std::string, double> scores = {
      {"beta", 0.9}, {"alpha", 0.5}, {"gamma", 0.9}};
  // beta and gamma tie at the top; the lexicographically smaller id wins.
  REQUIRE(st::identify(scores, 0.0) == std::optional<std::string>("beta"));
  // Acceptance at exactly the threshold mirrors verify().
  REQUIRE(st::identify(scores, 0.9) == std::optional<std::string>("beta"));
  REQUIRE_FALSE(st::identify(scores, 0.900001).has_value());

  const std::map<std::string, double> tied = {
      {"zeta", 1.5}, {"alpha", 1.5}, {"midl", 0.2}};
  REQUIRE(st::identify(tied, 0.0) == std::optional<std::string>("alpha"));

  REQUIRE_THROWS_AS(st::identify({}, 0.0), st::ContractViolation);
}

TEST_CASE("siamese loss mode names round-trip", "[backends]") {
  REQUIRE(st::siamese_loss_mode_name(st::SiameseLossMode::contrastive) ==
          "contrastive");
  REQUIRE(st::siamese_loss_mode_name(st::SiameseLossMode::cross_entropy) ==
          "cross_entropy");
  REQUIRE(st::siamese_loss_mode_from_name("contrastive") ==
          st::SiameseLossMode::contrastive);
  REQUIRE(st::siamese_loss_mode_from_name("cross_entropy") ==
          st::SiameseLossMode::cross_entropy);
  REQUIRE_THROWS_AS(st::siamese_loss_mode_from_name("triplet"),
                    st::ParseError);
}

TEST_CASE("identity trunk reduces the siamese score to plain cosine",
          "[backends]") {
  const std::size_t dim = 5;
  const st::SiameseModel model = identity_model(dim);
  st::Rng rng(403);
  for (int t = 0; t < 50; ++t) {
    const std::vector<double> a = random_vec(rng, dim);
    const std::vector<double> b = random_vec(rng, dim);
    REQUIRE(st::siamese_score(model, a, b) == st::cosine_score(a, b));
  }
}

TEST_CASE("train_siamese validates its inputs", "[backends]") {
  st::Rng rng(404);
  std::vector<st::EmbeddingPair> pairs = cluster_pairs(rng, 4, 6, 0.3);
  st::SiameseHyper hyper;
  hyper.epochs = 1;
  hyper.hidden = {4};

  REQUIRE_THROWS_AS(
      st::train_siamese({}, st::SiameseLossMode::contrastive, hyper, 1),
      st::ContractViolation);

  std::vector<st::EmbeddingPair> unbalanced = pairs;
  unbalanced.pop_back();  // drops a different-source pair
  REQUIRE_THROWS_AS(st::train_siamese(unbalanced,
                                      st::SiameseLossMode::contrastive, hyper,
                                      1),
                    st::ContractViolation);

  std::vector<st::EmbeddingPair> ragged = pairs;
  ragged[2].b.push_back(0.0);
  REQUIRE_THROWS_AS(st::train_siamese(ragged,
                                      st::SiameseLossMode::contrastive, hyper,
                                      1),
                    st::ContractViolation);

  st::SiameseHyper bad = hyper;
  bad.hidden.clear();
  REQUIRE_THROWS_AS(
      st::train_siamese(pairs, st::SiameseLossMode::contrastive, bad, 1),
      st::ContractViolation);
  bad = hyper;
  bad.lr = 0.0;
  REQUIRE_THROWS_AS(
      st::train_siamese(pairs, st::SiameseLossMode::contrastive, bad, 1),
      st::ContractViolation);
  bad = hyper;
  bad.margin = 0.0;
  REQUIRE_THROWS_AS(
      st::train_siamese(pairs, st::SiameseLossMode::contrastive, bad, 1),
      st::ContractViolation);
  bad = hyper;
  bad.ce_scale_init = 0.0;
  REQUIRE_THROWS_AS(
      st::train_siamese(pairs, st::SiameseLossMode::cross_entropy, bad, 1),
      st::ContractViolation);
  bad = hyper;
  bad.val_fraction = 1.0;
  REQUIRE_THROWS_AS(
      st::train_siamese(pairs, st::SiameseLossMode::contrastive, bad, 1),
      st::ContractViolation);
}

TEST_CASE("train_siamese with zero epochs returns the seeded initialization",
          "[backends]") {
  st::Rng rng(405);
  const std::vector<st::EmbeddingPair> pairs = cluster_pairs(rng, 8, 6, 0.3);
  st::SiameseHyper hyper;
  hyper.epochs = 0;
  hyper.hidden = {10, 4};

  const st::SiameseModel model = st::train_siamese(
      pairs, st::SiameseLossMode::cross_entropy, hyper, 777);
  const st::nn::DenseNet expected = st::nn::init_params(
      {6, 10, 4}, st::derive_seed(777, st::detail::kSaltInit));
  REQUIRE(nets_equal(model.trunk, expected));
  REQUIRE(model.ce_scale == hyper.ce_scale_init);
  REQUIRE(model.loss_mode == st::SiameseLossMode::cross_entropy);
}

TEST_CASE("siamese training separates cluster pairs under both losses",
          "[backends]") {
  st::Rng rng(406);
  const std::vector<st::EmbeddingPair> train = cluster_pairs(rng, 30, 6, 0.3);
  const std::vector<st::EmbeddingPair> eval = cluster_pairs(rng, 20, 6, 0.3);

  st::SiameseHyper hyper;
  hyper.epochs = 40;
  hyper.lr = 0.01;
  hyper.hidden = {12, 6};
  hyper.val_fraction = 0.25;

  st::SiameseHyper init_hyper = hyper;
  init_hyper.epochs = 0;

  for (const st::SiameseLossMode mode : {st::SiameseLossMode::contrastive,
                                         st::SiameseLossMode::cross_entropy}) {
    CAPTURE(st::siamese_loss_mode_name(mode));
    const st::SiameseModel init =
        st::train_siamese(train, mode, init_hyper, 99);
    const st::SiameseModel trained = st::train_siamese(train, mode, hyper, 99);

    // Training must beat the untrained initialization on held-out pairs,
    // and produce a clear score gap between same- and different-source.
    REQUIRE(mean_pair_loss(trained, hyper, eval) <
            mean_pair_loss(init, hyper, eval));
    REQUIRE(separation(trained, eval) > 0.25);

    // Scores are cosines of projections, so they stay in [-1, 1] up to
    // rounding.
    for (const st::EmbeddingPair& p : eval) {
      const double s = st::siamese_score(trained, p.a, p.b);
      REQUIRE(std::abs(s) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("cross-entropy siamese trains its logit scale", "[backends]") {
  st::Rng rng(407);
  const std::vector<st::EmbeddingPair> train = cluster_pairs(rng, 20, 6, 0.3);
  st::SiameseHyper hyper;
  hyper.epochs = 25;
  hyper.lr = 0.01;
  hyper.hidden = {8};
  const st::SiameseModel model =
      st::train_siamese(train, st::SiameseLossMode::cross_entropy, hyper, 31);
  REQUIRE(model.ce_scale != hyper.ce_scale_init);
  REQUIRE(std::isfinite(model.ce_scale));

  // The contrastive mode has no scale parameter to train.
  const st::SiameseModel fixed =
      st::train_siamese(train, st::SiameseLossMode::contrastive, hyper, 31);
  REQUIRE(fixed.ce_scale == hyper.ce_scale_init);
}

TEST_CASE("siamese training is deterministic in the seed", "[backends]") {
  st::Rng rng(408);
  const std::vector<st::EmbeddingPair> train = cluster_pairs(rng, 10, 5, 0.3);
  st::SiameseHyper hyper;
  hyper.epochs = 5;
  hyper.lr = 0.01;
  hyper.hidden = {6};

  testutil::TempDir dir("siamese_det");
  const st::SiameseModel a =
      st::train_siamese(train, st::SiameseLossMode::contrastive, hyper, 12);
  const st::SiameseModel b =
      st::train_siamese(train, st::SiameseLossMode::contrastive, hyper, 12);
  const st::SiameseModel c =
      st::train_siamese(train, st::SiameseLossMode::contrastive, hyper, 13);
  st::save_siamese(dir.file("a.json"), a);
  st::save_siamese(dir.file("b.json"), b);
  st::save_siamese(dir.file("c.json"), c);
  REQUIRE(st::read_text_file(dir.file("a.json")) ==
          st::read_text_file(dir.file("b.json")));
  REQUIRE(st::read_text_file(dir.file("a.json")) !=
          st::read_text_file(dir.file("c.json")));
}

TEST_CASE("train_mlp validates examples and hyperparameters", "[backends]") {
  st::Rng rng(409);
  const std::vector<std::string> ids = {"A01", "A02"};
  std::vector<st::LabeledExample> ex = labeled_clusters(rng, ids, 6, 4, 0.3);
  st::MlpHyper hyper;
  hyper.epochs = 1;
  hyper.hidden = 4;

  REQUIRE_THROWS_AS(st::train_mlp({}, ids, hyper, 1), st::ContractViolation);
  REQUIRE_THROWS_AS(st::train_mlp(ex, {"A01", "A01"}, hyper, 1),
                    st::ContractViolation);
  REQUIRE_THROWS_AS(st::train_mlp(ex, {"A01", ""}, hyper, 1),
                    st::ContractViolation);
  REQUIRE_THROWS_AS(st::train_mlp(ex, {"A01", "A02", "A03"}, hyper, 1),
                    st::ContractViolation);  // A03 has no examples

  std::vector<st::LabeledExample> one_class;
  for (const st::LabeledExample& e : ex) {
    if (e.label == "A01") one_class.push_back(e);
  }
  REQUIRE_THROWS_AS(st::train_mlp(one_class, {"A01"}, hyper, 1),
                    st::DegenerateInput);

  std::vector<st::LabeledExample> alien = ex;
  alien[0].label = "A99";
  REQUIRE_THROWS_AS(st::train_mlp(alien, ids, hyper, 1),
                    st::ContractViolation);

  std::vector<st::LabeledExample> ragged = ex;
  ragged[1].vec.push_back(0.0);
  REQUIRE_THROWS_AS(st::train_mlp(ragged, ids, hyper, 1),
                    st::ContractViolation);

  st::MlpHyper bad = hyper;
  bad.lr = 0.0;
  REQUIRE_THROWS_AS(st::train_mlp(ex, ids, bad, 1), st::ContractViolation);
  bad = hyper;
  bad.hidden = 0;
  REQUIRE_THROWS_AS(st::train_mlp(ex, ids, bad, 1), st::ContractViolation);
}

TEST_CASE("train_mlp memorizes separable clusters and generalizes",
          "[backends]") {
  st::Rng rng(410);
  const std::vector<std::string> ids = {"A01", "A02", "A03"};
  const std::vector<st::LabeledExample> train =
      labeled_clusters(rng, ids, 6, 20, 0.3);
  const std::vector<st::LabeledExample> holdout =
      labeled_clusters(rng, ids, 6, 10, 0.3);

  st::MlpHyper hyper;
  hyper.epochs = 80;
  hyper.lr = 0.01;
  hyper.hidden = 16;
  hyper.val_fraction = 0.0;  // pure memorization setup

  const st::MlpModel model = st::train_mlp(train, ids, hyper, 2026);

  const auto accuracy = [&](const std::vector<st::LabeledExample>& set) {
    std::size_t hits = 0;
    for (const st::LabeledExample& e : set) {
      std::vector<double> scores;
      for (const std::string& id : ids) {
        scores.push_back(st::mlp_score(model, e.vec, id));
      }
      if (ids[argmax_index(scores)] == e.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(set.size());
  };

  REQUIRE(accuracy(train) >= 0.95);
  REQUIRE(accuracy(holdout) >= 0.90);

  // Scores are posteriors from one shared softmax, so per-utterance they
  // sum to one across the enrolled classes.
  for (const st::LabeledExample& e : holdout) {
    double total = 0.0;
    for (const std::string& id : ids) {
      const double s = st::mlp_score(model, e.vec, id);
      REQUIRE(s >= 0.0);
      REQUIRE(s <= 1.0);
      total += s;
    }
    REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-12));
  }

  REQUIRE_THROWS_AS(st::mlp_score(model, holdout[0].vec, "A99"),
                    st::ContractViolation);
}

TEST_CASE("train_mlp with zero epochs returns the seeded initialization",
          "[backends]") {
  st::Rng rng(411);
  const std::vector<std::string> ids = {"A01", "A02"};
  const std::vector<st::LabeledExample> ex =
      labeled_clusters(rng, ids, 6, 5, 0.3);
  st::MlpHyper hyper;
  hyper.epochs = 0;
  hyper.hidden = 7;

  const st::MlpModel model = st::train_mlp(ex, ids, hyper, 555);
  const st::nn::DenseNet expected = st::nn::init_params(
      {6, 7, 2}, st::derive_seed(555, st::detail::kSaltInit));
  REQUIRE(nets_equal(model.net, expected));
  REQUIRE(model.class_ids == ids);
}

TEST_CASE("mlp training is deterministic in the seed", "[backends]") {
  st::Rng rng(412);
  const std::vector<std::string> ids = {"A01", "A02"};
  const std::vector<st::LabeledExample> ex =
      labeled_clusters(rng, ids, 5, 8, 0.3);
  st::MlpHyper hyper;
  hyper.epochs = 6;
  hyper.lr = 0.01;
  hyper.hidden = 6;

  testutil::TempDir dir("mlp_det");
  st::save_mlp(dir.file("a.json"), st::train_mlp(ex, ids, hyper, 21));
  st::save_mlp(dir.file("b.json"), st::train_mlp(ex, ids, hyper, 21));
  st::save_mlp(dir.file("c.json"), st::train_mlp(ex, ids, hyper, 22));
  REQUIRE(st::read_text_file(dir.file("a.json")) ==
          st::read_text_file(dir.file("b.json")));
  REQUIRE(st::read_text_file(dir.file("a.json")) !=
          st::read_text_file(dir.file("c.json")));
}

TEST_CASE("train_projector validates its hyperparameters", "[backends]") {
  st::Rng rng(413);
  const std::vector<std::string> ids = {"A01", "A02"};
  const std::vector<st::LabeledExample> ex =
      labeled_clusters(rng, ids, 6, 4, 0.3);
  st::ProjectorHyper hyper;
  hyper.epochs = 1;
  hyper.hidden = {4};
  hyper.embedding_dim = 4;

  st::ProjectorHyper bad = hyper;
  bad.lr = 0.0;
  REQUIRE_THROWS_AS(st::train_projector(ex, ids, bad, 1),
                    st::ContractViolation);
  bad = hyper;
  bad.embedding_dim = 0;
  REQUIRE_THROWS_AS(st::train_projector(ex, ids, bad, 1),
                    st::ContractViolation);
  REQUIRE_THROWS_AS(st::train_projector({}, ids, hyper, 1),
                    st::ContractViolation);
}

TEST_CASE("projector embeddings align with their class prototypes",
          "[backends]") {
  st::Rng rng(414);
  const std::vector<std::string> ids = {"A01", "A02", "A03"};
  const std::vector<st::LabeledExample> train =
      labeled_clusters(rng, ids, 10, 20, 0.3);
  const std::vector<st::LabeledExample> holdout =
      labeled_clusters(rng, ids, 10, 10, 0.3);

  st::ProjectorHyper hyper;
  hyper.epochs = 60;
  hyper.lr = 0.005;
  hyper.hidden = {16};
  hyper.embedding_dim = 8;
  hyper.margin = 0.3;

  const st::ProjectorModel model = st::train_projector(train, ids, hyper, 42);

  REQUIRE(model.class_ids == ids);
  REQUIRE(model.head.class_weights.rows == ids.size());
  REQUIRE(model.head.class_weights.cols == hyper.embedding_dim);

  // Head rows are renormalized after every step, so they stay unit length.
  for (std::size_t r = 0; r < model.head.class_weights.rows; ++r) {
    REQUIRE_THAT(st::norm(model.head.class_weights.row(r)),
                 Catch::Matchers::WithinAbs(1.0, 1e-9));
  }

  const auto accuracy = [&](const std::vector<st::LabeledExample>& set) {
    std::size_t hits = 0;
    for (const st::LabeledExample& e : set) {
      const std::vector<double> emb = st::project(model, e.vec);
      REQUIRE(emb.size() == hyper.embedding_dim);
      std::vector<double> cosines;
      for (std::size_t r = 0; r < model.head.class_weights.rows; ++r) {
        cosines.push_back(
            st::cosine_score(emb, model.head.class_weights.row(r)));
      }
      if (ids[argmax_index(cosines)] == e.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(set.size());
  };

  REQUIRE(accuracy(train) >= 0.90);
  REQUIRE(accuracy(holdout) >= 0.80);
}

TEST_CASE("train_projector with zero epochs returns the seeded initialization",
          "[backends]") {
  st::Rng rng(415);
  const std::vector<std::string> ids = {"A01", "A02"};
  const std::vector<st::LabeledExample> ex =
      labeled_clusters(rng, ids, 6, 5, 0.3);
  st::ProjectorHyper hyper;
  hyper.epochs = 0;
  hyper.hidden = {9};
  hyper.embedding_dim = 5;
  hyper.scale = 12.0;
  hyper.margin = 0.4;

  const st::ProjectorModel model = st::train_projector(ex, ids, hyper, 888);
  const st::nn::DenseNet expected_net = st::nn::init_params(
      {6, 9, 5}, st::derive_seed(888, st::detail::kSaltInit));
  const st::nn::AamHead expected_head = st::nn::init_aam_head(
      2, 5, 12.0, 0.4, st::derive_seed(888, st::detail::kSaltHead));
  REQUIRE(nets_equal(model.net, expected_net));
  REQUIRE(model.head.class_weights.data == expected_head.class_weights.data);
  REQUIRE(model.head.scale == 12.0);
  REQUIRE(model.head.margin == 0.4);
}

TEST_CASE("projector training is deterministic in the seed", "[backends]") {
  st::Rng rng(416);
  const std::vector<std::string> ids = {"A01", "A02"};
  const std::vector<st::LabeledExample> ex =
      labeled_clusters(rng, ids, 5, 8, 0.3);
  st::ProjectorHyper hyper;
  hyper.epochs = 4;
  hyper.lr = 0.005;
  hyper.hidden = {6};
  hyper.embedding_dim = 4;

  testutil::TempDir dir("proj_det");
  st::save_projector(dir.file("a.json"),
                     st::train_projector(ex, ids, hyper, 71));
  st::save_projector(dir.file("b.json"),
                     st::train_projector(ex, ids, hyper, 71));
  st::save_projector(dir.file("c.json"),
                     st::train_projector(ex, ids, hyper, 72));
  REQUIRE(st::read_text_file(dir.file("a.json")) ==
          st::read_text_file(dir.file("b.json")));
  REQUIRE(st::read_text_file(dir.file("a.json")) !=
          st::read_text_file(dir.file("c.json")));
}
