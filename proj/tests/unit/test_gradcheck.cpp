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

#include <cmath>
#include <span>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "sourcetrace/error.hpp"
#include "sourcetrace/gradcheck.hpp"

using namespace sourcetrace;
using namespace sourcetrace::nn;

TEST_CASE("central differences recover a quadratic's derivative") {
  const auto square = [](std::span<const double> p) { return p[0] * p[0]; };
  const std::vector<double> at = {3.0};
  const std::vector<double> g = finite_difference_grad(square, at, 1e-4);
  REQUIRE(g.size() == 1);
  REQUIRE(g[0] == Catch::Approx(6.0).margin(1e-6));
}

TEST_CASE("central differences on a constant are zero") {
  const auto constant = [](std::span<const double>) { return 4.2; };
  const std::vector<double> at = {1.0, -2.0, 0.0};
  const std::vector<double> g = finite_difference_grad(constant, at, 1e-4);
  for (double v : g) REQUIRE(v == 0.0);
}

TEST_CASE("finite differences reject bad step sizes and objectives") {
  const auto square = [](std::span<const double> p) { return p[0] * p[0]; };
  const std::vector<double> at = {1.0};
  REQUIRE_THROWS_AS(finite_difference_grad(square, at, 0.0),
                    ContractViolation);
  REQUIRE_THROWS_AS(finite_difference_grad(square, at, -1e-4),
                    ContractViolation);

  const auto blows_up = [](std::span<const double> p) {
    return 1.0 / (p[0] - p[0]);  // inf
  };
  REQUIRE_THROWS_AS(finite_difference_grad(blows_up, at, 1e-4), NumericError);
}

TEST_CASE("relative error floors near-zero gradients") {
  REQUIRE(gradient_rel_error(2.0, 2.0) == 0.0);
  REQUIRE(gradient_rel_error(2.0, 1.0) == Catch::Approx(0.5));
  // Two tiny values differ hugely in relative terms but are both noise.
  REQUIRE(gradient_rel_error(1e-12, 5e-12) < 1e-8);
}

TEST_CASE("all four loss gradients pass a seeded spot check") {
  const auto reports = run_loss_gradchecks(10, 20260819, 1e-4);
  REQUIRE(reports.size() == 4);
  for (const auto& r : reports) {
    INFO(r.loss_name << " max rel error " << r.max_rel_error);
    REQUIRE(r.points == 10);
    REQUIRE(r.pass);
    REQUIRE(r.max_rel_error < r.tolerance);
  }
  REQUIRE_THROWS_AS(run_loss_gradchecks(0, 1, 1e-4), ContractViolation);
}
