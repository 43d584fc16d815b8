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

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "sourcetrace/error.hpp"
#include "sourcetrace/linalg.hpp"
#include "sourcetrace/rng.hpp"

using namespace sourcetrace;

TEST_CASE("mt19937_64 output is pinned by the standard") {
  // The whole determinism story rests on this: a default-seeded
  // mt19937_64's 10000th draw is specified exactly.
  std::mt19937_64 engine;
  std::uint64_t v = 0;
  for (int i = 0; i < 10000; ++i) v = engine();
  REQUIRE(v == 9981545732273789042ULL);
}

TEST_CASE("splitmix64 matches the reference finalizer") {
  REQUIRE(splitmix64(0) == 16294208416658607535ULL);
  REQUIRE(splitmix64(42) == 13679457532755275413ULL);
}

TEST_CASE("fnv1a matches the published 64-bit vectors") {
  REQUIRE(fnv1a("") == 14695981039346656037ULL);
  REQUIRE(fnv1a("a") == 12638187200555641996ULL);
}

TEST_CASE("derive_seed separates salts") {
  REQUIRE(derive_seed(7, 1) != derive_seed(7, 2));
  REQUIRE(derive_seed(7, 1) == derive_seed(7, 1));
}

TEST_CASE("Rng reproduces bit-identically per seed") {
  Rng a(123);
  Rng b(123);
  Rng c(124);
  bool any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const std::uint64_t va = a.next_u64();
    REQUIRE(va == b.next_u64());
    if (va != c.next_u64()) any_diff = true;
  }
  REQUIRE(any_diff);
}

TEST_CASE("uniform stays in [0, 1) and fills the range") {
  Rng rng(5);
  double lo = 1.0;
  double hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  REQUIRE(lo < 0.01);
  REQUIRE(hi > 0.99);
  const double x = rng.uniform(-3.0, 2.0);
  REQUIRE(x >= -3.0);
  REQUIRE(x < 2.0);
}

TEST_CASE("below covers its range and rejects zero") {
  Rng rng(9);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t v = rng.below(7);
    REQUIRE(v < 7);
    seen.insert(v);
  }
  REQUIRE(seen.size() == 7);
  REQUIRE_THROWS_AS(rng.below(0), ContractViolation);
}

TEST_CASE("gaussian has roughly standard moments") {
  Rng rng(11);
  const int n = 100000;
  double sum = 0.0;
  double sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng.gaussian();
    sum += g;
    sum2 += g * g;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  REQUIRE(std::fabs(mean) < 0.02);
  REQUIRE(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("gaussian consumes exactly two uniforms") {
  // Stream-position stability: code that swaps a gaussian draw for two
  // uniform draws must leave the generator in the same state.
  Rng a(77);
  Rng b(77);
  (void)a.gaussian();
  (void)b.uniform();
  (void)b.uniform();
  REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("shuffle and permutation produce permutations") {
  Rng rng(13);
  std::vector<int> v = {1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<int> orig = v;
  rng.shuffle(v);
  std::vector<int> sorted_v = v;
  std::sort(sorted_v.begin(), sorted_v.end());
  REQUIRE(sorted_v == orig);

  const std::vector<std::size_t> p = rng.permutation(20);
  REQUIRE(p.size() == 20);
  std::set<std::size_t> unique(p.begin(), p.end());
  REQUIRE(unique.size() == 20);
  REQUIRE(*unique.rbegin() == 19);
}

TEST_CASE("sample_without_replacement draws distinct in-range indices") {
  Rng rng(17);
  const std::vector<std::size_t> s = rng.sample_without_replacement(50, 10);
  REQUIRE(s.size() == 10);
  std::set<std::size_t> unique(s.begin(), s.end());
  REQUIRE(unique.size() == 10);
  for (std::size_t v : s) REQUIRE(v < 50);

  Rng rng2(17);
  REQUIRE(rng2.sample_without_replacement(50, 10) == s);
  REQUIRE_THROWS_AS(rng.sample_without_replacement(3, 4), ContractViolation);
}

TEST_CASE("dot, norms, axpy agree with hand values") {
  const std::vector<double> a = {1.0, 2.0, 3.0};
  const std::vector<double> b = {4.0, -5.0, 6.0};
  REQUIRE(dot(a, b) == 12.0);
  REQUIRE(squared_norm(a) == 14.0);
  REQUIRE(norm(b) == std::sqrt(77.0));

  std::vector<double> y = {1.0, 1.0, 1.0};
  axpy(2.0, a, y);
  REQUIRE(y == std::vector<double>{3.0, 5.0, 7.0});
}

TEST_CASE("matvec and its transpose agree with hand values") {
  Matrix m(2, 3);
  m.data = {1, 2, 3, 4, 5, 6};
  const std::vector<double> x = {1.0, 0.0, -1.0};
  REQUIRE(matvec(m, x) == std::vector<double>{-2.0, -2.0});
  const std::vector<double> g = {1.0, 2.0};
  REQUIRE(matvec_transposed(m, g) == std::vector<double>{9.0, 12.0, 15.0});
}

TEST_CASE("add_outer accumulates g x^T") {
  Matrix acc(2, 2);
  acc.data = {1, 0, 0, 1};
  add_outer(acc, std::vector<double>{2.0, 3.0}, std::vector<double>{1.0, -1.0});
  REQUIRE(acc.data == std::vector<double>{3.0, -2.0, 3.0, -2.0});
}

TEST_CASE("normalized rejects the zero vector") {
  const std::vector<double> v = {3.0, 4.0};
  const std::vector<double> n = normalized(v);
  REQUIRE(n[0] == Catch::Approx(0.6).margin(1e-15));
  REQUIRE(n[1] == Catch::Approx(0.8).margin(1e-15));
  REQUIRE_THROWS_AS(normalized(std::vector<double>{0.0, 0.0}),
                    DegenerateInput);
}

TEST_CASE("all_finite flags infinities and NaN") {
  REQUIRE(all_finite(std::vector<double>{1.0, -2.0}));
  REQUIRE_FALSE(all_finite(std::vector<double>{
      1.0, std::numeric_limits<double>::infinity()}));
  REQUIRE_FALSE(all_finite(std::vector<double>{
      std::numeric_limits<double>::quiet_NaN()}));
}
