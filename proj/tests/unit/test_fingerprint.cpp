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
#include <span>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "sourcetrace/error.hpp"
#include "sourcetrace/fingerprint.hpp"
#include "sourcetrace/rng.hpp"
#include "sourcetrace/text_io.hpp"
#include "test_util.hpp"

using namespace sourcetrace;
using testutil::TempDir;

namespace {

std::vector<std::span<const double>> views(
    const std::vector<std::vector<double>>& rows) {
  std::vector<std::span<const double>> v;
  for (const auto& r : rows) v.emplace_back(r);
  return v;
}

// Compensated summation oracle for the mean, one coordinate at a time.
std::vector<double> kahan_mean(const std::vector<std::vector<double>>& rows) {
  const std::size_t dim = rows.front().size();
  std::vector<double> mean(dim, 0.0);
  for (std::size_t d = 0; d < dim; ++d) {
    double sum = 0.0, comp = 0.0;
    for (const auto& r : rows) {
      const double y = r[d] - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    mean[d] = sum / static_cast<double>(rows.size());
  }
  return mean;
}

}  // namespace

TEST_CASE("a single enrollment is the fingerprint itself") {
  const std::vector<std::vector<double>> rows = {{0.3, -1.7, 2.9}};
  const Fingerprint fp = build_fingerprint(views(rows), "A01", Content::nc);
  REQUIRE(fp.vec == rows[0]);  // bitwise: sum of one, divided by one
  REQUIRE(fp.enrollment_count == 1);
  REQUIRE(fp.attack_id == "A01");
}

TEST_CASE("the fingerprint is the plain mean") {
  const std::vector<std::vector<double>> rows = {{1.0, 0.0}, {0.0, 1.0}};
  const Fingerprint fp = build_fingerprint(views(rows), "A", Content::co);
  REQUIRE(fp.vec == std::vector<double>{0.5, 0.5});

  // Powers of two average exactly.
  const std::vector<std::vector<double>> pow2 = {
      {2.0, 8.0}, {4.0, 16.0}, {8.0, 32.0}, {2.0, 8.0}};
  const Fingerprint fp2 = build_fingerprint(views(pow2), "A", Content::nc);
  REQUIRE(fp2.vec == std::vector<double>{4.0, 16.0});
}

TEST_CASE("naive averaging stays near a compensated oracle") {
  Rng rng(71);
  for (int inst = 0; inst < 20; ++inst) {
    std::vector<std::vector<double>> rows(50, std::vector<double>(16));
    for (auto& r : rows) {
      for (double& v : r) v = 100.0 * rng.gaussian();
    }
    const Fingerprint fp = build_fingerprint(views(rows), "A", Content::nc);
    const std::vector<double> oracle = kahan_mean(rows);
    for (std::size_t d = 0; d < oracle.size(); ++d) {
      REQUIRE(fp.vec[d] == Catch::Approx(oracle[d]).margin(1e-12));
    }
  }
}

TEST_CASE("enrollment order does not move the mean materially") {
  Rng rng(72);
  std::vector<std::vector<double>> rows(30, std::vector<double>(8));
  for (auto& r : rows) {
    for (double& v : r) v = rng.gaussian();
  }
  const Fingerprint fwd = build_fingerprint(views(rows), "A", Content::nc);
  std::reverse(rows.begin(), rows.end());
  const Fingerprint rev = build_fingerprint(views(rows), "A", Content::nc);
  for (std::size_t d = 0; d < fwd.vec.size(); ++d) {
    REQUIRE(fwd.vec[d] == Catch::Approx(rev.vec[d]).margin(1e-12));
  }
}

TEST_CASE("fingerprint construction rejects bad input") {
  REQUIRE_THROWS_AS(build_fingerprint({}, "A", Content::nc), DegenerateInput);

  const std::vector<std::vector<double>> mixed = {{1.0, 2.0}, {1.0}};
  REQUIRE_THROWS_AS(build_fingerprint(views(mixed), "A", Content::nc),
                    ContractViolation);

  const std::vector<std::vector<double>> infinite = {
      {std::numeric_limits<double>::infinity(), 0.0}};
  REQUIRE_THROWS_AS(build_fingerprint(views(infinite), "A", Content::nc),
                    NumericError);
}

TEST_CASE("banks round-trip through disk") {
  TempDir dir("bank_rt");
  FingerprintBank bank;
  bank.dim = 3;
  Fingerprint fp;
  fp.attack_id = "A01";
  fp.enrollment_count = 5;
  fp.content = Content::nc;
  fp.vec = {0.25, -0.5, 1.0};  // exactly representable in float32
  bank.entries.push_back(fp);
  fp.attack_id = "A02";
  fp.enrollment_count = 17;
  fp.content = Content::co;
  fp.vec = {1.5, 2.0, -3.75};
  bank.entries.push_back(fp);

  const std::string path = dir.file("bank.bin");
  write_bank(path, bank);
  const FingerprintBank back = read_bank(path);
  REQUIRE(back.dim == 3);
  REQUIRE(back.entries.size() == 2);
  REQUIRE(back.find("A01") != nullptr);
  REQUIRE(back.find("A01")->vec == bank.entries[0].vec);
  REQUIRE(back.find("A01")->enrollment_count == 5);
  REQUIRE(back.find("A02")->content == Content::co);
  REQUIRE(back.find("A03") == nullptr);
}

TEST_CASE("bank metadata must match the stored rows") {
  TempDir dir("bank_meta");
  FingerprintBank bank;
  bank.dim = 2;
  Fingerprint fp;
  fp.attack_id = "A01";
  fp.enrollment_count = 1;
  fp.vec = {1.0, 2.0};
  bank.entries.push_back(fp);
  const std::string path = dir.file("bank.bin");
  write_bank(path, bank);

  // Meta row for an attack that is not in the bank.
  write_text_file(bank_meta_path(path),
                  "attack_id\tr\tcontent\nA09\t1\tnc\n");
  REQUIRE_THROWS_AS(read_bank(path), ValidationError);

  // Extra meta row alongside the real one.
  write_text_file(bank_meta_path(path),
                  "attack_id\tr\tcontent\nA01\t1\tnc\nA09\t1\tnc\n");
  REQUIRE_THROWS_AS(read_bank(path), ValidationError);

  // Structurally broken meta rows.
  write_text_file(bank_meta_path(path), "attack_id\tr\tcontent\nA01\t1\n");
  REQUIRE_THROWS_AS(read_bank(path), ParseError);
  write_text_file(bank_meta_path(path),
                  "attack_id\tr\tcontent\nA01\tlots\tnc\n");
  REQUIRE_THROWS_AS(read_bank(path), ParseError);
  write_text_file(bank_meta_path(path), "wrong header\n");
  REQUIRE_THROWS_AS(read_bank(path), ParseError);

  // Zero enrollment count fails bank validation.
  write_text_file(bank_meta_path(path), "attack_id\tr\tcontent\nA01\t0\tnc\n");
  REQUIRE_THROWS_AS(read_bank(path), ValidationError);

  // Validation also guards writes.
  FingerprintBank dup = bank;
  dup.entries.push_back(bank.entries[0]);
  REQUIRE_THROWS_AS(write_bank(dir.file("dup.bin"), dup), ValidationError);
  FingerprintBank wrong_dim = bank;
  wrong_dim.dim = 3;
  REQUIRE_THROWS_AS(write_bank(dir.file("wd.bin"), wrong_dim),
                    ValidationError);
}
