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

#include <cfloat>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "sourcetrace/embedding_store.hpp"
#include "sourcetrace/error.hpp"
#include "sourcetrace/rng.hpp"
#include "sourcetrace/text_io.hpp"
#include "test_util.hpp"

using namespace sourcetrace;
using testutil::TempDir;

namespace {

EmbeddingSet small_set() {
  EmbeddingSet set;
  set.append("utt_a", std::vector<double>{1.0, -2.5, 0.25});
  set.append("utt_b", std::vector<double>{0.5, 3.0, -1.0});
  return set;
}

std::string read_bytes(const std::string& path) {
  return read_text_file(path);
}

}  // namespace

TEST_CASE("embedding files are header plus packed float32 rows") {
  TempDir dir("store_size");
  const std::string path = dir.file("e.bin");

  write_embeddings(small_set(), path);
  REQUIRE(std::filesystem::file_size(path) == 20 + 2 * 3 * 4);

  EmbeddingSet empty;
  write_embeddings(empty, dir.file("empty.bin"));
  REQUIRE(std::filesystem::file_size(dir.file("empty.bin")) == 20);
  const EmbeddingSet back = read_embeddings(dir.file("empty.bin"));
  REQUIRE(back.count() == 0);
  REQUIRE(back.dim == 0);
}

TEST_CASE("values already on the float32 grid round-trip bitwise") {
  TempDir dir("store_grid");
  Rng rng(101);
  EmbeddingSet set;
  for (int r = 0; r < 20; ++r) {
    std::vector<double> row(7);
    for (double& v : row) {
      // Snap to the float32 grid first; the file then holds it exactly.
      v = static_cast<double>(static_cast<float>(10.0 * rng.gaussian()));
    }
    set.append("u" + std::to_string(r), row);
  }
  const std::string path = dir.file("grid.bin");
  write_embeddings(set, path);
  const EmbeddingSet back = read_embeddings(path);
  REQUIRE(back.dim == set.dim);
  REQUIRE(back.ids == set.ids);
  REQUIRE(back.values == set.values);

  // Off-grid values load back as their nearest float32.
  EmbeddingSet off;
  off.append("x", std::vector<double>{0.1, 1.0 / 3.0});
  write_embeddings(off, dir.file("off.bin"));
  const EmbeddingSet offback = read_embeddings(dir.file("off.bin"));
  REQUIRE(offback.values[0] == static_cast<double>(0.1f));
  REQUIRE(offback.values[1] == static_cast<double>(static_cast<float>(1.0 / 3.0)));
}

TEST_CASE("every single-byte corruption parses totally") {
  TempDir dir("store_fuzz");
  const std::string path = dir.file("f.bin");
  write_embeddings(small_set(), path);
  const std::string good = read_bytes(path);
  REQUIRE(good.size() == 44);

  // Flip each byte to several values; the reader must either succeed or
  // raise a typed ParseError, never anything else.
  for (std::size_t pos = 0; pos < good.size(); ++pos) {
    for (unsigned char repl : {0x00, 0xff, 0x80, 0x7f}) {
      std::string bad = good;
      if (static_cast<unsigned char>(bad[pos]) == repl) continue;
      bad[pos] = static_cast<char>(repl);
      write_text_file(path, bad);
      try {
        (void)read_embeddings(path);
      } catch (const ParseError&) {
        // expected shape of failure
      }
      // any other exception type escapes and fails the test
    }
  }

  // Truncations at every prefix length.
  for (std::size_t len = 0; len < good.size(); ++len) {
    write_text_file(path, good.substr(0, len));
    REQUIRE_THROWS_AS(read_embeddings(path), ParseError);
  }
}

TEST_CASE("parse failures carry their specific kind") {
  TempDir dir("store_kinds");
  const std::string path = dir.file("k.bin");
  write_embeddings(small_set(), path);
  const std::string good = read_bytes(path);

  const auto kind_of = [&](const std::string& bytes) {
    write_text_file(path, bytes);
    try {
      (void)read_embeddings(path);
    } catch (const ParseError& e) {
      return e.kind();
    }
    FAIL("expected a ParseError");
    return ParseError::Kind::malformed;
  };

  std::string bad_magic = good;
  bad_magic[0] = 'B';
  REQUIRE(kind_of(bad_magic) == ParseError::Kind::bad_magic);

  std::string bad_version = good;
  bad_version[4] = 2;
  REQUIRE(kind_of(bad_version) == ParseError::Kind::bad_version);

  REQUIRE(kind_of(good.substr(0, 2)) == ParseError::Kind::truncated);
  REQUIRE(kind_of(good.substr(0, 10)) == ParseError::Kind::truncated);
  REQUIRE(kind_of(good.substr(0, 30)) == ParseError::Kind::truncated);
  REQUIRE(kind_of(good + "x") == ParseError::Kind::trailing_bytes);

  std::string non_finite = good;
  // +inf float32, little endian, over the first payload value.
  non_finite[20] = 0x00;
  non_finite[21] = 0x00;
  non_finite[22] = static_cast<char>(0x80);
  non_finite[23] = static_cast<char>(0x7f);
  REQUIRE(kind_of(non_finite) == ParseError::Kind::non_finite);

  // Sidecar row-count mismatch.
  write_text_file(path, good);
  write_text_file(ids_sidecar_path(path), "only_one\n");
  try {
    (void)read_embeddings(path);
    FAIL("expected a ParseError");
  } catch (const ParseError& e) {
    REQUIRE(e.kind() == ParseError::Kind::malformed);
  }

  // Missing files are I/O problems, not parse problems.
  REQUIRE_THROWS_AS(read_embeddings(dir.file("absent.bin")), IoError);
  write_embeddings(small_set(), path);
  std::filesystem::remove(ids_sidecar_path(path));
  REQUIRE_THROWS_AS(read_embeddings(path), IoError);
}

TEST_CASE("writes reject payloads float32 cannot hold") {
  TempDir dir("store_reject");
  EmbeddingSet nan_set;
  nan_set.append("u", std::vector<double>{std::numeric_limits<double>::quiet_NaN()});
  REQUIRE_THROWS_AS(write_embeddings(nan_set, dir.file("a.bin")),
                    ValidationError);

  EmbeddingSet huge;
  huge.append("u", std::vector<double>{2.0 * static_cast<double>(FLT_MAX)});
  REQUIRE_THROWS_AS(write_embeddings(huge, dir.file("b.bin")),
                    ValidationError);

  EmbeddingSet dup;
  dup.append("same", std::vector<double>{1.0});
  dup.append("same", std::vector<double>{2.0});
  REQUIRE_THROWS_AS(write_embeddings(dup, dir.file("c.bin")),
                    ValidationError);

  EmbeddingSet tabbed;
  tabbed.append("has\ttab", std::vector<double>{1.0});
  REQUIRE_THROWS_AS(write_embeddings(tabbed, dir.file("d.bin")),
                    ValidationError);
}

TEST_CASE("manifest lines round-trip through text") {
  TempDir dir("manifest_rt");
  std::vector<ManifestRecord> records;
  ManifestRecord r;
  r.utt_id = "u1";
  r.attack_id = "A01";
  r.am_id = "AM01";
  r.vm_id = "VM01";
  r.am_arch = "AMARCH01";
  r.vm_arch = "VMARCH01";
  r.speaker_id = "spk1";
  r.partition = Partition::train;
  r.content = Content::co;
  records.push_back(r);
  r.utt_id = "u2";
  r.partition = Partition::fingerprint;
  r.content = Content::nc;
  records.push_back(r);
  r.utt_id = "u3";
  r.partition = Partition::trial;
  records.push_back(r);

  const std::string path = dir.file("m.tsv");
  write_manifest(records, path);
  const std::vector<ManifestRecord> back = read_manifest(path);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    REQUIRE(manifest_line(back[i]) == manifest_line(records[i]));
  }
}

TEST_CASE("manifest parse errors name the line") {
  const std::string bad_fields =
      "u1\tA01\tAM01\tVM01\tAMARCH01\tVMARCH01\tspk1\ttrain\tco\n"
      "u2\tA01\tAM01\n";
  try {
    (void)parse_manifest(bad_fields, "m.tsv");
    FAIL("expected a ParseError");
  } catch (const ParseError& e) {
    REQUIRE(std::string(e.what()).find("m.tsv:2") != std::string::npos);
  }

  const std::string empty_field =
      "u1\t\tAM01\tVM01\tAMARCH01\tVMARCH01\tspk1\ttrain\tco\n";
  REQUIRE_THROWS_AS(parse_manifest(empty_field, "m.tsv"), ParseError);

  const std::string bad_partition =
      "u1\tA01\tAM01\tVM01\tAMARCH01\tVMARCH01\tspk1\televation\tco\n";
  REQUIRE_THROWS_AS(parse_manifest(bad_partition, "m.tsv"), ParseError);

  const std::string bad_content =
      "u1\tA01\tAM01\tVM01\tAMARCH01\tVMARCH01\tspk1\ttrain\txx\n";
  REQUIRE_THROWS_AS(parse_manifest(bad_content, "m.tsv"), ParseError);
}

TEST_CASE("join validation pairs manifest rows with embedding rows") {
  EmbeddingSet set = small_set();
  std::vector<ManifestRecord> records;
  for (const std::string id : {"utt_a", "utt_b"}) {
    ManifestRecord r;
    r.utt_id = id;
    r.attack_id = "A01";
    r.am_id = "AM01";
    r.vm_id = "VM01";
    r.am_arch = "AR1";
    r.vm_arch = "VR1";
    r.speaker_id = "s";
    r.partition = Partition::trial;
    r.content = Content::nc;
    records.push_back(r);
  }

  const Dataset ds = validate_manifest(records, set);
  REQUIRE(ds.embedding_of("utt_b")[1] == set.row(1)[1]);
  REQUIRE(ds.record_of_utt.at("utt_a") == 0);
  REQUIRE_THROWS_AS(ds.embedding_of("nope"), ValidationError);

  auto dup = records;
  dup.push_back(records[0]);
  REQUIRE_THROWS_AS(validate_manifest(dup, set), ValidationError);

  auto extra = records;
  ManifestRecord ghost = records[0];
  ghost.utt_id = "utt_ghost";
  extra.push_back(ghost);
  try {
    (void)validate_manifest(extra, set);
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    REQUIRE(std::string(e.what()).find("utt_ghost") != std::string::npos);
  }

  EmbeddingSet widened = set;
  widened.append("utt_c", std::vector<double>{0.0, 0.0, 1.0});
  try {
    (void)validate_manifest(records, widened);
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    REQUIRE(std::string(e.what()).find("utt_c") != std::string::npos);
  }
}
