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

#include <bit>
#include <cfloat>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sourcetrace/error.hpp"
#include "sourcetrace/linalg.hpp"
#include "sourcetrace/text_io.hpp"

namespace sourcetrace {

// ---------------------------------------------------------------------------
// Embedding sets
// ---------------------------------------------------------------------------

// A matrix of row embeddings with one utterance id per row.  Values are
// held as doubles in memory; the on-disk payload is float32, so a file
// round-trip quantizes to the float32 grid.
struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<std::string> ids;   // one per row, unique
  std::vector<double> values;     // ids.size() * dim, row-major

  std::size_t count() const { return ids.size(); }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values.data() + i * dim, dim);
  }

  void append(const std::string& id, std::span<const double> v) {
    if (dim == 0) dim = v.size();
    if (v.size() != dim) {
      throw ContractViolation("EmbeddingSet::append: dimension mismatch");
    }
    ids.push_back(id);
    values.insert(values.end(), v.begin(), v.end());
  }
};

inline void validate_embedding_set(const EmbeddingSet& set) {
  if (set.values.size() != set.count() * set.dim) {
    throw ValidationError("embedding set: value buffer does not match shape");
  }
  if (set.count() > 0 && set.dim == 0) {
    throw ValidationError("embedding set: rows with zero dimension");
  }
  std::set<std::string> seen;
  for (const std::string& id : set.ids) {
    if (id.empty()) throw ValidationError("embedding set: empty utterance id");
    if (id.find('\t') != std::string::npos ||
        id.find('\n') != std::string::npos) {
      throw ValidationError("embedding set: id contains tab/newline: " + id);
    }
    if (!seen.insert(id).second) {
      throw ValidationError("embedding set: duplicate utterance id: " + id);
    }
  }
  if (!all_finite(set.values)) {
    throw ValidationError("embedding set: non-finite value");
  }
}

// ---------------------------------------------------------------------------
// Binary file format
//
//   magic   "ATKE"            4 bytes
//   version u32 = 1           little endian
//   dim     u32               little endian
//   count   u64               little endian
//   payload count*dim float32 little endian, row-major
//
// The file is the format: an empty set is exactly the 20-byte header.
// Row ids live in a sidecar "<path>.ids" (one id per line, row order).
// ---------------------------------------------------------------------------

inline constexpr char kEmbeddingMagic[4] = {'A', 'T', 'K', 'E'};
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace detail

inline std::string ids_sidecar_path(const std::string& path) {
  return path + ".ids";
}

// Serializes the set; refuses rows that cannot survive the float32
// payload (non-finite, or magnitude beyond float range).
inline void write_embeddings(const EmbeddingSet& set,
                             const std::string& path) {
  validate_embedding_set(set);
  for (double v : set.values) {
    if (std::fabs(v) > static_cast<double>(FLT_MAX)) {
      throw ValidationError(
          "write_embeddings: value exceeds float32 range: " + format_full(v));
    }
  }
  std::string out;
  out.reserve(20 + set.values.size() * 4);
  out.append(kEmbeddingMagic, 4);
  detail::put_u32(out, kEmbeddingFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(set.dim));
  detail::put_u64(out, static_cast<std::uint64_t>(set.count()));
  for (double v : set.values) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    detail::put_u32(out, bits);
  }
  write_text_file(path, out);

  std::string ids;
  for (const std::string& id : set.ids) {
    ids += id;
    ids += '\n';
  }
  write_text_file(ids_sidecar_path(path), ids);
}

// Total parse: any byte stream either becomes a valid set or raises a
// typed ParseError (bad magic / bad version / truncation / trailing bytes
// / non-finite payload) — never undefined behavior.
inline EmbeddingSet read_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embeddings file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < 4) {
    throw ParseError(ParseError::Kind::truncated,
                     path + ": too short for magic");
  }
  if (std::memcmp(bytes.data(), kEmbeddingMagic, 4) != 0) {
    throw ParseError(ParseError::Kind::bad_magic,
                     path + ": bad magic (not an embedding file)");
  }
  if (bytes.size() < 20) {
    throw ParseError(ParseError::Kind::truncated,
                     path + ": truncated header");
  }
  const std::uint32_t version = detail::get_u32(p + 4);
  if (version != kEmbeddingFormatVersion) {
    throw ParseError(ParseError::Kind::bad_version,
                     path + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t dim = detail::get_u32(p + 8);
  const std::uint64_t count = detail::get_u64(p + 12);
  if (count > 0 && dim == 0) {
    throw ParseError(ParseError::Kind::malformed,
                     path + ": rows with zero dimension");
  }
  if (dim != 0 && count > (UINT64_MAX / 4) / dim) {
    throw ParseError(ParseError::Kind::malformed,
                     path + ": payload size overflows");
  }
  const std::uint64_t payload = 4ULL * dim * count;
  if (bytes.size() < 20 + payload) {
    throw ParseError(ParseError::Kind::truncated,
                     path + ": truncated payload");
  }
  if (bytes.size() > 20 + payload) {
    throw ParseError(ParseError::Kind::trailing_bytes,
                     path + ": trailing bytes after payload");
  }

  EmbeddingSet set;
  set.dim = dim;
  set.values.resize(static_cast<std::size_t>(count) * dim);
  for (std::size_t i = 0; i < set.values.size(); ++i) {
    const std::uint32_t bits = detail::get_u32(p + 20 + 4 * i);
    const float f = std::bit_cast<float>(bits);
    if (!std::isfinite(f)) {
      throw ParseError(ParseError::Kind::non_finite,
                       path + ": non-finite value at index " +
                           std::to_string(i));
    }
    set.values[i] = static_cast<double>(f);
  }

  const std::string ids_path = ids_sidecar_path(path);
  std::ifstream ids_in(ids_path, std::ios::binary);
  if (!ids_in) throw IoError("cannot open id sidecar: " + ids_path);
  std::ostringstream ids_ss;
  ids_ss << ids_in.rdbuf();
  set.ids = split_lines(ids_ss.str());
  if (set.ids.size() != count) {
    throw ParseError(ParseError::Kind::malformed,
                     ids_path + ": id count does not match row count");
  }
  validate_embedding_set(set);
  return set;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

enum class Partition { train, fingerprint, trial };
enum class Content { co, nc };

inline std::string partition_name(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::fingerprint: return "fingerprint";
    case Partition::trial: return "trial";
  }
  throw ContractViolation("partition_name: bad enum");
}

inline Partition partition_from_name(const std::string& s) {
  if (s == "train") return Partition::train;
  if (s == "fingerprint") return Partition::fingerprint;
  if (s == "trial") return Partition::trial;
  throw ParseError(ParseError::Kind::malformed, "unknown partition: " + s);
}

inline std::string content_name(Content c) {
  return c == Content::co ? "co" : "nc";
}

inline Content content_from_name(const std::string& s) {
  if (s == "co") return Content::co;
  if (s == "nc") return Content::nc;
  throw ParseError(ParseError::Kind::malformed, "unknown content flag: " + s);
}

// One utterance's metadata.  am/vm are the acoustic and vocoder model ids;
// the *_arch fields group models into architecture families.
struct ManifestRecord {
  std::string utt_id;
  std::string attack_id;
  std::string am_id;
  std::string vm_id;
  std::string am_arch;
  std::string vm_arch;
  std::string speaker_id;
  Partition partition = Partition::train;
  Content content = Content::nc;
};

// Line format: nine tab-separated fields, no header, order-independent:
// utt_id  attack_id  am_id  vm_id  am_arch  vm_arch  speaker_id
// partition  content
inline std::string manifest_line(const ManifestRecord& r) {
  std::string out;
  out += r.utt_id;
  out += '\t';
  out += r.attack_id;
  out += '\t';
  out += r.am_id;
  out += '\t';
  out += r.vm_id;
  out += '\t';
  out += r.am_arch;
  out += '\t';
  out += r.vm_arch;
  out += '\t';
  out += r.speaker_id;
  out += '\t';
  out += partition_name(r.partition);
  out += '\t';
  out += content_name(r.content);
  return out;
}

inline void write_manifest(const std::vector<ManifestRecord>& records,
                           const std::string& path) {
  std::string out;
  for (const ManifestRecord& r : records) {
    out += manifest_line(r);
    out += '\n';
  }
  write_text_file(path, out);
}

inline std::vector<ManifestRecord> parse_manifest(const std::string& text,
                                                  const std::string& origin) {
  std::vector<ManifestRecord> records;
  const std::vector<std::string> lines = split_lines(text);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const std::vector<std::string> f = split_tabs(lines[n]);
    if (f.size() != 9) {
      throw ParseError(ParseError::Kind::malformed,
                       origin + ":" + std::to_string(n + 1) + ": expected 9 " +
                           "tab-separated fields, got " +
                           std::to_string(f.size()));
    }
    for (const std::string& field : f) {
      if (field.empty()) {
        throw ParseError(ParseError::Kind::malformed,
                         origin + ":" + std::to_string(n + 1) +
                             ": empty field");
      }
    }
    ManifestRecord r;
    r.utt_id = f[0];
    r.attack_id = f[1];
    r.am_id = f[2];
    r.vm_id = f[3];
    r.am_arch = f[4];
    r.vm_arch = f[5];
    r.speaker_id = f[6];
    r.partition = partition_from_name(f[7]);
    r.content = content_from_name(f[8]);
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<ManifestRecord> read_manifest(const std::string& path) {
  return parse_manifest(read_text_file(path), path);
}

// ---------------------------------------------------------------------------
// Join validation
// ---------------------------------------------------------------------------

// Embeddings joined 1:1 with their manifest rows.
struct Dataset {
  EmbeddingSet embeddings;
  std::vector<ManifestRecord> records;
  std::map<std::string, std::size_t> row_of_utt;     // utt_id -> embedding row
  std::map<std::string, std::size_t> record_of_utt;  // utt_id -> record index

  std::span<const double> embedding_of(const std::string& utt_id) const {
    const auto it = row_of_utt.find(utt_id);
    if (it == row_of_utt.end()) {
      throw ValidationError("no embedding for utterance: " + utt_id);
    }
    return embeddings.row(it->second);
  }
};

namespace detail {

inline std::string preview_ids(const std::vector<std::string>& ids) {
  std::string out;
  const std::size_t n = std::min<std::size_t>(ids.size(), 8);
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ", ";
    out += ids[i];
  }
  if (ids.size() > n) out += ", ...";
  return out;
}

}  // namespace detail

// Checks the 1:1 correspondence between manifest rows and embedding rows.
// Any offending utterance ids (duplicated, missing an embedding, or
// dangling embeddings without metadata) are listed in the error.
inline Dataset validate_manifest(std::vector<ManifestRecord> records,
                                 EmbeddingSet embeddings) {
  validate_embedding_set(embeddings);

  Dataset ds;
  std::vector<std::string> duplicates;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!ds.record_of_utt.emplace(records[i].utt_id, i).second) {
      duplicates.push_back(records[i].utt_id);
    }
  }
  if (!duplicates.empty()) {
    throw ValidationError("manifest: duplicate utterance ids: " +
                          detail::preview_ids(duplicates));
  }

  std::map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < embeddings.count(); ++i) {
    row_of.emplace(embeddings.ids[i], i);
  }

  std::vector<std::string> missing;  // manifest rows without embeddings
  for (const ManifestRecord& r : records) {
    if (row_of.find(r.utt_id) == row_of.end()) missing.push_back(r.utt_id);
  }
  if (!missing.empty()) {
    throw ValidationError("manifest rows without embeddings: " +
                          detail::preview_ids(missing));
  }
  std::vector<std::string> dangling;  // embeddings without manifest rows
  for (const std::string& id : embeddings.ids) {
    if (ds.record_of_utt.find(id) == ds.record_of_utt.end()) {
      dangling.push_back(id);
    }
  }
  if (!dangling.empty()) {
    throw ValidationError("embeddings without manifest rows: " +
                          detail::preview_ids(dangling));
  }

  ds.embeddings = std::move(embeddings);
  ds.records = std::move(records);
  ds.row_of_utt = std::move(row_of);
  return ds;
}

}  // namespace sourcetrace
