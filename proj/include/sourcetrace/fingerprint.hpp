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

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sourcetrace/embedding_store.hpp"
#include "sourcetrace/error.hpp"
#include "sourcetrace/linalg.hpp"
#include "sourcetrace/text_io.hpp"

namespace sourcetrace {

// An enrolled attack: the plain mean of its enrollment embeddings.
struct Fingerprint {
  std::string attack_id;
  std::size_t enrollment_count = 0;
  Content content = Content::nc;
  std::vector<double> vec;
};

inline Fingerprint build_fingerprint(
    const std::vector<std::span<const double>>& embeddings,
    const std::string& attack_id, Content content) {
  if (embeddings.empty()) {
    throw DegenerateInput("build_fingerprint: no embeddings for " +
                          attack_id);
  }
  const std::size_t dim = embeddings.front().size();
  if (dim == 0) {
    throw ContractViolation("build_fingerprint: zero-dimensional input");
  }
  Fingerprint fp;
  fp.attack_id = attack_id;
  fp.enrollment_count = embeddings.size();
  fp.content = content;
  fp.vec.assign(dim, 0.0);
  for (const std::span<const double>& e : embeddings) {
    if (e.size() != dim) {
      throw ContractViolation(
          "build_fingerprint: mixed embedding dimensions for " + attack_id);
    }
    for (std::size_t i = 0; i < dim; ++i) fp.vec[i] += e[i];
  }
  const double inv = 1.0 / static_cast<double>(embeddings.size());
  for (double& v : fp.vec) v *= inv;
  if (!all_finite(fp.vec)) {
    throw NumericError("build_fingerprint: non-finite mean for " + attack_id);
  }
  return fp;
}

struct FingerprintBank {
  std::size_t dim = 0;
  std::vector<Fingerprint> entries;

  const Fingerprint* find(const std::string& attack_id) const {
    for (const Fingerprint& f : entries) {
      if (f.attack_id == attack_id) return &f;
    }
    return nullptr;
  }
};

inline void validate_bank(const FingerprintBank& bank) {
  std::set<std::string> seen;
  for (const Fingerprint& f : bank.entries) {
    if (f.vec.size() != bank.dim) {
      throw ValidationError("fingerprint bank: dimension mismatch for " +
                            f.attack_id);
    }
    if (f.enrollment_count == 0) {
      throw ValidationError("fingerprint bank: zero enrollment count for " +
                            f.attack_id);
    }
    if (!seen.insert(f.attack_id).second) {
      throw ValidationError("fingerprint bank: duplicate attack " +
                            f.attack_id);
    }
    if (!all_finite(f.vec)) {
      throw ValidationError("fingerprint bank: non-finite values for " +
                            f.attack_id);
    }
  }
}

inline std::string bank_meta_path(const std::string& path) {
  return path + ".meta";
}

// Banks reuse the embedding container format; enrollment counts and
// content kind live in a small sidecar table.
inline void write_bank(const std::string& path, const FingerprintBank& bank) {
  validate_bank(bank);
  EmbeddingSet set;
  set.dim = bank.dim;
  for (const Fingerprint& f : bank.entries) set.append(f.attack_id, f.vec);
  write_embeddings(set, path);
  std::string meta = "attack_id\tr\tcontent\n";
  for (const Fingerprint& f : bank.entries) {
    meta += f.attack_id;
    meta += '\t';
    meta += std::to_string(f.enrollment_count);
    meta += '\t';
    meta += content_name(f.content);
    meta += '\n';
  }
  write_text_file(bank_meta_path(path), meta);
}

inline FingerprintBank read_bank(const std::string& path) {
  const EmbeddingSet set = read_embeddings(path);
  const std::string meta_path = bank_meta_path(path);
  const std::vector<std::string> lines =
      split_lines(read_text_file(meta_path));
  if (lines.empty() || lines[0] != "attack_id\tr\tcontent") {
    throw ParseError(ParseError::Kind::malformed,
                     meta_path + ": missing or wrong meta header");
  }
  FingerprintBank bank;
  bank.dim = set.dim;
  std::map<std::string, std::pair<std::size_t, Content>> meta;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> f = split_tabs(lines[i]);
    if (f.size() != 3) {
      throw ParseError(ParseError::Kind::malformed,
                       meta_path + " line " + std::to_string(i + 1) +
                           ": expected 3 fields");
    }
    std::size_t r = 0;
    try {
      r = static_cast<std::size_t>(std::stoull(f[1]));
    } catch (const std::exception&) {
      throw ParseError(ParseError::Kind::malformed,
                       meta_path + " line " + std::to_string(i + 1) +
                           ": bad count '" + f[1] + "'");
    }
    if (!meta.emplace(f[0], std::make_pair(r, content_from_name(f[2])))
             .second) {
      throw ParseError(ParseError::Kind::malformed,
                       meta_path + ": duplicate attack " + f[0]);
    }
  }
  for (std::size_t i = 0; i < set.count(); ++i) {
    const auto it = meta.find(set.ids[i]);
    if (it == meta.end()) {
      throw ValidationError(meta_path + ": no meta row for attack " +
                            set.ids[i]);
    }
    Fingerprint fp;
    fp.attack_id = set.ids[i];
    fp.enrollment_count = it->second.first;
    fp.content = it->second.second;
    const std::span<const double> row = set.row(i);
    fp.vec.assign(row.begin(), row.end());
    bank.entries.push_back(std::move(fp));
  }
  if (meta.size() != set.count()) {
    throw ValidationError(meta_path + ": meta rows do not match bank");
  }
  validate_bank(bank);
  return bank;
}

}  // namespace sourcetrace
