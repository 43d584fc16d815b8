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
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sourcetrace/embedding_store.hpp"
#include "sourcetrace/error.hpp"
#include "sourcetrace/rng.hpp"
#include "sourcetrace/text_io.hpp"

namespace sourcetrace {

// The three disjoint roles an attack can play.  Train attacks supply
// backend training data only.  Fingerprint attacks are the known sources
// the system enrolls.  Trial attacks supply test utterances; fingerprint
// attacks must be a strict subset of trial attacks so that the trial side
// contains both in-distribution sources and unseen ones.
struct PartitionConfig {
  std::vector<std::string> train_attacks;
  std::vector<std::string> fingerprint_attacks;
  std::vector<std::string> trial_attacks;
};

struct PartitionPlan {
  std::set<std::string> train_attacks;
  std::set<std::string> fingerprint_attacks;
  std::set<std::string> trial_attacks;
  std::map<Partition, std::set<std::string>> speakers;
};

// Validates the role assignment against the manifest and collects the
// per-partition speaker sets.  Violations of the protocol structure
// (overlapping roles, speaker leakage across partitions, rows sitting in a
// partition their attack's role forbids) are ProtocolErrors.
inline PartitionPlan partition_attacks(
    const std::vector<ManifestRecord>& records, const PartitionConfig& cfg) {
  PartitionPlan plan;
  plan.train_attacks.insert(cfg.train_attacks.begin(),
                            cfg.train_attacks.end());
  plan.fingerprint_attacks.insert(cfg.fingerprint_attacks.begin(),
                                  cfg.fingerprint_attacks.end());
  plan.trial_attacks.insert(cfg.trial_attacks.begin(),
                            cfg.trial_attacks.end());

  if (plan.fingerprint_attacks.empty()) {
    throw ProtocolError("partition: fingerprint attack set is empty");
  }
  if (plan.trial_attacks.empty()) {
    throw ProtocolError("partition: trial attack set is empty");
  }

  std::set<std::string> manifest_attacks;
  for (const ManifestRecord& r : records) manifest_attacks.insert(r.attack_id);

  for (const std::string& id : plan.train_attacks) {
    if (plan.fingerprint_attacks.count(id) || plan.trial_attacks.count(id)) {
      throw ProtocolError(
          "partition: attack assigned both train and trial-side roles: " +
          id);
    }
  }
  for (const std::string& id : plan.fingerprint_attacks) {
    if (!plan.trial_attacks.count(id)) {
      throw ProtocolError(
          "partition: fingerprint attack not among trial attacks: " + id);
    }
  }
  if (plan.fingerprint_attacks.size() >= plan.trial_attacks.size()) {
    throw ProtocolError(
        "partition: fingerprint attacks must be a strict subset of trial "
        "attacks");
  }
  for (const std::set<std::string>* role :
       {&plan.train_attacks, &plan.fingerprint_attacks,
        &plan.trial_attacks}) {
    for (const std::string& id : *role) {
      if (!manifest_attacks.count(id)) {
        throw ProtocolError("partition: role names unknown attack: " + id);
      }
    }
  }

  // Row placement: a train-role attack may only have train rows; a
  // fingerprint-role attack may have fingerprint and trial rows; a
  // trial-only attack may only have trial rows.  Attacks with no role are
  // simply unused, whatever partition their rows sit in.
  for (const ManifestRecord& r : records) {
    const bool is_train = plan.train_attacks.count(r.attack_id) > 0;
    const bool is_fing = plan.fingerprint_attacks.count(r.attack_id) > 0;
    const bool is_trial = plan.trial_attacks.count(r.attack_id) > 0;
    if (!is_train && !is_trial) continue;
    bool ok = false;
    if (is_train) {
      ok = r.partition == Partition::train;
    } else if (is_fing) {
      ok = r.partition == Partition::fingerprint ||
           r.partition == Partition::trial;
    } else {
      ok = r.partition == Partition::trial;
    }
    if (!ok) {
      throw ProtocolError("partition: utt " + r.utt_id + " of attack " +
                          r.attack_id + " sits in partition " +
                          partition_name(r.partition) +
                          ", which its role forbids");
    }
    plan.speakers[r.partition].insert(r.speaker_id);
  }

  // Speaker disjointness across partitions, so no backend can key on
  // speaker identity shared between training and evaluation.
  const std::array<Partition, 3> parts = {
      Partition::train, Partition::fingerprint, Partition::trial};
  for (std::size_t i = 0; i < parts.size(); ++i) {
    for (std::size_t j = i + 1; j < parts.size(); ++j) {
      const auto a = plan.speakers.find(parts[i]);
      const auto b = plan.speakers.find(parts[j]);
      if (a == plan.speakers.end() || b == plan.speakers.end()) continue;
      for (const std::string& s : a->second) {
        if (b->second.count(s)) {
          throw ProtocolError("partition: speaker " + s +
                              " appears in both " +
                              partition_name(parts[i]) + " and " +
                              partition_name(parts[j]));
        }
      }
    }
  }
  return plan;
}

struct AttackInfo {
  std::string am_id;
  std::string vm_id;
  std::string am_arch;
  std::string vm_arch;
};

// Attack id -> component metadata, with a consistency check: every row of
// an attack must agree on all four component labels.
inline std::map<std::string, AttackInfo> attack_table(
    const std::vector<ManifestRecord>& records) {
  std::map<std::string, AttackInfo> table;
  for (const ManifestRecord& r : records) {
    const AttackInfo info{r.am_id, r.vm_id, r.am_arch, r.vm_arch};
    auto [it, inserted] = table.emplace(r.attack_id, info);
    if (!inserted) {
      const AttackInfo& have = it->second;
      if (have.am_id != info.am_id || have.vm_id != info.vm_id ||
          have.am_arch != info.am_arch || have.vm_arch != info.vm_arch) {
        throw ValidationError("attack " + r.attack_id +
                              " has conflicting component metadata at utt " +
                              r.utt_id);
      }
    }
  }
  return table;
}

// Granularities at which a trial can count as a target.  A trial claiming
// attack c for an utterance truly from attack a is a target at level
// "am" when a and c share their acoustic model, and so on.
enum class Level { attack, am, vm, am_arch, vm_arch };

inline constexpr std::array<Level, 5> kAllLevels = {
    Level::attack, Level::am, Level::vm, Level::am_arch, Level::vm_arch};

inline std::string level_name(Level l) {
  switch (l) {
    case Level::attack: return "attack";
    case Level::am: return "am";
    case Level::vm: return "vm";
    case Level::am_arch: return "am_arch";
    case Level::vm_arch: return "vm_arch";
  }
  throw ContractViolation("level_name: bad enum");
}

inline Level level_from_name(const std::string& s) {
  for (Level l : kAllLevels) {
    if (level_name(l) == s) return l;
  }
  throw ParseError(ParseError::Kind::malformed, "unknown level: " + s);
}

struct Trial {
  std::string utt_id;
  std::string claimed_attack;
  std::array<bool, 5> target{};  // indexed by Level
  bool ood = false;              // true utt source is outside the known set
};

inline bool trial_target(const Trial& t, Level l) {
  return t.target[static_cast<std::size_t>(l)];
}

enum class TrialSource { id_only, ood_only, both };

inline std::string trial_source_name(TrialSource s) {
  switch (s) {
    case TrialSource::id_only: return "id_only";
    case TrialSource::ood_only: return "ood_only";
    case TrialSource::both: return "both";
  }
  throw ContractViolation("trial_source_name: bad enum");
}

inline TrialSource trial_source_from_name(const std::string& s) {
  if (s == "id_only") return TrialSource::id_only;
  if (s == "ood_only") return TrialSource::ood_only;
  if (s == "both") return TrialSource::both;
  throw ParseError(ParseError::Kind::malformed, "unknown trial source: " + s);
}

// Full cross of trial-partition utterances (sorted by utt id) with the
// enrolled attacks (sorted), labelled at all five levels.  Utterances in
// exclude_utts are dropped, so enrollment data can never score itself.
inline std::vector<Trial> generate_trials(
    const PartitionPlan& plan, const std::vector<ManifestRecord>& records,
    TrialSource source, const std::set<std::string>& exclude_utts = {}) {
  if (plan.fingerprint_attacks.empty()) {
    throw ProtocolError("generate_trials: no enrolled attacks");
  }
  const std::map<std::string, AttackInfo> table = attack_table(records);
  for (const std::string& c : plan.fingerprint_attacks) {
    if (!table.count(c)) {
      throw ProtocolError("generate_trials: enrolled attack missing from "
                          "manifest: " + c);
    }
  }

  std::vector<const ManifestRecord*> utts;
  for (const ManifestRecord& r : records) {
    if (r.partition != Partition::trial) continue;
    if (!plan.trial_attacks.count(r.attack_id)) continue;
    if (exclude_utts.count(r.utt_id)) continue;
    utts.push_back(&r);
  }
  std::sort(utts.begin(), utts.end(),
            [](const ManifestRecord* a, const ManifestRecord* b) {
              return a->utt_id < b->utt_id;
            });

  std::vector<Trial> trials;
  for (const ManifestRecord* r : utts) {
    const bool ood = plan.fingerprint_attacks.count(r->attack_id) == 0;
    if (source == TrialSource::id_only && ood) continue;
    if (source == TrialSource::ood_only && !ood) continue;
    for (const std::string& claimed : plan.fingerprint_attacks) {
      const AttackInfo& c = table.at(claimed);
      Trial t;
      t.utt_id = r->utt_id;
      t.claimed_attack = claimed;
      t.ood = ood;
      t.target[static_cast<std::size_t>(Level::attack)] =
          r->attack_id == claimed;
      t.target[static_cast<std::size_t>(Level::am)] = r->am_id == c.am_id;
      t.target[static_cast<std::size_t>(Level::vm)] = r->vm_id == c.vm_id;
      t.target[static_cast<std::size_t>(Level::am_arch)] =
          r->am_arch == c.am_arch;
      t.target[static_cast<std::size_t>(Level::vm_arch)] =
          r->vm_arch == c.vm_arch;
      trials.push_back(std::move(t));
    }
  }
  return trials;
}

struct UttPair {
  std::string a;
  std::string b;
  bool same = false;  // drawn from the same attack
};

// Balanced same/different pairs over the given records, for pair-based
// training.  Deterministic in (records-as-set, n_pairs, seed): utterances
// are grouped and sorted before any sampling, so input order is
// irrelevant.
inline std::vector<UttPair> generate_pairs(
    const std::vector<ManifestRecord>& records, std::size_t n_pairs,
    std::uint64_t seed) {
  if (n_pairs % 2 != 0) {
    throw ContractViolation("generate_pairs: n_pairs must be even");
  }
  std::map<std::string, std::vector<std::string>> by_attack;
  for (const ManifestRecord& r : records) {
    by_attack[r.attack_id].push_back(r.utt_id);
  }
  if (by_attack.size() < 2) {
    throw ProtocolError("generate_pairs: need at least two attacks, have " +
                        std::to_string(by_attack.size()));
  }
  std::vector<std::string> attack_ids;
  for (auto& [attack, utts] : by_attack) {
    std::sort(utts.begin(), utts.end());
    if (utts.size() < 2) {
      throw ContractViolation("generate_pairs: attack " + attack +
                              " has fewer than two utterances");
    }
    attack_ids.push_back(attack);
  }

  Rng rng(seed);
  std::vector<UttPair> pairs;
  pairs.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs / 2; ++i) {
    const std::vector<std::string>& pool =
        by_attack[attack_ids[rng.below(attack_ids.size())]];
    const std::size_t x = rng.below(pool.size());
    std::size_t y = rng.below(pool.size() - 1);
    if (y >= x) ++y;  // distinct utterances
    pairs.push_back({pool[x], pool[y], true});
  }
  for (std::size_t i = 0; i < n_pairs / 2; ++i) {
    const std::size_t ai = rng.below(attack_ids.size());
    std::size_t bi = rng.below(attack_ids.size() - 1);
    if (bi >= ai) ++bi;  // distinct attacks
    const std::vector<std::string>& pa = by_attack[attack_ids[ai]];
    const std::vector<std::string>& pb = by_attack[attack_ids[bi]];
    pairs.push_back(
        {pa[rng.below(pa.size())], pb[rng.below(pb.size())], false});
  }
  return pairs;
}

// Picks the enrollment utterances for one attack: fingerprint-partition
// rows of that attack with the requested content kind.  r == nullopt
// enrolls everything available (sorted); otherwise r utterances are
// sampled without replacement.
inline std::vector<std::string> select_fingerprint_utts(
    const std::vector<ManifestRecord>& records, const PartitionPlan& plan,
    const std::string& attack, std::optional<std::size_t> r, Content content,
    std::uint64_t seed) {
  if (!plan.fingerprint_attacks.count(attack)) {
    throw ContractViolation("select_fingerprint_utts: " + attack +
                            " is not an enrolled attack");
  }
  std::vector<std::string> candidates;
  for (const ManifestRecord& rec : records) {
    if (rec.partition == Partition::fingerprint && rec.attack_id == attack &&
        rec.content == content) {
      candidates.push_back(rec.utt_id);
    }
  }
  std::sort(candidates.begin(), candidates.end());
  if (!r.has_value()) return candidates;
  if (*r == 0) {
    throw ContractViolation("select_fingerprint_utts: r must be > 0");
  }
  if (*r > candidates.size()) {
    throw ProtocolError("select_fingerprint_utts: attack " + attack +
                        " has only " + std::to_string(candidates.size()) +
                        " " + content_name(content) +
                        " fingerprint utterances, need " +
                        std::to_string(*r));
  }
  Rng rng(seed);
  const std::vector<std::size_t> picks =
      rng.sample_without_replacement(candidates.size(), *r);
  std::vector<std::string> out;
  out.reserve(*r);
  for (std::size_t i : picks) out.push_back(candidates[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Trial list serialization: one row per trial, tab separated.

inline constexpr const char* kTrialHeader =
    "trial_utt_id\tclaimed_attack_id\tattack_label\tam_label\tvm_label\t"
    "am_arch_label\tvm_arch_label\tdist_flag";

inline std::string trial_line(const Trial& t) {
  std::string out = t.utt_id;
  out += '\t';
  out += t.claimed_attack;
  for (Level l : kAllLevels) {
    out += '\t';
    out += trial_target(t, l) ? "target" : "nontarget";
  }
  out += '\t';
  out += t.ood ? "OOD" : "ID";
  return out;
}

inline void write_trials(const std::string& path,
                         const std::vector<Trial>& trials) {
  std::string text = kTrialHeader;
  text += '\n';
  for (const Trial& t : trials) {
    text += trial_line(t);
    text += '\n';
  }
  write_text_file(path, text);
}

inline std::vector<Trial> parse_trials(const std::string& text,
                                       const std::string& origin) {
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty() || lines[0] != kTrialHeader) {
    throw ParseError(ParseError::Kind::malformed,
                     origin + ": missing or wrong trial header");
  }
  std::vector<Trial> trials;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> f = split_tabs(lines[i]);
    if (f.size() != 8) {
      throw ParseError(ParseError::Kind::malformed,
                       origin + " line " + std::to_string(i + 1) +
                           ": expected 8 fields, got " +
                           std::to_string(f.size()));
    }
    Trial t;
    t.utt_id = f[0];
    t.claimed_attack = f[1];
    if (t.utt_id.empty() || t.claimed_attack.empty()) {
      throw ParseError(ParseError::Kind::malformed,
                       origin + " line " + std::to_string(i + 1) +
                           ": empty id field");
    }
    for (std::size_t l = 0; l < 5; ++l) {
      const std::string& v = f[2 + l];
      if (v == "target") {
        t.target[l] = true;
      } else if (v == "nontarget") {
        t.target[l] = false;
      } else {
        throw ParseError(ParseError::Kind::malformed,
                         origin + " line " + std::to_string(i + 1) +
                             ": bad label '" + v + "'");
      }
    }
    if (f[7] == "OOD") {
      t.ood = true;
    } else if (f[7] == "ID") {
      t.ood = false;
    } else {
      throw ParseError(ParseError::Kind::malformed,
                       origin + " line " + std::to_string(i + 1) +
                           ": bad dist flag '" + f[7] + "'");
    }
    trials.push_back(std::move(t));
  }
  return trials;
}

inline std::vector<Trial> read_trials(const std::string& path) {
  return parse_trials(read_text_file(path), path);
}

// ---------------------------------------------------------------------------
// Plan serialization (JSON).

inline constexpr const char* kPlanFormat = "sourcetrace-plan";
inline constexpr int kPlanVersion = 1;

inline void write_plan(const std::string& path, const PartitionPlan& plan) {
  nlohmann::json j;
  j["format"] = kPlanFormat;
  j["version"] = kPlanVersion;
  j["train_attacks"] = plan.train_attacks;
  j["fingerprint_attacks"] = plan.fingerprint_attacks;
  j["trial_attacks"] = plan.trial_attacks;
  nlohmann::json spk = nlohmann::json::object();
  for (const auto& [part, speakers] : plan.speakers) {
    spk[partition_name(part)] = speakers;
  }
  j["speakers"] = spk;
  write_text_file(path, j.dump(2) + "\n");
}

inline PartitionPlan read_plan(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseError::Kind::malformed,
                     path + ": invalid JSON: " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kPlanFormat) {
      throw ValidationError(path + ": not a plan file");
    }
    if (j.at("version").get<int>() != kPlanVersion) {
      throw ValidationError(path + ": unsupported plan version");
    }
    PartitionPlan plan;
    for (const auto& v : j.at("train_attacks")) {
      plan.train_attacks.insert(v.get<std::string>());
    }
    for (const auto& v : j.at("fingerprint_attacks")) {
      plan.fingerprint_attacks.insert(v.get<std::string>());
    }
    for (const auto& v : j.at("trial_attacks")) {
      plan.trial_attacks.insert(v.get<std::string>());
    }
    for (const auto& [key, val] : j.at("speakers").items()) {
      std::set<std::string>& s = plan.speakers[partition_from_name(key)];
      for (const auto& v : val) s.insert(v.get<std::string>());
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": bad plan structure: " + e.what());
  }
}

}  // namespace sourcetrace
