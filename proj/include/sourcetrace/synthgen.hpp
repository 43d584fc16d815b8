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
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sourcetrace/embedding_store.hpp"
#include "sourcetrace/error.hpp"
#include "sourcetrace/linalg.hpp"
#include "sourcetrace/rng.hpp"

namespace sourcetrace {

// One synthetic attack: an (acoustic model, vocoder) combination plus the
// architecture families those models belong to.
struct SynthAttack {
  std::string attack_id;
  std::string am_id;
  std::string vm_id;
  std::string am_arch;
  std::string vm_arch;
};

// Hierarchical prototype generator.  Every acoustic model, vocoder, and
// attack gets a random unit direction; attack k's prototype is
//
//   normalize(am_weight * u_AM(k) + vm_weight * u_VM(k) + attack_weight * w_k)
//
// and an utterance is normalize(prototype + noise_sigma * eps) with
// eps ~ N(0, I).  Attacks sharing an AM or VM therefore have correlated
// prototypes, which is what gives the multi-level pooling something real
// to measure.
struct SynthConfig {
  std::size_t dim = 64;
  std::vector<SynthAttack> attacks;

  // Partition roles by attack id.  Train must be disjoint from the other
  // two; fingerprint must be a strict subset of trial.  Utterances of a
  // fingerprint-role attack are split between the fingerprint and trial
  // partitions (fingerprint_fraction goes to fingerprint); trial-only
  // attacks emit trial rows; train attacks emit train rows.
  std::vector<std::string> train_attacks;
  std::vector<std::string> fingerprint_attacks;
  std::vector<std::string> trial_attacks;

  std::size_t utts_per_attack = 100;
  std::size_t speakers_per_partition = 10;
  double noise_sigma = 0.1;
  double am_weight = 1.0;      // alpha
  double vm_weight = 1.0;      // beta
  double attack_weight = 1.0;  // gamma
  double co_fraction = 0.5;
  double fingerprint_fraction = 0.5;
  std::uint64_t seed = 1;
};

// Evenly spread attack grid over n_am acoustic models and n_vm vocoders;
// architecture families group pairs of adjacent model ids.
inline std::vector<SynthAttack> make_attack_grid(std::size_t n_attacks,
                                                 std::size_t n_am,
                                                 std::size_t n_vm) {
  if (n_attacks == 0 || n_am == 0 || n_vm == 0) {
    throw ContractViolation("make_attack_grid: zero count");
  }
  std::set<std::pair<std::size_t, std::size_t>> used;
  std::vector<SynthAttack> attacks;
  std::size_t am = 0;
  std::size_t vm = 0;
  for (std::size_t k = 0; k < n_attacks; ++k) {
    // Walk the (am, vm) torus until an unused combination appears.
    while (used.count({am % n_am, vm % n_vm})) ++vm;
    const std::size_t a = am % n_am;
    const std::size_t v = vm % n_vm;
    used.insert({a, v});
    char buf[64];
    SynthAttack atk;
    std::snprintf(buf, sizeof(buf), "A%02zu", k + 1);
    atk.attack_id = buf;
    std::snprintf(buf, sizeof(buf), "AM%02zu", a + 1);
    atk.am_id = buf;
    std::snprintf(buf, sizeof(buf), "VM%02zu", v + 1);
    atk.vm_id = buf;
    std::snprintf(buf, sizeof(buf), "AMARCH%02zu", a / 2 + 1);
    atk.am_arch = buf;
    std::snprintf(buf, sizeof(buf), "VMARCH%02zu", v / 2 + 1);
    atk.vm_arch = buf;
    attacks.push_back(std::move(atk));
    ++am;
    ++vm;
    if (used.size() >= n_am * n_vm && k + 1 < n_attacks) {
      throw ContractViolation(
          "make_attack_grid: more attacks than distinct (am, vm) pairs");
    }
  }
  return attacks;
}

namespace detail {

inline void validate_synth_config(const SynthConfig& cfg) {
  if (cfg.dim < 2) throw ContractViolation("synth: dim must be >= 2");
  if (cfg.attacks.empty()) throw ContractViolation("synth: no attacks");
  if (cfg.utts_per_attack == 0) {
    throw ContractViolation("synth: utts_per_attack must be > 0");
  }
  if (cfg.speakers_per_partition == 0) {
    throw ContractViolation("synth: speakers_per_partition must be > 0");
  }
  if (!(cfg.noise_sigma >= 0.0)) {
    throw ContractViolation("synth: noise_sigma must be >= 0");
  }
  if (!(cfg.co_fraction >= 0.0 && cfg.co_fraction <= 1.0)) {
    throw ContractViolation("synth: co_fraction must lie in [0, 1]");
  }
  if (!(cfg.fingerprint_fraction > 0.0 && cfg.fingerprint_fraction < 1.0)) {
    throw ContractViolation(
        "synth: fingerprint_fraction must lie in (0, 1)");
  }
  if (cfg.am_weight + cfg.vm_weight + cfg.attack_weight <= 0.0) {
    throw DegenerateInput("synth: mixing weights sum to zero");
  }
  if (cfg.am_weight < 0.0 || cfg.vm_weight < 0.0 || cfg.attack_weight < 0.0) {
    throw ContractViolation("synth: mixing weights must be >= 0");
  }

  std::set<std::string> attack_ids;
  for (const SynthAttack& a : cfg.attacks) {
    if (a.attack_id.empty() || a.am_id.empty() || a.vm_id.empty() ||
        a.am_arch.empty() || a.vm_arch.empty()) {
      throw ContractViolation("synth: empty id in attack entry");
    }
    if (!attack_ids.insert(a.attack_id).second) {
      throw ContractViolation("synth: duplicate attack id " + a.attack_id);
    }
  }

  const std::set<std::string> train(cfg.train_attacks.begin(),
                                    cfg.train_attacks.end());
  const std::set<std::string> fing(cfg.fingerprint_attacks.begin(),
                                   cfg.fingerprint_attacks.end());
  const std::set<std::string> trial(cfg.trial_attacks.begin(),
                                    cfg.trial_attacks.end());
  if (fing.empty() || trial.empty()) {
    throw ContractViolation("synth: fingerprint/trial roles must be nonempty");
  }
  for (const std::string& id : cfg.train_attacks) {
    if (fing.count(id) || trial.count(id)) {
      throw ContractViolation("synth: train attack also fingerprint/trial: " +
                              id);
    }
  }
  for (const std::string& id : fing) {
    if (!trial.count(id)) {
      throw ContractViolation(
          "synth: fingerprint attacks must be a subset of trial attacks");
    }
  }
  if (fing.size() >= trial.size()) {
    throw ContractViolation(
        "synth: fingerprint attacks must be a strict subset of trial attacks");
  }
  std::set<std::string> all_roles;
  all_roles.insert(train.begin(), train.end());
  all_roles.insert(trial.begin(), trial.end());
  for (const std::string& id : all_roles) {
    if (!attack_ids.count(id)) {
      throw ContractViolation("synth: role names unknown attack: " + id);
    }
  }
  for (const SynthAttack& a : cfg.attacks) {
    if (!train.count(a.attack_id) && !trial.count(a.attack_id)) {
      throw ContractViolation("synth: attack has no partition role: " +
                              a.attack_id);
    }
  }
}

inline std::vector<double> random_unit_direction(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  while (true) {
    for (double& x : v) x = rng.gaussian();
    if (norm(v) > 0.0) break;  // astronomically unlikely to loop
  }
  return normalized(v);
}

}  // namespace detail

struct SynthOutput {
  EmbeddingSet embeddings;
  std::vector<ManifestRecord> manifest;
  // Prototypes by attack id, for tests that reason about the geometry.
  std::map<std::string, std::vector<double>> prototypes;
};

// Deterministic: the same config (seed included) produces a bit-identical
// dataset.  All embeddings are unit norm; with noise_sigma == 0 every
// utterance equals its attack prototype exactly.
inline SynthOutput generate(const SynthConfig& cfg) {
  detail::validate_synth_config(cfg);

  Rng rng(cfg.seed);

  // Direction draws happen in a fixed order: AM directions for the sorted
  // distinct am ids, then VM directions, then per-attack residuals in
  // config order, then per-utterance noise.  Keeping the order fixed means
  // two configs differing only in noise_sigma see identical noise draws.
  std::set<std::string> am_ids;
  std::set<std::string> vm_ids;
  for (const SynthAttack& a : cfg.attacks) {
    am_ids.insert(a.am_id);
    vm_ids.insert(a.vm_id);
  }
  std::map<std::string, std::vector<double>> u_am;
  for (const std::string& id : am_ids) {
    u_am[id] = detail::random_unit_direction(rng, cfg.dim);
  }
  std::map<std::string, std::vector<double>> u_vm;
  for (const std::string& id : vm_ids) {
    u_vm[id] = detail::random_unit_direction(rng, cfg.dim);
  }

  SynthOutput out;
  for (const SynthAttack& a : cfg.attacks) {
    const std::vector<double> w_k =
        detail::random_unit_direction(rng, cfg.dim);
    std::vector<double> mix(cfg.dim, 0.0);
    axpy(cfg.am_weight, u_am[a.am_id], mix);
    axpy(cfg.vm_weight, u_vm[a.vm_id], mix);
    axpy(cfg.attack_weight, w_k, mix);
    if (norm(mix) == 0.0) {
      throw DegenerateInput("synth: prototype mix collapsed to zero for " +
                            a.attack_id);
    }
    out.prototypes[a.attack_id] = normalized(mix);
  }

  const std::set<std::string> train(cfg.train_attacks.begin(),
                                    cfg.train_attacks.end());
  const std::set<std::string> fing(cfg.fingerprint_attacks.begin(),
                                   cfg.fingerprint_attacks.end());

  // Speakers are drawn from per-partition pools, round-robin in emission
  // order, so partitions can never share a speaker.
  std::map<Partition, std::size_t> speaker_cursor;
  const auto next_speaker = [&](Partition p) {
    const std::size_t idx =
        speaker_cursor[p]++ % cfg.speakers_per_partition;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_spk%03zu",
                  partition_name(p).c_str(), idx + 1);
    return std::string(buf);
  };

  out.embeddings.dim = cfg.dim;
  for (const SynthAttack& a : cfg.attacks) {
    const std::vector<double>& proto = out.prototypes[a.attack_id];
    const bool is_train = train.count(a.attack_id) > 0;
    const bool is_fing = fing.count(a.attack_id) > 0;
    const std::size_t n = cfg.utts_per_attack;
    const std::size_t n_fing =
        is_fing ? static_cast<std::size_t>(
                      std::llround(cfg.fingerprint_fraction *
                                   static_cast<double>(n)))
                : 0;

    for (std::size_t u = 0; u < n; ++u) {
      std::vector<double> eps(cfg.dim);
      for (double& x : eps) x = rng.gaussian();

      std::vector<double> vec;
      if (cfg.noise_sigma == 0.0) {
        vec = proto;  // exactly the prototype, bit for bit
      } else {
        vec = proto;
        axpy(cfg.noise_sigma, eps, vec);
        vec = normalized(vec);
      }

      Partition part = Partition::trial;
      if (is_train) {
        part = Partition::train;
      } else if (is_fing && u < n_fing) {
        part = Partition::fingerprint;
      }

      // Per (attack, partition) bucket the first co_fraction of rows are
      // common-content; deterministic, so bucket balance is exact.
      const std::size_t bucket_size =
          is_train ? n : (is_fing ? (u < n_fing ? n_fing : n - n_fing) : n);
      const std::size_t bucket_pos =
          (is_fing && part == Partition::trial) ? u - n_fing : u;
      const std::size_t n_co = static_cast<std::size_t>(
          std::llround(cfg.co_fraction * static_cast<double>(bucket_size)));

      ManifestRecord rec;
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%s_u%05zu", a.attack_id.c_str(),
                    u + 1);
      rec.utt_id = buf;
      rec.attack_id = a.attack_id;
      rec.am_id = a.am_id;
      rec.vm_id = a.vm_id;
      rec.am_arch = a.am_arch;
      rec.vm_arch = a.vm_arch;
      rec.partition = part;
      rec.speaker_id = next_speaker(part);
      rec.content = bucket_pos < n_co ? Content::co : Content::nc;

      out.embeddings.append(rec.utt_id, vec);
      out.manifest.push_back(std::move(rec));
    }
  }
  return out;
}

// Raw-feature views of an embedding set: a fixed random linear lift to
// raw_dim dimensions plus isotropic noise.  This is the stand-in input for
// the trainable projector, which exists to exercise the angular-margin
// training path end to end rather than to mimic any particular front end.
inline EmbeddingSet make_raw_features(const EmbeddingSet& embeddings,
                                      std::size_t raw_dim, double raw_sigma,
                                      std::uint64_t seed) {
  if (raw_dim == 0) throw ContractViolation("make_raw_features: raw_dim 0");
  if (!(raw_sigma >= 0.0)) {
    throw ContractViolation("make_raw_features: raw_sigma must be >= 0");
  }
  validate_embedding_set(embeddings);
  Rng rng(seed);
  Matrix lift(raw_dim, embeddings.dim);
  const double scale =
      1.0 / std::sqrt(static_cast<double>(embeddings.dim));
  for (double& v : lift.data) v = scale * rng.gaussian();

  EmbeddingSet out;
  out.dim = raw_dim;
  for (std::size_t i = 0; i < embeddings.count(); ++i) {
    std::vector<double> f = matvec(lift, embeddings.row(i));
    for (double& v : f) v += raw_sigma * rng.gaussian();
    out.append(embeddings.ids[i], f);
  }
  return out;
}

}  // namespace sourcetrace
