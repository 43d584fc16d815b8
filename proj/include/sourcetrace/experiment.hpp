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
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sourcetrace/backends.hpp"
#include "sourcetrace/embedding_store.hpp"
#include "sourcetrace/error.hpp"
#include "sourcetrace/fingerprint.hpp"
#include "sourcetrace/metrics.hpp"
#include "sourcetrace/model_io.hpp"
#include "sourcetrace/protocol.hpp"
#include "sourcetrace/rng.hpp"
#include "sourcetrace/synthgen.hpp"
#include "sourcetrace/text_io.hpp"

// Experiment driver: a JSON config describes one run, and each pipeline
// stage reads its inputs from and writes its artifacts into the run's
// output directory.  Every stage is a pure function of the config and the
// artifacts already on disk, so a rerun reproduces every file byte for
// byte.

namespace sourcetrace {

inline constexpr const char* kBackendCosine = "cosine";
inline constexpr const char* kBackendSiameseZeroShot = "siamese_zero_shot";
inline constexpr const char* kBackendSiameseFewShot = "siamese_few_shot";
inline constexpr const char* kBackendMlp = "mlp";
inline constexpr const char* kBackendProjector = "projector";

struct SiameseBackendCfg {
  bool enabled = false;
  SiameseLossMode mode = SiameseLossMode::contrastive;
  SiameseHyper hyper;
  std::size_t n_pairs = 2000;
  std::uint64_t seed = 0;
};

struct MlpBackendCfg {
  bool enabled = false;
  MlpHyper hyper;
  std::uint64_t seed = 0;
};

struct ProjectorBackendCfg {
  bool enabled = false;
  ProjectorHyper hyper;
  std::uint64_t seed = 0;
};

struct FeatureCfg {
  std::size_t raw_dim = 128;
  double raw_sigma = 0.1;
  std::uint64_t seed = 0;
};

struct EnrollmentCfg {
  std::vector<std::optional<std::size_t>> r_values;  // nullopt: enroll all
  Content content = Content::nc;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir;

  // Data source: either a synthetic generator block, or paths to existing
  // artifacts.  Exactly one of the two is active.
  std::optional<SynthConfig> synth;
  std::string in_embeddings;
  std::string in_manifest;
  std::string in_features;

  std::optional<FeatureCfg> features;  // synthetic raw features

  PartitionConfig partition;
  EnrollmentCfg enrollment;
  TrialSource trial_source = TrialSource::both;

  bool cosine_enabled = true;
  SiameseBackendCfg siamese_zero_shot;
  SiameseBackendCfg siamese_few_shot;
  MlpBackendCfg mlp;
  ProjectorBackendCfg projector;
};

inline std::string r_tag(const std::optional<std::size_t>& r) {
  return r.has_value() ? "r" + std::to_string(*r) : "rall";
}

inline std::string r_label(const std::optional<std::size_t>& r) {
  return r.has_value() ? std::to_string(*r) : "all";
}

// Resolved artifact locations for one run.
struct ArtifactPaths {
  std::string out_dir;
  std::string embeddings;
  std::string manifest;
  std::string features;

  std::string plan() const { return out_dir + "/plan.json"; }
  std::string trials() const { return out_dir + "/trials.tsv"; }
  std::string enroll(Content c, const std::optional<std::size_t>& r) const {
    return out_dir + "/enroll_" + content_name(c) + "_" + r_tag(r) + ".tsv";
  }
  std::string bank(Content c, const std::optional<std::size_t>& r) const {
    return out_dir + "/fingerprints_" + content_name(c) + "_" + r_tag(r) +
           ".bin";
  }
  std::string models_dir() const { return out_dir + "/models"; }
  std::string model(const std::string& backend) const {
    return models_dir() + "/" + backend + ".json";
  }
  std::string scores(Content c, const std::optional<std::size_t>& r) const {
    return out_dir + "/scores_" + content_name(c) + "_" + r_tag(r) + ".tsv";
  }
  std::string report_json(Content c,
                          const std::optional<std::size_t>& r) const {
    return out_dir + "/report_" + content_name(c) + "_" + r_tag(r) + ".json";
  }
  std::string report_tsv(Content c,
                         const std::optional<std::size_t>& r) const {
    return out_dir + "/report_" + content_name(c) + "_" + r_tag(r) + ".tsv";
  }
  std::string trend(Content c) const {
    return out_dir + "/trend_" + content_name(c) + ".tsv";
  }
};

inline ArtifactPaths artifact_paths(const ExperimentConfig& cfg) {
  ArtifactPaths p;
  p.out_dir = cfg.out_dir;
  p.embeddings =
      cfg.synth ? cfg.out_dir + "/embeddings.bin" : cfg.in_embeddings;
  p.manifest = cfg.synth ? cfg.out_dir + "/manifest.tsv" : cfg.in_manifest;
  p.features = cfg.synth ? cfg.out_dir + "/features.bin" : cfg.in_features;
  return p;
}

// ---------------------------------------------------------------------------
// Config loading
// ---------------------------------------------------------------------------

namespace detail {

inline const nlohmann::json& cfg_at(const nlohmann::json& j,
                                    const std::string& key,
                                    const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) {
    throw ConfigError("config: missing \"" + key + "\" in " + where);
  }
  return *it;
}

template <typename T>
inline T cfg_get(const nlohmann::json& j, const std::string& key,
                 const std::string& where) {
  try {
    return cfg_at(j, key, where).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: bad \"" + key + "\" in " + where + ": " +
                      e.what());
  }
}

template <typename T>
inline T cfg_get_or(const nlohmann::json& j, const std::string& key,
                    const std::string& where, const T& fallback) {
  if (j.find(key) == j.end()) return fallback;
  return cfg_get<T>(j, key, where);
}

inline std::string resolve_path(const std::string& raw,
                                const std::filesystem::path& base) {
  std::filesystem::path p(raw);
  if (p.is_absolute()) return p.lexically_normal().string();
  return (base / p).lexically_normal().string();
}

inline SynthConfig synth_from_json(const nlohmann::json& j,
                                   const PartitionConfig& partition) {
  SynthConfig s;
  s.dim = cfg_get<std::size_t>(j, "dim", "synth");
  if (j.count("attacks")) {
    try {
      for (const nlohmann::json& a : j.at("attacks")) {
        SynthAttack atk;
        atk.attack_id = a.at("attack_id").get<std::string>();
        atk.am_id = a.at("am_id").get<std::string>();
        atk.vm_id = a.at("vm_id").get<std::string>();
        atk.am_arch = a.at("am_arch").get<std::string>();
        atk.vm_arch = a.at("vm_arch").get<std::string>();
        s.attacks.push_back(std::move(atk));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: bad synth attack entry: ") +
                        e.what());
    }
  } else {
    const auto n_attacks = cfg_get<std::size_t>(j, "n_attacks", "synth");
    const auto n_am = cfg_get<std::size_t>(j, "n_am", "synth");
    const auto n_vm = cfg_get<std::size_t>(j, "n_vm", "synth");
    try {
      s.attacks = make_attack_grid(n_attacks, n_am, n_vm);
    } catch (const ContractViolation& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  s.train_attacks = partition.train_attacks;
  s.fingerprint_attacks = partition.fingerprint_attacks;
  s.trial_attacks = partition.trial_attacks;
  s.utts_per_attack = cfg_get<std::size_t>(j, "utts_per_attack", "synth");
  s.speakers_per_partition =
      cfg_get_or<std::size_t>(j, "speakers_per_partition", "synth", 10);
  s.noise_sigma = cfg_get<double>(j, "noise_sigma", "synth");
  s.am_weight = cfg_get_or<double>(j, "am_weight", "synth", 1.0);
  s.vm_weight = cfg_get_or<double>(j, "vm_weight", "synth", 1.0);
  s.attack_weight = cfg_get_or<double>(j, "attack_weight", "synth", 1.0);
  s.co_fraction = cfg_get_or<double>(j, "co_fraction", "synth", 0.5);
  s.fingerprint_fraction =
      cfg_get_or<double>(j, "fingerprint_fraction", "synth", 0.5);
  return s;
}

inline void siamese_from_json(const nlohmann::json& j, const char* name,
                              std::uint64_t base_seed,
                              SiameseBackendCfg& out) {
  const std::string where = std::string("backends.") + name;
  out.enabled = cfg_get_or<bool>(j, "enabled", where, true);
  out.mode = siamese_loss_mode_from_name(
      cfg_get_or<std::string>(j, "loss", where, "contrastive"));
  out.n_pairs = cfg_get_or<std::size_t>(j, "n_pairs", where, 2000);
  out.hyper.epochs = cfg_get_or<std::size_t>(j, "epochs", where, 100);
  out.hyper.lr = cfg_get_or<double>(j, "lr", where, 0.001);
  out.hyper.margin = cfg_get_or<double>(j, "margin", where, 1.0);
  out.hyper.ce_scale_init =
      cfg_get_or<double>(j, "ce_scale_init", where, 10.0);
  out.hyper.hidden = cfg_get_or<std::vector<std::size_t>>(
      j, "hidden", where, {128, 64, 32});
  out.hyper.val_fraction = cfg_get_or<double>(j, "val_fraction", where, 0.2);
  out.seed = cfg_get_or<std::uint64_t>(j, "seed", where,
                                       derive_seed(base_seed, fnv1a(name)));
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(
    const nlohmann::json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  cfg.seed = detail::cfg_get<std::uint64_t>(j, "seed", "top level");
  cfg.out_dir = detail::resolve_path(
      detail::cfg_get<std::string>(j, "out_dir", "top level"), base_dir);

  // Partition roles drive both the protocol and (when present) the
  // synthetic generator.
  {
    const nlohmann::json& p = detail::cfg_at(j, "partition", "top level");
    cfg.partition.train_attacks = detail::cfg_get_or<std::vector<std::string>>(
        p, "train_attacks", "partition", {});
    cfg.partition.fingerprint_attacks =
        detail::cfg_get<std::vector<std::string>>(p, "fingerprint_attacks",
                                                  "partition");
    cfg.partition.trial_attacks = detail::cfg_get<std::vector<std::string>>(
        p, "trial_attacks", "partition");
  }

  const bool has_synth = j.count("synth") > 0;
  const bool has_inputs = j.count("inputs") > 0;
  if (has_synth == has_inputs) {
    throw ConfigError(
        "config: exactly one of \"synth\" and \"inputs\" is required");
  }
  if (has_synth) {
    cfg.synth = detail::synth_from_json(j.at("synth"), cfg.partition);
    cfg.synth->seed = derive_seed(cfg.seed, fnv1a("synth"));
  } else {
    const nlohmann::json& in = j.at("inputs");
    cfg.in_embeddings = detail::resolve_path(
        detail::cfg_get<std::string>(in, "embeddings", "inputs"), base_dir);
    cfg.in_manifest = detail::resolve_path(
        detail::cfg_get<std::string>(in, "manifest", "inputs"), base_dir);
    if (in.count("features")) {
      cfg.in_features = detail::resolve_path(
          detail::cfg_get<std::string>(in, "features", "inputs"), base_dir);
    }
  }

  if (j.count("features")) {
    const nlohmann::json& f = j.at("features");
    FeatureCfg fc;
    fc.raw_dim = detail::cfg_get<std::size_t>(f, "raw_dim", "features");
    fc.raw_sigma = detail::cfg_get_or<double>(f, "raw_sigma", "features", 0.1);
    fc.seed = detail::cfg_get_or<std::uint64_t>(
        f, "seed", "features", derive_seed(cfg.seed, fnv1a("features")));
    cfg.features = fc;
  }

  {
    const nlohmann::json& e = detail::cfg_at(j, "enrollment", "top level");
    const nlohmann::json& rv = detail::cfg_at(e, "r_values", "enrollment");
    if (!rv.is_array() || rv.empty()) {
      throw ConfigError("config: enrollment.r_values must be a nonempty "
                        "array");
    }
    std::set<std::string> tags;
    for (const nlohmann::json& v : rv) {
      std::optional<std::size_t> r;
      if (v.is_string() && v.get<std::string>() == "all") {
        r = std::nullopt;
      } else if (v.is_number_unsigned() && v.get<std::size_t>() > 0) {
        r = v.get<std::size_t>();
      } else {
        throw ConfigError(
            "config: enrollment.r_values entries must be positive integers "
            "or \"all\"");
      }
      if (!tags.insert(r_tag(r)).second) {
        throw ConfigError("config: duplicate enrollment size " + r_tag(r));
      }
      cfg.enrollment.r_values.push_back(r);
    }
    cfg.enrollment.content = content_from_name(
        detail::cfg_get_or<std::string>(e, "content", "enrollment", "nc"));
    cfg.enrollment.seed = detail::cfg_get_or<std::uint64_t>(
        e, "seed", "enrollment", derive_seed(cfg.seed, fnv1a("enrollment")));
  }

  if (j.count("trials")) {
    cfg.trial_source = trial_source_from_name(detail::cfg_get_or<std::string>(
        j.at("trials"), "source", "trials", "both"));
  }

  if (j.count("backends")) {
    const nlohmann::json& b = j.at("backends");
    if (b.count("cosine")) {
      cfg.cosine_enabled = detail::cfg_get_or<bool>(
          b.at("cosine"), "enabled", "backends.cosine", true);
    }
    if (b.count(kBackendSiameseZeroShot)) {
      detail::siamese_from_json(b.at(kBackendSiameseZeroShot),
                                kBackendSiameseZeroShot, cfg.seed,
                                cfg.siamese_zero_shot);
    }
    if (b.count(kBackendSiameseFewShot)) {
      detail::siamese_from_json(b.at(kBackendSiameseFewShot),
                                kBackendSiameseFewShot, cfg.seed,
                                cfg.siamese_few_shot);
    }
    if (b.count(kBackendMlp)) {
      const nlohmann::json& m = b.at(kBackendMlp);
      cfg.mlp.enabled =
          detail::cfg_get_or<bool>(m, "enabled", "backends.mlp", true);
      cfg.mlp.hyper.epochs =
          detail::cfg_get_or<std::size_t>(m, "epochs", "backends.mlp", 100);
      cfg.mlp.hyper.lr =
          detail::cfg_get_or<double>(m, "lr", "backends.mlp", 0.001);
      cfg.mlp.hyper.hidden =
          detail::cfg_get_or<std::size_t>(m, "hidden", "backends.mlp", 128);
      cfg.mlp.hyper.val_fraction = detail::cfg_get_or<double>(
          m, "val_fraction", "backends.mlp", 0.2);
      cfg.mlp.seed = detail::cfg_get_or<std::uint64_t>(
          m, "seed", "backends.mlp", derive_seed(cfg.seed, fnv1a("mlp")));
    }
    if (b.count(kBackendProjector)) {
      const nlohmann::json& p = b.at(kBackendProjector);
      cfg.projector.enabled = detail::cfg_get_or<bool>(
          p, "enabled", "backends.projector", true);
      cfg.projector.hyper.scale =
          detail::cfg_get_or<double>(p, "scale", "backends.projector", 30.0);
      cfg.projector.hyper.margin =
          detail::cfg_get_or<double>(p, "margin", "backends.projector", 0.5);
      cfg.projector.hyper.epochs = detail::cfg_get_or<std::size_t>(
          p, "epochs", "backends.projector", 100);
      cfg.projector.hyper.lr =
          detail::cfg_get_or<double>(p, "lr", "backends.projector", 0.0001);
      cfg.projector.hyper.hidden =
          detail::cfg_get_or<std::vector<std::size_t>>(
              p, "hidden", "backends.projector", {128});
      cfg.projector.hyper.embedding_dim = detail::cfg_get_or<std::size_t>(
          p, "embedding_dim", "backends.projector", 64);
      cfg.projector.hyper.val_fraction = detail::cfg_get_or<double>(
          p, "val_fraction", "backends.projector", 0.2);
      cfg.projector.seed = detail::cfg_get_or<std::uint64_t>(
          p, "seed", "backends.projector",
          derive_seed(cfg.seed, fnv1a("projector")));
    }
  }

  if (cfg.projector.enabled) {
    const bool have_features =
        (has_synth && cfg.features.has_value()) ||
        (!has_synth && !cfg.in_features.empty());
    if (!have_features) {
      throw ConfigError(
          "config: the projector backend needs raw features (a \"features\" "
          "block with synth, or inputs.features)");
    }
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path + ": config must be an object");
  return parse_experiment_config(
      j, std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Shared stage helpers
// ---------------------------------------------------------------------------

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " +
                        ec.message());
}

inline Dataset load_dataset(const ArtifactPaths& paths) {
  EmbeddingSet embeddings = read_embeddings(paths.embeddings);
  std::vector<ManifestRecord> records = read_manifest(paths.manifest);
  return validate_manifest(std::move(records), std::move(embeddings));
}

// The enrollment draw for one (attack, r): deterministic in the
// enrollment seed, the attack id, and r, independent of every other draw.
inline std::uint64_t enroll_seed_for(const EnrollmentCfg& e,
                                     const std::string& attack,
                                     const std::optional<std::size_t>& r) {
  return derive_seed(e.seed, fnv1a(attack) ^ (r ? *r : 0));
}

inline std::map<std::string, std::vector<std::string>> enrollment_selection(
    const std::vector<ManifestRecord>& records, const PartitionPlan& plan,
    const EnrollmentCfg& e, const std::optional<std::size_t>& r) {
  std::map<std::string, std::vector<std::string>> by_attack;
  for (const std::string& attack : plan.fingerprint_attacks) {
    by_attack[attack] = select_fingerprint_utts(
        records, plan, attack, r, e.content, enroll_seed_for(e, attack, r));
  }
  return by_attack;
}

inline constexpr const char* kEnrollHeader = "attack_id\tutt_id";

inline void write_enrollment(
    const std::string& path,
    const std::map<std::string, std::vector<std::string>>& selection) {
  std::string text = kEnrollHeader;
  text += '\n';
  for (const auto& [attack, utts] : selection) {
    for (const std::string& u : utts) {
      text += attack;
      text += '\t';
      text += u;
      text += '\n';
    }
  }
  write_text_file(path, text);
}

inline std::map<std::string, std::vector<std::string>> read_enrollment(
    const std::string& path) {
  const std::vector<std::string> lines = split_lines(read_text_file(path));
  if (lines.empty() || lines[0] != kEnrollHeader) {
    throw ParseError(ParseError::Kind::malformed,
                     path + ": missing or wrong enrollment header");
  }
  std::map<std::string, std::vector<std::string>> selection;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> f = split_tabs(lines[i]);
    if (f.size() != 2 || f[0].empty() || f[1].empty()) {
      throw ParseError(ParseError::Kind::malformed,
                       path + " line " + std::to_string(i + 1) +
                           ": expected attack and utt ids");
    }
    selection[f[0]].push_back(f[1]);
  }
  return selection;
}

inline std::vector<std::string> sorted_backend_names(
    const ExperimentConfig& cfg) {
  std::vector<std::string> names;
  if (cfg.cosine_enabled) names.push_back(kBackendCosine);
  if (cfg.siamese_zero_shot.enabled) {
    names.push_back(kBackendSiameseZeroShot);
  }
  if (cfg.siamese_few_shot.enabled) names.push_back(kBackendSiameseFewShot);
  if (cfg.mlp.enabled) names.push_back(kBackendMlp);
  if (cfg.projector.enabled) names.push_back(kBackendProjector);
  std::sort(names.begin(), names.end());
  if (names.empty()) throw ConfigError("config: no backend enabled");
  return names;
}

inline std::vector<std::string> sorted_attacks(
    const std::set<std::string>& s) {
  return {s.begin(), s.end()};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

inline void run_synth(const ExperimentConfig& cfg) {
  if (!cfg.synth) {
    throw ConfigError("synth stage: config has no \"synth\" block");
  }
  detail::ensure_dir(cfg.out_dir);
  const ArtifactPaths paths = artifact_paths(cfg);
  const SynthOutput out = generate(*cfg.synth);
  write_embeddings(out.embeddings, paths.embeddings);
  write_manifest(out.manifest, paths.manifest);
  if (cfg.features) {
    const EmbeddingSet feats = make_raw_features(
        out.embeddings, cfg.features->raw_dim, cfg.features->raw_sigma,
        cfg.features->seed);
    write_embeddings(feats, paths.features);
  }
}

inline void run_protocol(const ExperimentConfig& cfg) {
  detail::ensure_dir(cfg.out_dir);
  const ArtifactPaths paths = artifact_paths(cfg);
  const Dataset data = detail::load_dataset(paths);
  const PartitionPlan plan = partition_attacks(data.records, cfg.partition);

  // Enrollment draws are excluded from the trial list.  With a
  // well-formed manifest the exclusion is vacuous (enrollment lives in the
  // fingerprint partition, trials in the trial partition); it is belt and
  // braces against datasets that blur the two.
  std::set<std::string> exclude;
  for (const std::optional<std::size_t>& r : cfg.enrollment.r_values) {
    for (const auto& [attack, utts] : detail::enrollment_selection(
             data.records, plan, cfg.enrollment, r)) {
      exclude.insert(utts.begin(), utts.end());
    }
  }
  const std::vector<Trial> trials =
      generate_trials(plan, data.records, cfg.trial_source, exclude);
  if (trials.empty()) {
    throw ProtocolError("protocol stage: no trials generated");
  }
  write_plan(paths.plan(), plan);
  write_trials(paths.trials(), trials);
}

inline void run_fingerprint(const ExperimentConfig& cfg) {
  const ArtifactPaths paths = artifact_paths(cfg);
  const Dataset data = detail::load_dataset(paths);
  const PartitionPlan plan = read_plan(paths.plan());

  for (const std::optional<std::size_t>& r : cfg.enrollment.r_values) {
    const std::map<std::string, std::vector<std::string>> selection =
        detail::enrollment_selection(data.records, plan, cfg.enrollment, r);
    detail::write_enrollment(paths.enroll(cfg.enrollment.content, r),
                             selection);

    FingerprintBank bank;
    bank.dim = data.embeddings.dim;
    for (const auto& [attack, utts] : selection) {
      std::vector<std::span<const double>> rows;
      rows.reserve(utts.size());
      for (const std::string& u : utts) rows.push_back(data.embedding_of(u));
      bank.entries.push_back(
          build_fingerprint(rows, attack, cfg.enrollment.content));
    }
    write_bank(paths.bank(cfg.enrollment.content, r), bank);
  }
}

inline void run_train(const ExperimentConfig& cfg) {
  const ArtifactPaths paths = artifact_paths(cfg);
  const Dataset data = detail::load_dataset(paths);
  const PartitionPlan plan = read_plan(paths.plan());
  detail::ensure_dir(paths.models_dir());

  const auto pair_embeddings = [&](const std::vector<UttPair>& utt_pairs) {
    std::vector<EmbeddingPair> pairs;
    pairs.reserve(utt_pairs.size());
    for (const UttPair& up : utt_pairs) {
      EmbeddingPair p;
      const std::span<const double> a = data.embedding_of(up.a);
      const std::span<const double> b = data.embedding_of(up.b);
      p.a.assign(a.begin(), a.end());
      p.b.assign(b.begin(), b.end());
      p.same = up.same;
      pairs.push_back(std::move(p));
    }
    return pairs;
  };

  if (cfg.siamese_zero_shot.enabled) {
    // Zero-shot: pairs over the training attacks only; the comparator
    // never sees an enrolled attack before scoring.
    std::vector<ManifestRecord> pool;
    for (const ManifestRecord& r : data.records) {
      if (r.partition == Partition::train &&
          plan.train_attacks.count(r.attack_id)) {
        pool.push_back(r);
      }
    }
    const std::vector<UttPair> utt_pairs = generate_pairs(
        pool, cfg.siamese_zero_shot.n_pairs,
        derive_seed(cfg.siamese_zero_shot.seed, fnv1a("pairs")));
    const SiameseModel model = train_siamese(
        pair_embeddings(utt_pairs), cfg.siamese_zero_shot.mode,
        cfg.siamese_zero_shot.hyper, cfg.siamese_zero_shot.seed);
    save_siamese(paths.model(kBackendSiameseZeroShot), model);
  }

  // Few-shot training data: every fingerprint-partition row of the
  // enrolled attacks, whatever its content kind.  Enrollment content
  // filtering applies to fingerprints, not to adaptation data.
  std::vector<ManifestRecord> few_shot_pool;
  for (const ManifestRecord& r : data.records) {
    if (r.partition == Partition::fingerprint &&
        plan.fingerprint_attacks.count(r.attack_id)) {
      few_shot_pool.push_back(r);
    }
  }

  if (cfg.siamese_few_shot.enabled) {
    const std::vector<UttPair> utt_pairs = generate_pairs(
        few_shot_pool, cfg.siamese_few_shot.n_pairs,
        derive_seed(cfg.siamese_few_shot.seed, fnv1a("pairs")));
    const SiameseModel model = train_siamese(
        pair_embeddings(utt_pairs), cfg.siamese_few_shot.mode,
        cfg.siamese_few_shot.hyper, cfg.siamese_few_shot.seed);
    save_siamese(paths.model(kBackendSiameseFewShot), model);
  }

  if (cfg.mlp.enabled) {
    std::vector<LabeledExample> examples;
    examples.reserve(few_shot_pool.size());
    for (const ManifestRecord& r : few_shot_pool) {
      LabeledExample e;
      const std::span<const double> v = data.embedding_of(r.utt_id);
      e.vec.assign(v.begin(), v.end());
      e.label = r.attack_id;
      examples.push_back(std::move(e));
    }
    const MlpModel model = train_mlp(
        examples, detail::sorted_attacks(plan.fingerprint_attacks),
        cfg.mlp.hyper, cfg.mlp.seed);
    save_mlp(paths.model(kBackendMlp), model);
  }

  if (cfg.projector.enabled) {
    const EmbeddingSet features = read_embeddings(paths.features);
    std::map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < features.count(); ++i) {
      row_of[features.ids[i]] = i;
    }
    std::vector<LabeledExample> examples;
    for (const ManifestRecord& r : data.records) {
      if (r.partition != Partition::train ||
          !plan.train_attacks.count(r.attack_id)) {
        continue;
      }
      const auto it = row_of.find(r.utt_id);
      if (it == row_of.end()) {
        throw ValidationError("features: no row for training utt " +
                              r.utt_id);
      }
      LabeledExample e;
      const std::span<const double> v = features.row(it->second);
      e.vec.assign(v.begin(), v.end());
      e.label = r.attack_id;
      examples.push_back(std::move(e));
    }
    const ProjectorModel model = train_projector(
        examples, detail::sorted_attacks(plan.train_attacks),
        cfg.projector.hyper, cfg.projector.seed);
    save_projector(paths.model(kBackendProjector), model);
  }
}

inline constexpr const char* kScoresHeader =
    "trial_utt_id\tclaimed_attack_id\tbackend\tscore";

inline void run_score(const ExperimentConfig& cfg) {
  const ArtifactPaths paths = artifact_paths(cfg);
  const Dataset data = detail::load_dataset(paths);
  const std::vector<Trial> trials = read_trials(paths.trials());
  if (trials.empty()) throw ProtocolError("score stage: empty trial list");
  const std::vector<std::string> backends = detail::sorted_backend_names(cfg);

  // Distinct trial utterances, in first-appearance order.
  std::vector<std::string> utts;
  {
    std::set<std::string> seen;
    for (const Trial& t : trials) {
      if (seen.insert(t.utt_id).second) utts.push_back(t.utt_id);
    }
  }

  std::optional<SiameseModel> zero_shot;
  std::optional<SiameseModel> few_shot;
  std::optional<MlpModel> mlp_model;
  std::optional<ProjectorModel> projector_model;
  if (cfg.siamese_zero_shot.enabled) {
    zero_shot = load_siamese(paths.model(kBackendSiameseZeroShot));
  }
  if (cfg.siamese_few_shot.enabled) {
    few_shot = load_siamese(paths.model(kBackendSiameseFewShot));
  }
  if (cfg.mlp.enabled) mlp_model = load_mlp(paths.model(kBackendMlp));

  std::optional<EmbeddingSet> features;
  std::map<std::string, std::size_t> feature_row;
  std::map<std::string, std::vector<double>> projected_utts;
  if (cfg.projector.enabled) {
    projector_model = load_projector(paths.model(kBackendProjector));
    features = read_embeddings(paths.features);
    for (std::size_t i = 0; i < features->count(); ++i) {
      feature_row[features->ids[i]] = i;
    }
    for (const std::string& u : utts) {
      const auto it = feature_row.find(u);
      if (it == feature_row.end()) {
        throw ValidationError("features: no row for trial utt " + u);
      }
      projected_utts[u] =
          project(*projector_model, features->row(it->second));
    }
  }

  for (const std::optional<std::size_t>& r : cfg.enrollment.r_values) {
    const FingerprintBank bank =
        read_bank(paths.bank(cfg.enrollment.content, r));

    // Per-backend score tables over (utt, claimed attack).
    std::map<std::string, ScoreMap> tables;

    // Siamese projections of trial utterances and fingerprints are
    // reused across the cross product.
    const auto siamese_table = [&](const SiameseModel& model) {
      std::map<std::string, std::vector<double>> utt_proj;
      for (const std::string& u : utts) {
        utt_proj[u] = nn::forward(model.trunk, data.embedding_of(u));
      }
      ScoreMap table;
      for (const Fingerprint& fp : bank.entries) {
        const std::vector<double> fp_proj =
            nn::forward(model.trunk, fp.vec);
        for (const std::string& u : utts) {
          table[{u, fp.attack_id}] = cosine_score(utt_proj[u], fp_proj);
        }
      }
      return table;
    };

    for (const std::string& backend : backends) {
      if (backend == kBackendCosine) {
        ScoreMap table;
        for (const Fingerprint& fp : bank.entries) {
          for (const std::string& u : utts) {
            table[{u, fp.attack_id}] =
                cosine_score(data.embedding_of(u), fp.vec);
          }
        }
        tables[backend] = std::move(table);
      } else if (backend == kBackendSiameseZeroShot) {
        tables[backend] = siamese_table(*zero_shot);
      } else if (backend == kBackendSiameseFewShot) {
        tables[backend] = siamese_table(*few_shot);
      } else if (backend == kBackendMlp) {
        // Posterior of the claimed attack; independent of r, so the same
        // scores repeat in every enrollment size's file.
        std::map<std::string, std::size_t> class_of;
        for (std::size_t c = 0; c < mlp_model->class_ids.size(); ++c) {
          class_of[mlp_model->class_ids[c]] = c;
        }
        for (const Fingerprint& fp : bank.entries) {
          if (!class_of.count(fp.attack_id)) {
            throw ValidationError("mlp model has no class for enrolled "
                                  "attack " + fp.attack_id +
                                  "; model and fingerprints disagree");
          }
        }
        ScoreMap table;
        for (const std::string& u : utts) {
          const std::vector<double> probs =
              nn::softmax(nn::forward(mlp_model->net, data.embedding_of(u)));
          for (const Fingerprint& fp : bank.entries) {
            table[{u, fp.attack_id}] = probs[class_of.at(fp.attack_id)];
          }
        }
        tables[backend] = std::move(table);
      } else if (backend == kBackendProjector) {
        // Fingerprints are rebuilt in the projected space from this r's
        // enrollment lists; the original-space bank only supplies ids.
        const std::map<std::string, std::vector<std::string>> selection =
            detail::read_enrollment(
                paths.enroll(cfg.enrollment.content, r));
        ScoreMap table;
        for (const Fingerprint& fp : bank.entries) {
          const auto sel = selection.find(fp.attack_id);
          if (sel == selection.end() || sel->second.empty()) {
            throw ValidationError("enrollment list missing attack " +
                                  fp.attack_id);
          }
          std::vector<std::vector<double>> proj_rows;
          proj_rows.reserve(sel->second.size());
          for (const std::string& u : sel->second) {
            const auto it = feature_row.find(u);
            if (it == feature_row.end()) {
              throw ValidationError("features: no row for enrollment utt " +
                                    u);
            }
            proj_rows.push_back(
                project(*projector_model, features->row(it->second)));
          }
          std::vector<std::span<const double>> views;
          views.reserve(proj_rows.size());
          for (const std::vector<double>& p : proj_rows) {
            views.emplace_back(p);
          }
          const Fingerprint proj_fp =
              build_fingerprint(views, fp.attack_id, fp.content);
          for (const std::string& u : utts) {
            table[{u, fp.attack_id}] =
                cosine_score(projected_utts.at(u), proj_fp.vec);
          }
        }
        tables[backend] = std::move(table);
      }
    }

    std::string text = kScoresHeader;
    text += '\n';
    for (const Trial& t : trials) {
      for (const std::string& backend : backends) {
        const ScoreMap& table = tables.at(backend);
        const auto it = table.find({t.utt_id, t.claimed_attack});
        if (it == table.end()) {
          throw ContractViolation("run_score: missing score for (" +
                                  t.utt_id + ", " + t.claimed_attack + ")");
        }
        text += t.utt_id;
        text += '\t';
        text += t.claimed_attack;
        text += '\t';
        text += backend;
        text += '\t';
        text += format_full(it->second);
        text += '\n';
      }
    }
    write_text_file(paths.scores(cfg.enrollment.content, r), text);
  }
}

inline std::map<std::string, ScoreMap> read_scores(const std::string& path) {
  const std::vector<std::string> lines = split_lines(read_text_file(path));
  if (lines.empty() || lines[0] != kScoresHeader) {
    throw ParseError(ParseError::Kind::malformed,
                     path + ": missing or wrong scores header");
  }
  std::map<std::string, ScoreMap> tables;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> f = split_tabs(lines[i]);
    if (f.size() != 4 || f[0].empty() || f[1].empty() || f[2].empty()) {
      throw ParseError(ParseError::Kind::malformed,
                       path + " line " + std::to_string(i + 1) +
                           ": expected utt, claim, backend, score");
    }
    const char* begin = f[3].c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end != begin + f[3].size() || f[3].empty()) {
      throw ParseError(ParseError::Kind::malformed,
                       path + " line " + std::to_string(i + 1) +
                           ": bad score '" + f[3] + "'");
    }
    if (!std::isfinite(v)) {
      throw ParseError(ParseError::Kind::non_finite,
                       path + " line " + std::to_string(i + 1) +
                           ": non-finite score");
    }
    if (!tables[f[2]].emplace(ScoreKey{f[0], f[1]}, v).second) {
      throw ParseError(ParseError::Kind::malformed,
                       path + " line " + std::to_string(i + 1) +
                           ": duplicate score row");
    }
  }
  return tables;
}

inline void run_eval(const ExperimentConfig& cfg) {
  const ArtifactPaths paths = artifact_paths(cfg);
  const std::vector<Trial> trials = read_trials(paths.trials());
  const std::vector<std::string> backends = detail::sorted_backend_names(cfg);

  std::vector<Condition> conditions;
  if (cfg.trial_source == TrialSource::ood_only) {
    throw ConfigError(
        "eval stage: out-of-distribution-only trials leave no "
        "in-distribution targets to evaluate");
  }
  conditions.push_back(Condition::id);
  if (cfg.trial_source == TrialSource::both) {
    conditions.push_back(Condition::ood);
  }

  for (const std::optional<std::size_t>& r : cfg.enrollment.r_values) {
    const std::map<std::string, ScoreMap> tables =
        read_scores(paths.scores(cfg.enrollment.content, r));
    EerReport report;
    report.content = content_name(cfg.enrollment.content);
    report.r_tag = r_tag(r);
    for (const std::string& backend : backends) {
      const auto it = tables.find(backend);
      if (it == tables.end()) {
        throw ValidationError("scores file has no rows for backend " +
                              backend);
      }
      for (Level level : kAllLevels) {
        for (Condition cond : conditions) {
          const std::vector<ScoredTrial> pool =
              pool_by_level(trials, it->second, level, cond);
          report.cells[backend][level_name(level)][condition_name(cond)] =
              eer_cell(pool);
        }
      }
    }
    write_report_json(paths.report_json(cfg.enrollment.content, r), report);
    write_report_tsv(paths.report_tsv(cfg.enrollment.content, r), report);
  }
}

inline constexpr const char* kTrendHeader =
    "r\tbackend\tlevel\tcondition\teer_percent\tn_target\tn_nontarget";

// Collates the per-r reports into one table ordered by the configured
// enrollment sizes, so the effect of enrollment size reads top to bottom.
inline void run_report(const ExperimentConfig& cfg) {
  const ArtifactPaths paths = artifact_paths(cfg);
  std::string text = kTrendHeader;
  text += '\n';
  for (const std::optional<std::size_t>& r : cfg.enrollment.r_values) {
    const EerReport report =
        read_report_json(paths.report_json(cfg.enrollment.content, r));
    for (const auto& [backend, levels] : report.cells) {
      for (Level level : kAllLevels) {
        const auto lit = levels.find(level_name(level));
        if (lit == levels.end()) continue;
        for (Condition cond : kAllConditions) {
          const auto cit = lit->second.find(condition_name(cond));
          if (cit == lit->second.end()) continue;
          const EerCell& cell = cit->second;
          text += r_label(r);
          text += '\t';
          text += backend;
          text += '\t';
          text += level_name(level);
          text += '\t';
          text += condition_name(cond);
          text += '\t';
          text += format_percent(cell.eer);
          text += '\t';
          text += std::to_string(cell.n_target);
          text += '\t';
          text += std::to_string(cell.n_nontarget);
          text += '\n';
        }
      }
    }
  }
  write_text_file(paths.trend(cfg.enrollment.content), text);
}

}  // namespace sourcetrace
