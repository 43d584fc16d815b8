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
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sourcetrace/error.hpp"
#include "sourcetrace/protocol.hpp"
#include "sourcetrace/text_io.hpp"

namespace sourcetrace {

// Evaluation condition: the in-distribution pool tests discrimination
// among enrolled sources only; the out-of-distribution pool pits enrolled
// targets against impostor utterances from sources never enrolled.
enum class Condition { id, ood };

inline constexpr std::array<Condition, 2> kAllConditions = {Condition::id,
                                                            Condition::ood};

inline std::string condition_name(Condition c) {
  return c == Condition::id ? "ID" : "OOD";
}

inline Condition condition_from_name(const std::string& s) {
  if (s == "ID") return Condition::id;
  if (s == "OOD") return Condition::ood;
  throw ParseError(ParseError::Kind::malformed, "unknown condition: " + s);
}

struct ScoredTrial {
  double score = 0.0;
  bool target = false;
};

struct DetPoint {
  double far = 0.0;
  double frr = 0.0;
  double threshold = 0.0;
};

// Operating points of the accept-if-score->=-threshold rule, one per
// distinct score value in ascending order, plus a final point above every
// score where nothing is accepted.  At threshold t:
//   FAR = fraction of nontarget scores >= t,  FRR = fraction of targets < t.
// Everything is computed from exact counts, so any strictly increasing
// transform of the scores yields bit-identical points.
inline std::vector<DetPoint> det_points(
    const std::vector<ScoredTrial>& trials) {
  std::vector<double> targets;
  std::vector<double> nontargets;
  for (const ScoredTrial& t : trials) {
    if (!std::isfinite(t.score)) {
      throw ContractViolation("det_points: non-finite score");
    }
    (t.target ? targets : nontargets).push_back(t.score);
  }
  if (targets.empty() || nontargets.empty()) {
    throw ContractViolation(
        "det_points: need at least one target and one nontarget trial");
  }
  std::sort(targets.begin(), targets.end());
  std::sort(nontargets.begin(), nontargets.end());

  std::vector<double> values;
  values.reserve(targets.size() + nontargets.size());
  values.insert(values.end(), targets.begin(), targets.end());
  values.insert(values.end(), nontargets.begin(), nontargets.end());
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());

  const double n_t = static_cast<double>(targets.size());
  const double n_n = static_cast<double>(nontargets.size());
  std::vector<DetPoint> points;
  points.reserve(values.size() + 1);
  for (double v : values) {
    const auto t_below = static_cast<double>(
        std::lower_bound(targets.begin(), targets.end(), v) -
        targets.begin());
    const auto n_at_or_above = static_cast<double>(
        nontargets.end() -
        std::lower_bound(nontargets.begin(), nontargets.end(), v));
    points.push_back({n_at_or_above / n_n, t_below / n_t, v});
  }
  points.push_back({0.0, 1.0, values.back() + 1.0});
  return points;
}

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Equal error rate by linear interpolation between the two adjacent
// operating points where FAR - FRR changes sign.  FAR is non-increasing
// and FRR non-decreasing along the threshold sweep, so the crossing is
// unique up to plateaus; the first bracketing segment is used, with t = 0
// when the segment starts exactly on the crossing.
inline EerResult compute_eer(const std::vector<ScoredTrial>& trials) {
  const std::vector<DetPoint> points = det_points(trials);
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const double d0 = points[i].far - points[i].frr;
    const double d1 = points[i + 1].far - points[i + 1].frr;
    if (d0 >= 0.0 && d1 <= 0.0) {
      const double t = (d0 == 0.0 && d1 == 0.0) ? 0.0 : d0 / (d0 - d1);
      EerResult r;
      r.eer = points[i].far + t * (points[i + 1].far - points[i].far);
      r.threshold = points[i].threshold +
                    t * (points[i + 1].threshold - points[i].threshold);
      return r;
    }
  }
  // Unreachable: the sweep starts at FAR 1, FRR 0 and ends at FAR 0, FRR 1.
  throw NumericError("compute_eer: no crossing found");
}

// ---------------------------------------------------------------------------
// Pooling trials into per-level, per-condition score sets
// ---------------------------------------------------------------------------

using ScoreKey = std::pair<std::string, std::string>;  // (utt, claimed)
using ScoreMap = std::map<ScoreKey, double>;

// The ID pool keeps every in-distribution trial, labeled by whether claim
// and true source match at the given level.  The OOD pool tests rejection
// of unseen sources: its targets are the in-distribution matches and its
// nontargets the out-of-distribution utterances that do not match the
// claim at the level (an unseen attack can still share a component with an
// enrolled one, and such trials belong to neither side).
inline std::vector<ScoredTrial> pool_by_level(const std::vector<Trial>& trials,
                                              const ScoreMap& scores,
                                              Level level,
                                              Condition condition) {
  std::vector<ScoredTrial> pool;
  for (const Trial& t : trials) {
    const bool tgt = trial_target(t, level);
    bool keep = false;
    if (condition == Condition::id) {
      keep = !t.ood;
    } else {
      keep = t.ood ? !tgt : tgt;
    }
    if (!keep) continue;
    const auto it = scores.find({t.utt_id, t.claimed_attack});
    if (it == scores.end()) {
      throw ValidationError("pool_by_level: no score for trial (" +
                            t.utt_id + ", " + t.claimed_attack + ")");
    }
    pool.push_back({it->second, tgt});
  }
  bool has_target = false;
  bool has_nontarget = false;
  for (const ScoredTrial& s : pool) {
    (s.target ? has_target : has_nontarget) = true;
  }
  if (!has_target || !has_nontarget) {
    throw ProtocolError("pool_by_level: " + level_name(level) + "/" +
                        condition_name(condition) +
                        " pool lacks a target or nontarget trial");
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EerCell {
  double eer = 0.0;
  double threshold = 0.0;
  std::size_t n_target = 0;
  std::size_t n_nontarget = 0;
};

inline EerCell eer_cell(const std::vector<ScoredTrial>& pool) {
  EerCell cell;
  for (const ScoredTrial& s : pool) {
    if (s.target) {
      ++cell.n_target;
    } else {
      ++cell.n_nontarget;
    }
  }
  const EerResult r = compute_eer(pool);
  cell.eer = r.eer;
  cell.threshold = r.threshold;
  return cell;
}

// backend -> level name -> condition name -> cell
using ReportCells =
    std::map<std::string,
             std::map<std::string, std::map<std::string, EerCell>>>;

struct EerReport {
  std::string content;  // enrollment content kind
  std::string r_tag;    // enrollment size tag: "r5", "rall", ...
  ReportCells cells;
};

inline constexpr const char* kReportFormat = "sourcetrace-report";
inline constexpr int kReportVersion = 1;

inline void write_report_json(const std::string& path,
                              const EerReport& report) {
  nlohmann::json j;
  j["format"] = kReportFormat;
  j["version"] = kReportVersion;
  j["content"] = report.content;
  j["r_tag"] = report.r_tag;
  nlohmann::json cells = nlohmann::json::object();
  for (const auto& [backend, levels] : report.cells) {
    for (const auto& [level, conds] : levels) {
      for (const auto& [cond, cell] : conds) {
        nlohmann::json c;
        c["eer"] = cell.eer;
        c["threshold"] = cell.threshold;
        c["n_target"] = cell.n_target;
        c["n_nontarget"] = cell.n_nontarget;
        cells[backend][level][cond] = std::move(c);
      }
    }
  }
  j["cells"] = std::move(cells);
  write_text_file(path, j.dump(2) + "\n");
}

inline EerReport read_report_json(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseError::Kind::malformed,
                     path + ": invalid JSON: " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kReportFormat) {
      throw ValidationError(path + ": not a report file");
    }
    if (j.at("version").get<int>() != kReportVersion) {
      throw ValidationError(path + ": unsupported report version");
    }
    EerReport report;
    report.content = j.at("content").get<std::string>();
    report.r_tag = j.at("r_tag").get<std::string>();
    for (const auto& [backend, levels] : j.at("cells").items()) {
      for (const auto& [level, conds] : levels.items()) {
        for (const auto& [cond, c] : conds.items()) {
          EerCell cell;
          cell.eer = c.at("eer").get<double>();
          cell.threshold = c.at("threshold").get<double>();
          cell.n_target = c.at("n_target").get<std::size_t>();
          cell.n_nontarget = c.at("n_nontarget").get<std::size_t>();
          report.cells[backend][level][cond] = cell;
        }
      }
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": bad report structure: " + e.what());
  }
}

inline constexpr const char* kReportTsvHeader =
    "backend\tlevel\tcondition\tn_target\tn_nontarget\teer_percent\t"
    "threshold";

// Human-oriented view: levels in granularity order, EER as a percentage
// with two decimals.  The JSON report is the full-precision artifact.
inline void write_report_tsv(const std::string& path,
                             const EerReport& report) {
  std::string text = kReportTsvHeader;
  text += '\n';
  for (const auto& [backend, levels] : report.cells) {
    for (Level level : kAllLevels) {
      const auto lit = levels.find(level_name(level));
      if (lit == levels.end()) continue;
      for (Condition cond : kAllConditions) {
        const auto cit = lit->second.find(condition_name(cond));
        if (cit == lit->second.end()) continue;
        const EerCell& cell = cit->second;
        text += backend;
        text += '\t';
        text += level_name(level);
        text += '\t';
        text += condition_name(cond);
        text += '\t';
        text += std::to_string(cell.n_target);
        text += '\t';
        text += std::to_string(cell.n_nontarget);
        text += '\t';
        text += format_percent(cell.eer);
        text += '\t';
        text += format_full(cell.threshold);
        text += '\n';
      }
    }
  }
  write_text_file(path, text);
}

}  // namespace sourcetrace
