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

#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "sourcetrace/experiment.hpp"
#include "sourcetrace/gradcheck.hpp"

namespace {

// Exit codes:
//   0  success (including --help)
//   1  usage problems, bad config, missing or unwritable files
//   2  malformed or inconsistent data artifacts
//   3  numeric failures and internal contract violations
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

int run_gradcheck(int points, std::uint64_t seed, double tolerance) {
  const std::vector<sourcetrace::nn::GradCheckReport> reports =
      sourcetrace::nn::run_loss_gradchecks(points, seed, tolerance);
  bool all_pass = true;
  for (const sourcetrace::nn::GradCheckReport& r : reports) {
    std::printf("%-16s max relative error %.3e over %d points "
                "(tolerance %.1e) -- %s\n",
                r.loss_name.c_str(), r.max_rel_error, r.points, r.tolerance,
                r.pass ? "ok" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  if (!all_pass) {
    throw sourcetrace::NumericError(
        "gradcheck: analytic and numeric gradients disagree");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "sourcetrace: fingerprint enrollment, scoring backends, and "
      "multi-level evaluation for tracing spoofed speech to its source "
      "system"};
  app.require_subcommand(1);

  std::string config_path;
  const auto add_stage = [&](const char* name, const char* desc) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("-c,--config", config_path,
                    "experiment config file (JSON)")
        ->required();
    return sub;
  };

  CLI::App* synth =
      add_stage("synth", "generate the synthetic embedding dataset");
  CLI::App* protocol =
      add_stage("protocol", "build the partition plan and trial list");
  CLI::App* fingerprint =
      add_stage("fingerprint", "enroll fingerprints for each size r");
  CLI::App* train = add_stage("train", "train the enabled backends");
  CLI::App* score = add_stage("score", "score every trial with every "
                                       "enabled backend");
  CLI::App* eval_cmd =
      add_stage("eval", "pool scores and compute per-level EERs");
  CLI::App* report =
      add_stage("report", "collate reports into the enrollment-size trend");

  int grad_points = 100;
  std::uint64_t grad_seed = 20260819;
  double grad_tolerance = 1e-4;
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "audit analytic loss gradients against finite "
                   "differences");
  gradcheck->add_option("--points", grad_points,
                        "random instances per loss (default 100)");
  gradcheck->add_option("--seed", grad_seed, "random seed");
  gradcheck->add_option("--tolerance", grad_tolerance,
                        "max relative error allowed (default 1e-4)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);  // prints the usage message
    return kExitUsage;
  }

  try {
    if (gradcheck->parsed()) {
      return run_gradcheck(grad_points, grad_seed, grad_tolerance);
    }
    const sourcetrace::ExperimentConfig cfg =
        sourcetrace::load_experiment_config(config_path);
    if (synth->parsed()) {
      sourcetrace::run_synth(cfg);
    } else if (protocol->parsed()) {
      sourcetrace::run_protocol(cfg);
    } else if (fingerprint->parsed()) {
      sourcetrace::run_fingerprint(cfg);
    } else if (train->parsed()) {
      sourcetrace::run_train(cfg);
    } else if (score->parsed()) {
      sourcetrace::run_score(cfg);
    } else if (eval_cmd->parsed()) {
      sourcetrace::run_eval(cfg);
    } else if (report->parsed()) {
      sourcetrace::run_report(cfg);
    }
    return 0;
  } catch (const sourcetrace::ConfigError& e) {
    std::fprintf(stderr, "sourcetrace: %s\n", e.what());
    return kExitUsage;
  } catch (const sourcetrace::IoError& e) {
    std::fprintf(stderr, "sourcetrace: %s\n", e.what());
    return kExitUsage;
  } catch (const sourcetrace::ParseError& e) {
    std::fprintf(stderr, "sourcetrace: %s\n", e.what());
    return kExitData;
  } catch (const sourcetrace::ValidationError& e) {
    std::fprintf(stderr, "sourcetrace: %s\n", e.what());
    return kExitData;
  } catch (const sourcetrace::ProtocolError& e) {
    std::fprintf(stderr, "sourcetrace: %s\n", e.what());
    return kExitData;
  } catch (const sourcetrace::Error& e) {
    // NumericError, DegenerateInput, ContractViolation
    std::fprintf(stderr, "sourcetrace: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "sourcetrace: unexpected error: %s\n", e.what());
    return kExitNumeric;
  }
}
