// SPDX-License-Identifier: Apache-2.0
//
// Running scenarios: single runs, SB-vs-TB comparison, and whole corpus
// directories with their `expect` annotations.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "duet/report.hpp"

namespace duet {

/// The step budget of a run: the smaller of the configured budget and the
/// scenario's own `steps` directive.
MachineConfig effective_config(const ScenarioProgram& prog,
                               MachineConfig cfg);

RunReport run_scenario(const ScenarioProgram& prog, const std::string& name,
                       MachineConfig cfg, const DedupConfig& dedup = {});

/// Runs under both models with the same seed.
DiffReport run_differential(const ScenarioProgram& prog,
                            const std::string& name, const MachineConfig& cfg,
                            const DedupConfig& dedup = {});

/// Applies an expectation's `+flag`s on top of `base`.
MachineConfig with_flags(MachineConfig base,
                         const std::vector<std::string>& flags);

/// Empty when `o` satisfies `e`, otherwise what differs.
std::string check_expectation(const Expectation& e, const Outcome& o);

struct ExpectationResult {
  int line = 0;
  Model model = Model::TreeBorrows;
  std::string expected;
  std::string actual;
  bool ok = false;
};

struct ScenarioResult {
  std::string path;  // relative to the corpus root
  std::vector<std::string> tags;
  std::optional<std::string> parse_error;
  std::vector<RunReport> runs;  // one per model of the base config
  std::optional<Verdict> verdict;
  std::vector<ExpectationResult> expectations;
};

struct CorpusSummary {
  std::vector<ScenarioResult> scenarios;
  /// Counts per classification label, per model.
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  std::vector<DedupGroup> groups;
  std::vector<std::pair<std::size_t, std::size_t>> group_index;  // (scenario, run)
  std::size_t mismatches = 0;
};

struct CorpusOptions {
  MachineConfig base;
  bool both_models = true;
  DedupConfig dedup;
};

std::vector<std::filesystem::path> list_scenarios(
    const std::filesystem::path& dir);
CorpusSummary run_corpus(const std::filesystem::path& dir,
                         const CorpusOptions& opts);
std::string render_summary(const CorpusSummary& s);
std::string summary_json(const CorpusSummary& s, int indent = 2);

std::string outcome_label(const Outcome& o);

}  // namespace duet
