// SPDX-License-Identifier: Apache-2.0

#include "duet/runner.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace duet {

MachineConfig effective_config(const ScenarioProgram& prog,
                               MachineConfig cfg) {
  if (prog.steps) cfg.step_budget = std::min(cfg.step_budget, *prog.steps);
  return cfg.normalized();
}

RunReport run_scenario(const ScenarioProgram& prog, const std::string& name,
                       MachineConfig cfg, const DedupConfig& dedup) {
  cfg = effective_config(prog, cfg);
  Machine m(prog, cfg);
  RunReport r;
  r.scenario = name;
  r.model = cfg.model;
  r.config = cfg;
  r.outcome = m.run();
  r.key = normalize(r.outcome, dedup);
  return r;
}

DiffReport run_differential(const ScenarioProgram& prog,
                            const std::string& name, const MachineConfig& cfg,
                            const DedupConfig& dedup) {
  MachineConfig s = cfg;
  s.model = Model::StackedBorrows;
  MachineConfig t = cfg;
  t.model = Model::TreeBorrows;
  DiffReport d;
  d.sb = run_scenario(prog, name, s, dedup);
  d.tb = run_scenario(prog, name, t, dedup);
  d.verdict = verdict_of(d.sb.outcome, d.tb.outcome);
  return d;
}

MachineConfig with_flags(MachineConfig base,
                         const std::vector<std::string>& flags) {
  for (const auto& f : flags) {
    if (f == "strict-provenance") base.strict_provenance = true;
    if (f == "zero-init-foreign") base.zero_init_foreign = true;
    if (f == "no-permissive-loads") base.permissive_foreign_loads = false;
    if (f == "no-symbolic-alignment") base.symbolic_alignment = false;
    if (f == "no-unique-as-mutable") base.unique_as_mutable = false;
  }
  return base.normalized();
}

std::string outcome_label(const Outcome& o) {
  std::string s = classification_name(o.cls);
  if (o.cls == Classification::Bug && o.kind())
    s = fmt::format("bug({})", kind_name(*o.kind()));
  if (!o.leaks.empty()) s += fmt::format(" leaks {}", o.leaks.size());
  return s;
}

namespace {

std::string expectation_label(const Expectation& e) {
  std::string s = expect_outcome_name(e.outcome);
  if (e.outcome == Expectation::Outcome::Bug && e.kind)
    s = fmt::format("bug({})", kind_name(*e.kind));
  if (e.leaks) s += fmt::format(" leaks {}", *e.leaks);
  return s;
}

Classification to_class(Expectation::Outcome o) {
  switch (o) {
    case Expectation::Outcome::Pass: return Classification::Pass;
    case Expectation::Outcome::Bug: return Classification::Bug;
    case Expectation::Outcome::Unsupported: return Classification::Unsupported;
    case Expectation::Outcome::Timeout: return Classification::Timeout;
  }
  return Classification::Pass;
}

}  // namespace

std::string check_expectation(const Expectation& e, const Outcome& o) {
  bool ok = o.cls == to_class(e.outcome);
  if (ok && e.outcome == Expectation::Outcome::Bug && e.kind)
    ok = o.kind() == e.kind;
  if (ok && e.leaks) ok = o.leaks.size() == *e.leaks;
  if (ok) return {};
  return fmt::format("expected {}, got {}", expectation_label(e),
                     outcome_label(o));
}

std::vector<std::filesystem::path> list_scenarios(
    const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".scn")
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

CorpusSummary run_corpus(const std::filesystem::path& dir,
                         const CorpusOptions& opts) {
  CorpusSummary sum;
  std::vector<DedupKey> keys;
  for (const auto& path : list_scenarios(dir)) {
    ScenarioResult sr;
    sr.path = std::filesystem::relative(path, dir).generic_string();
    std::ifstream in(path);
    std::stringstream buf;
    buf << in.rdbuf();
    ScenarioProgram prog;
    try {
      prog = parse_scenario(buf.str());
    } catch (const ParseError& e) {
      sr.parse_error = fmt::format("line {}: {}", e.line(), e.detail());
      ++sum.mismatches;
      sum.scenarios.push_back(std::move(sr));
      continue;
    }
    sr.tags = prog.tags;
    if (opts.both_models) {
      DiffReport d = run_differential(prog, sr.path, opts.base, opts.dedup);
      sr.runs = {d.sb, d.tb};
      sr.verdict = d.verdict;
    } else {
      sr.runs = {run_scenario(prog, sr.path, opts.base, opts.dedup)};
    }
    for (const RunReport& r : sr.runs) {
      ++sum.counts[model_name(r.model)][classification_name(r.outcome.cls)];
      if (r.outcome.cls != Classification::Pass) {
        keys.push_back(*r.key);
        sum.group_index.emplace_back(sum.scenarios.size(),
                                     static_cast<std::size_t>(&r - sr.runs.data()));
      }
    }
    // Expectations carry their own model and flags; results are cached per
    // configuration.
    std::map<std::pair<int, std::vector<std::string>>, Outcome> cache;
    for (const Expectation& e : prog.expectations) {
      std::vector<Model> models;
      if (e.model) {
        models = {*e.model};
      } else {
        models = {Model::StackedBorrows, Model::TreeBorrows};
      }
      std::vector<std::string> flags = e.flags;
      std::sort(flags.begin(), flags.end());
      for (Model m : models) {
        auto key = std::pair{static_cast<int>(m), flags};
        auto it = cache.find(key);
        if (it == cache.end()) {
          MachineConfig cfg = with_flags(opts.base, flags);
          cfg.model = m;
          it = cache.emplace(key, run_scenario(prog, sr.path, cfg).outcome)
                   .first;
        }
        ExpectationResult er;
        er.line = e.line;
        er.model = m;
        er.expected = expectation_label(e);
        er.actual = outcome_label(it->second);
        er.ok = check_expectation(e, it->second).empty();
        if (!er.ok) ++sum.mismatches;
        sr.expectations.push_back(std::move(er));
      }
    }
    sum.scenarios.push_back(std::move(sr));
  }
  sum.groups = dedup(keys);
  return sum;
}

std::string render_summary(const CorpusSummary& s) {
  std::string out;
  std::size_t width = 8;
  for (const auto& sr : s.scenarios) width = std::max(width, sr.path.size());
  for (const auto& sr : s.scenarios) {
    out += fmt::format("{:<{}}", sr.path, width);
    if (sr.parse_error) {
      out += "  parse error: " + *sr.parse_error + "\n";
      continue;
    }
    for (const auto& r : sr.runs)
      out += fmt::format("  {}={}", model_name(r.model), outcome_label(r.outcome));
    if (sr.verdict) out += fmt::format("  [{}]", verdict_name(*sr.verdict));
    out += "\n";
    for (const auto& e : sr.expectations)
      if (!e.ok)
        out += fmt::format("  MISMATCH line {} ({}): expected {}, got {}\n",
                           e.line, model_name(e.model), e.expected, e.actual);
  }
  out += "\ncounts:\n";
  for (const auto& [model, m] : s.counts) {
    out += fmt::format("  {}:", model);
    for (const auto& [cls, n] : m) out += fmt::format(" {}={}", cls, n);
    out += "\n";
  }
  out += fmt::format("\ndedup groups: {}\n", s.groups.size());
  for (const auto& g : s.groups) {
    auto [si, ri] = s.group_index[g.representative];
    out += fmt::format("  {} x{}  e.g. {} ({})\n", g.key.str(), g.members.size(),
                       s.scenarios[si].path,
                       model_name(s.scenarios[si].runs[ri].model));
  }
  std::size_t total = 0;
  for (const auto& sr : s.scenarios) total += sr.expectations.size();
  out += fmt::format("\nexpectations: {} checked, {} mismatched\n", total,
                     s.mismatches);
  return out;
}

std::string summary_json(const CorpusSummary& s, int indent) {
  using json = nlohmann::ordered_json;
  json scen = json::array();
  for (const auto& sr : s.scenarios) {
    json runs = json::array();
    for (const auto& r : sr.runs)
      runs.push_back(json::parse(to_json(r, -1)));
    json exps = json::array();
    for (const auto& e : sr.expectations)
      exps.push_back(json{{"line", e.line},
                          {"model", model_name(e.model)},
                          {"expected", e.expected},
                          {"actual", e.actual},
                          {"ok", e.ok}});
    scen.push_back(json{
        {"path", sr.path},
        {"tags", sr.tags},
        {"parse_error", sr.parse_error ? json(*sr.parse_error) : json(nullptr)},
        {"runs", runs},
        {"verdict", sr.verdict ? json(verdict_name(*sr.verdict)) : json(nullptr)},
        {"expectations", exps}});
  }
  json groups = json::array();
  for (const auto& g : s.groups) {
    json members = json::array();
    for (auto m : g.members) {
      auto [si, ri] = s.group_index[m];
      members.push_back(json{{"scenario", s.scenarios[si].path},
                             {"model", model_name(s.scenarios[si].runs[ri].model)}});
    }
    groups.push_back(json{{"key", g.key.str()}, {"members", members}});
  }
  json j{{"scenarios", scen},
         {"counts", s.counts},
         {"dedup_groups", groups},
         {"mismatches", s.mismatches}};
  return j.dump(indent);
}

}  // namespace duet
