// SPDX-License-Identifier: Apache-2.0
//
// duet: run scenario programs under Stacked Borrows and/or Tree Borrows.
//
// Exit codes: 0 pass, 1 UB diagnostic, 2 unsupported, 3 timeout, 4 leaks
// only, 64 usage or parse error. A corpus run exits 1 on any expectation
// mismatch.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "duet/runner.hpp"

namespace {

constexpr int kUsage = 64;

int severity(int code) {
  // Order in which a combined run reports: bug, unsupported, timeout, leaks.
  switch (code) {
    case 1: return 4;
    case 2: return 3;
    case 3: return 2;
    case 4: return 1;
    default: return 0;
  }
}

int worst(int a, int b) { return severity(a) >= severity(b) ? a : b; }

bool emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return true;
  }
  std::ofstream out(out_path);
  if (!out) return false;
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
  return static_cast<bool>(out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Run host/foreign scenario programs under an aliasing model"};
  std::vector<std::string> paths;
  std::string model = "tb";
  std::string format = "text";
  std::string out_path;
  std::string corpus;
  bool diff = false;
  bool no_boundary = false;
  duet::MachineConfig cfg;
  bool no_permissive = false;
  bool no_symbolic = false;
  bool no_unique = false;

  app.add_option("scenario", paths, "Scenario files (.scn)");
  app.add_option("--model", model, "Aliasing model")
      ->check(CLI::IsMember({"tb", "sb", "both"}));
  app.add_flag("--strict-provenance", cfg.strict_provenance,
               "Integer-to-pointer casts are errors");
  app.add_flag("--zero-init-foreign", cfg.zero_init_foreign,
               "Zero-initialize foreign stack and heap allocations");
  app.add_flag("--no-permissive-loads", no_permissive,
               "Foreign loads of uninitialized bytes are errors");
  app.add_flag("--no-symbolic-alignment", no_symbolic,
               "Check alignment against concrete addresses");
  app.add_flag("--no-unique-as-mutable", no_unique,
               "Do not retag box contents as mutable references");
  app.add_option("--seed", cfg.seed, "Scheduler seed");
  app.add_option("--address-seed", cfg.address_seed,
                 "Seed for the base address of the allocator");
  app.add_option("--steps", cfg.step_budget, "Step budget")
      ->capture_default_str();
  app.add_option("--format", format, "Report format")
      ->check(CLI::IsMember({"text", "json"}));
  app.add_option("--out", out_path, "Write the report to a file");
  app.add_flag("--diff", diff, "Compare Stacked Borrows with Tree Borrows");
  app.add_option("--corpus", corpus, "Run every .scn file under a directory");
  app.add_flag("--dedup-exclude-boundary", no_boundary,
               "Leave the boundary call-site frame out of foreign dedup keys");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  cfg.permissive_foreign_loads = !no_permissive;
  cfg.symbolic_alignment = !no_symbolic;
  cfg.unique_as_mutable = !no_unique;
  cfg.model = model == "sb" ? duet::Model::StackedBorrows
                            : duet::Model::TreeBorrows;
  if (diff) model = "both";
  duet::DedupConfig dedup{!no_boundary};
  const bool json = format == "json";

  if (!corpus.empty()) {
    if (!paths.empty()) {
      std::cerr << "duet: --corpus takes no scenario arguments\n";
      return kUsage;
    }
    std::error_code ec;
    if (!std::filesystem::is_directory(corpus, ec)) {
      std::cerr << "duet: " << corpus << " is not a directory\n";
      return kUsage;
    }
    duet::CorpusOptions opts{cfg, model == "both", dedup};
    duet::CorpusSummary s = duet::run_corpus(corpus, opts);
    std::string text = json ? duet::summary_json(s) : duet::render_summary(s);
    if (!emit(text, out_path)) {
      std::cerr << "duet: cannot write " << out_path << "\n";
      return kUsage;
    }
    return s.mismatches == 0 ? 0 : 1;
  }

  if (paths.empty()) {
    std::cerr << "duet: no scenario given\n" << app.help();
    return kUsage;
  }

  int code = 0;
  std::string report;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) {
      std::cerr << "duet: cannot read " << path << "\n";
      return kUsage;
    }
    std::stringstream buf;
    buf << in.rdbuf();
    duet::ScenarioProgram prog;
    try {
      prog = duet::parse_scenario(buf.str());
    } catch (const duet::ParseError& e) {
      std::cerr << fmt::format("{}:{}:{}: {}\n", path, e.line(), e.col(),
                               e.detail());
      return kUsage;
    }
    if (model == "both") {
      duet::DiffReport d = duet::run_differential(prog, path, cfg, dedup);
      report += json ? duet::to_json(d) + "\n" : duet::render_text(d);
      code = worst(code, worst(duet::exit_code(d.sb.outcome),
                               duet::exit_code(d.tb.outcome)));
    } else {
      duet::RunReport r = duet::run_scenario(prog, path, cfg, dedup);
      report += json ? duet::to_json(r) + "\n" : duet::render_text(r);
      code = worst(code, duet::exit_code(r.outcome));
    }
  }
  if (!emit(report, out_path)) {
    std::cerr << "duet: cannot write " << out_path << "\n";
    return kUsage;
  }
  return code;
}
