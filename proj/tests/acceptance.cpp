// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks: prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>

#include <fmt/format.h>

#include "duet/runner.hpp"
#include "duet/tree_borrows.hpp"
#include "support.hpp"

using namespace duet;

namespace {

struct Check {
  std::vector<std::string> failures;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

Outcome run(const std::string& rel, Model model,
            const std::vector<std::string>& flags = {}) {
  ScenarioProgram p = test::load(rel);
  MachineConfig c = with_flags({}, flags);
  c.model = model;
  Machine m(p, effective_config(p, c));
  return m.run();
}

constexpr Model TB = Model::TreeBorrows;
constexpr Model SB = Model::StackedBorrows;

bool is_bug(const Outcome& o, DiagKind k) {
  return o.cls == Classification::Bug && o.kind() == k;
}

bool is_pass(const Outcome& o, std::size_t leaks = 0) {
  return o.cls == Classification::Pass && o.leaks.size() == leaks;
}

std::string describe(const Outcome& o) { return outcome_label(o); }

// Runs a scenario under Tree Borrows and returns the tree of the allocation
// labelled `alloc` at the first write from foreign code.
struct Snapshot {
  Outcome outcome;
  std::string table;
};

Snapshot foreign_write_snapshot(const std::string& rel, const std::string& alloc,
                                const std::string& root, std::uint64_t offset) {
  ScenarioProgram p = test::load(rel);
  Machine m(p, {});
  Snapshot s{m.run(), ""};
  for (const auto& [id, a] : m.memory().allocations()) {
    if (a.label != alloc) continue;
    const auto* tb = dynamic_cast<const TreeBorrows*>(a.tracker.get());
    if (tb == nullptr) continue;
    auto r = tb->find_label(root);
    for (const auto& ev : tb->events()) {
      if (ev.site.dialect == Dialect::Foreign && ev.kind == AccessKind::Write &&
          ev.range.contains(offset)) {
        s.table = tb->render_event(ev, offset, r);
        break;
      }
    }
  }
  return s;
}

void criterion1(Check& c) {
  Outcome o = run("aliasing/two-mutable-borrows.scn", TB);
  c.expect(is_bug(o, DiagKind::ExpiredPermission),
           "tb outcome " + describe(o));
  if (o.diagnostics.empty()) return;
  const Diagnostic& d = o.diagnostics[0];
  c.expect(d.site.line == 13 && d.site.text == "*z = 0",
           "error site " + render_site(d.site));
  c.expect(d.permission_table ==
               "└┬ x: Active\n"
               " ├─ y: Reserved → Active\n"
               " └─ z: Reserved → Disabled",
           "table:\n" + d.permission_table);
}

void criterion2(Check& c) {
  Outcome t = run("aliasing/write-through-shared.scn", TB);
  Outcome s = run("aliasing/write-through-shared.scn", SB);
  c.expect(is_bug(t, DiagKind::InsufficientPermission), "tb " + describe(t));
  c.expect(s.cls == Classification::Bug, "sb " + describe(s));
}

void criterion3(Check& c) {
  for (Model m : {TB, SB}) {
    Outcome o = run("aliasing/dealloc-protected.scn", m);
    c.expect(is_bug(o, DiagKind::ProtectedPermission),
             fmt::format("{} protected: {}", model_name(m), describe(o)));
    Outcome r = run("aliasing/dealloc-raw-param.scn", m);
    c.expect(is_pass(r), fmt::format("{} raw: {}", model_name(m), describe(r)));
  }
}

void criterion4(Check& c) {
  DiffReport d = run_differential(test::load("aliasing/field-offset.scn"),
                                  "field-offset", {});
  c.expect(d.verdict == Verdict::SbOnlyViolation,
           std::string("verdict ") + verdict_name(d.verdict));
  c.expect(is_bug(d.sb.outcome, DiagKind::AccessOutOfBounds),
           "sb " + describe(d.sb.outcome));
  c.expect(is_pass(d.tb.outcome), "tb " + describe(d.tb.outcome));
}

void criterion5(Check& c) {
  Snapshot pre = foreign_write_snapshot("ownership/self-ref-open.scn", "s", "a", 0);
  c.expect(is_bug(pre.outcome, DiagKind::ExpiredPermission),
           "pre-fix " + describe(pre.outcome));
  if (!pre.outcome.diagnostics.empty()) {
    const Diagnostic& d = pre.outcome.diagnostics[0];
    c.expect(d.site.dialect == Dialect::Host && d.site.text == "let v: i32 = b->cache",
             "pre-fix site " + render_site(d.site));
  }
  c.expect(pre.table ==
               "└┬ a: Reserved → Active\n"
               " ├─ cache: Reserved → Active\n"
               " └─ b: Reserved → Disabled",
           "pre-fix table:\n" + pre.table);
  Snapshot post =
      foreign_write_snapshot("ownership/self-ref-open-cell.scn", "s", "a", 0);
  c.expect(is_pass(post.outcome), "post-fix " + describe(post.outcome));
  c.expect(post.table ==
               "└┬ a: Reserved* → Active\n"
               " └─ b: Reserved*",
           "post-fix table:\n" + post.table);
}

void criterion6(Check& c) {
  Outcome pre = run("ownership/cyclic-stream.scn", TB);
  c.expect(is_bug(pre, DiagKind::ExpiredPermission), "pre-fix " + describe(pre));
  if (!pre.diagnostics.empty()) {
    const Diagnostic& d = pre.diagnostics[0];
    c.expect(d.site.dialect == Dialect::Foreign && d.site.function == "compress",
             "pre-fix site " + render_site(d.site));
    c.expect(d.permission_table.find("├─ r1: Reserved → Disabled") !=
                     std::string::npos &&
                 d.permission_table.find("r2: Reserved → Active") !=
                     std::string::npos,
             "pre-fix table:\n" + d.permission_table);
  }
  Outcome fixed = run("ownership/cyclic-stream-raw.scn", TB);
  c.expect(is_pass(fixed, 0), "post-fix " + describe(fixed));
  Outcome leaky = run("ownership/cyclic-stream-raw-leak.scn", TB);
  c.expect(is_pass(leaky, 1) &&
               leaky.leaks[0].kind == DiagKind::MemoryLeak,
           "post-fix without rewrap " + describe(leaky));
}

void criterion7(Check& c) {
  Outcome parent = run("ownership/refcell-parent-first.scn", TB);
  c.expect(is_bug(parent, DiagKind::ExpiredPermission),
           "parent-first " + describe(parent));
  Outcome child = run("ownership/refcell-child-first.scn", TB);
  c.expect(is_bug(child, DiagKind::InsufficientPermission),
           "child-first " + describe(child));
  if (!child.diagnostics.empty())
    c.expect(child.diagnostics[0].message.find("`child` has read-only Frozen") !=
                 std::string::npos,
             "child-first message " + child.diagnostics[0].message);
}

void criterion8(Check& c) {
  for (const char* rel : {"typing/missing-return-type.scn", "typing/bool-vs-i32.scn",
                          "typing/i32-vs-size.scn"}) {
    Outcome o = run(rel, TB);
    c.expect(is_bug(o, DiagKind::InvalidBinding), std::string(rel) + " " + describe(o));
  }
  for (const char* rel : {"typing/partial-array-init.scn", "typing/short-copy-back.scn"}) {
    Outcome o = run(rel, TB);
    c.expect(is_bug(o, DiagKind::UninitializedRead),
             std::string(rel) + " " + describe(o));
  }
  Outcome z = run("typing/partial-array-init.scn", TB, {"zero-init-foreign"});
  c.expect(is_pass(z), "partial-array-init +zero-init-foreign " + describe(z));
}

void criterion9(Check& c) {
  for (const char* rel : {"allocation/into-raw-leak.scn", "allocation/malloc-leak.scn"}) {
    Outcome o = run(rel, TB);
    c.expect(is_pass(o, 1) && o.leaks[0].kind == DiagKind::MemoryLeak,
             std::string(rel) + " " + describe(o));
  }
  Outcome d = run("allocation/host-drops-foreign.scn", TB);
  c.expect(is_bug(d, DiagKind::CrossLanguageDealloc), "host-drops-foreign " + describe(d));
}

void criterion10(Check& c) {
  const std::string cmd =
      fmt::format("\"{}\" --test-suite=properties --minimal > /dev/null 2>&1",
                  DUET_TESTS_BIN);
  int rc = std::system(cmd.c_str());
  c.expect(rc == 0, fmt::format("property suite exited with status {}", rc));
}

void criterion11(Check& c) {
  CorpusSummary s = run_corpus(DUET_CORPUS_DIR, {});
  std::size_t tagged = 0;
  for (const auto& sr : s.scenarios) {
    if (sr.runs.size() != 2) continue;
    const Outcome& sb = sr.runs[0].outcome;
    const Outcome& tb = sr.runs[1].outcome;
    bool is_tagged = std::find(sr.tags.begin(), sr.tags.end(),
                               "offset-beyond-borrow") != sr.tags.end();
    if (is_tagged) {
      ++tagged;
      c.expect(sb.cls == Classification::Bug && tb.cls == Classification::Pass,
               fmt::format("{}: sb {}, tb {}", sr.path, describe(sb), describe(tb)));
    }
    if (sr.verdict == Verdict::TbOnlyViolation)
      c.expect(tb.kind() != DiagKind::AccessOutOfBounds,
               sr.path + " is a tb-only access-out-of-bounds");
  }
  c.expect(tagged >= 2, fmt::format("only {} tagged scenarios", tagged));
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void(Check&)>>> all{
      {"expired permission: tree history of two mutable borrows", criterion1},
      {"insufficient permission: write through a shared-derived pointer", criterion2},
      {"protected permission: dealloc of a protected reference; raw parameter passes",
       criterion3},
      {"out-of-range field access: sb-only-violation", criterion4},
      {"self-reference: expired at the host read; cell fix passes", criterion5},
      {"cyclic aliasing: expired at the foreign read; raw fix and leak check",
       criterion6},
      {"parent-first expires the child; child-first leaves it Frozen", criterion7},
      {"typing corpus: invalid bindings, uninitialized reads, zero-init mode",
       criterion8},
      {"allocation corpus: leaks and cross-language deallocation", criterion9},
      {"property suites", criterion10},
      {"corpus: offset-beyond-borrow scenarios fail sb and pass tb", criterion11},
  };
  int failed = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    Check c;
    try {
      all[i].second(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    std::cout << fmt::format("{} {:>2}. {}\n", c.failures.empty() ? "PASS" : "FAIL",
                             i + 1, all[i].first);
    for (const auto& f : c.failures) std::cout << "        " << f << "\n";
    if (!c.failures.empty()) ++failed;
  }
  // Single scenario runs must stay well under a second each.
  ScenarioProgram p;
  double worst = 0;
  std::string worst_name;
  for (const auto& f : list_scenarios(DUET_CORPUS_DIR)) {
    p = parse_scenario(test::read_file(f.string()));
    for (Model m : {TB, SB}) {
      MachineConfig cfg;
      cfg.model = m;
      auto t0 = std::chrono::steady_clock::now();
      run_scenario(p, f.string(), cfg);
      double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (secs > worst) {
        worst = secs;
        worst_name = std::filesystem::relative(f, DUET_CORPUS_DIR).string();
      }
    }
  }
  std::cout << fmt::format("slowest scenario run: {} ({:.1f} ms)\n", worst_name,
                           worst * 1000);
  if (worst >= 1.0) ++failed;
  std::cout << (failed == 0 ? "all criteria pass\n"
                            : fmt::format("{} failing\n", failed));
  return failed == 0 ? 0 : 1;
}
