// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <set>

#include "duet/runner.hpp"
#include "support.hpp"

using namespace duet;

namespace {

Outcome run(const std::string& text, MachineConfig cfg = {}) {
  ScenarioProgram p = parse_scenario(text);
  Machine m(p, effective_config(p, cfg));
  return m.run();
}

const char* kThreads = R"(
extern fn work(i32) -> i32

foreign fn work(n: i32) -> i32 {
  let a: i32 = add n 1
  return a
}

host fn worker(n: i32) -> i32 {
  let r: i32 = call work(n)
  let r: i32 = call work(r)
  let r: i32 = call work(r)
  return r
}

host fn main() {
  let t1: u64 = spawn worker(1)
  let t2: u64 = spawn worker(10)
  let t3: u64 = spawn worker(20)
  let a: i32 = join t1
  let b: i32 = join t2
  let c: i32 = join t3
  assert_eq a 4
  assert_eq b 13
  assert_eq c 23
}
)";

}  // namespace

TEST_SUITE("machine") {

TEST_CASE("normalized configuration") {
  MachineConfig c;
  c.zero_init_foreign = true;
  CHECK_FALSE(c.normalized().permissive_foreign_loads);
  MachineConfig d;
  CHECK(d.normalized() == d);
}

TEST_CASE("the step budget ends a run") {
  auto o = run("host fn main() {\n  label top\n  goto top\n}\n",
               MachineConfig{.step_budget = 100});
  CHECK(o.cls == Classification::Timeout);
  CHECK(o.steps == 100);
}

TEST_CASE("the scenario's own step limit applies when smaller") {
  ScenarioProgram p = parse_scenario(
      "steps 10\nhost fn main() {\n  label top\n  goto top\n}\n");
  CHECK(effective_config(p, {}).step_budget == 10);
  MachineConfig c;
  c.step_budget = 5;
  CHECK(effective_config(p, c).step_budget == 5);
}

TEST_CASE("reading an uninitialized local") {
  auto o = run("host fn main() {\n  let x: i32 = uninit\n  let y: i32 = x\n}\n");
  CHECK(o.kind() == DiagKind::UninitializedRead);
  CHECK(o.diagnostics[0].site.line == 3);
}

TEST_CASE("a failed assertion") {
  auto o = run("host fn main() {\n  let x: i32 = 3\n  assert_eq x 4\n}\n");
  CHECK(o.cls == Classification::Bug);
  CHECK(o.kind() == DiagKind::AssertionFailed);
}

TEST_CASE("threads interleave differently per seed and always agree") {
  std::set<std::vector<int>> schedules;
  ScenarioProgram p = parse_scenario(kThreads);
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    MachineConfig c;
    c.seed = seed;
    Machine m(p, c);
    Outcome o = m.run();
    REQUIRE(o.cls == Classification::Pass);
    CHECK(m.thread_count() >= 4);
    schedules.insert(m.schedule());
  }
  CHECK(schedules.size() > 1);
}

TEST_CASE("a fixed seed reproduces the schedule") {
  ScenarioProgram p = parse_scenario(kThreads);
  MachineConfig c;
  c.seed = 1234;
  Machine a(p, c), b(p, c);
  a.run();
  b.run();
  CHECK(a.schedule() == b.schedule());
}

TEST_CASE("threads waiting on each other") {
  auto o = run(R"(
host fn w(n: u64) -> i32 {
  let r: i32 = join n
  return r
}

host fn main() {
  let z: u64 = 0
  let t: u64 = spawn w(z)
  let r: i32 = join t
}
)");
  CHECK(o.cls == Classification::Unsupported);
  CHECK(o.diagnostics[0].site.function == "main");
  CHECK(o.diagnostics[0].site.line == 10);
}

TEST_CASE("raw pointer parameters get no protector") {
  ScenarioProgram p = test::load("aliasing/dealloc-raw-param.scn");
  Machine m(p, {});
  CHECK(m.run().cls == Classification::Pass);
  CHECK(m.protectors_created() == 0);
}

TEST_CASE("callbacks from foreign code") {
  auto o = run(test::read_file(test::corpus_path("boundary/callback.scn")));
  CHECK(o.cls == Classification::Pass);
}

TEST_CASE("protectors are released when calls return") {
  for (std::string rel : {"ownership/self-ref-open-cell.scn",
                          "boundary/callback-reference.scn"}) {
    CAPTURE(rel);
    ScenarioProgram p = test::load(rel);
    Machine m(p, {});
    Outcome o = m.run();
    REQUIRE(o.cls == Classification::Pass);
    CHECK(m.protectors_created() > 0);
    CHECK(m.protectors_created() == m.protectors_released());
  }
}

TEST_CASE("boxes are dropped at the end of their scope") {
  auto o = run(R"(
host fn main() {
  let b: box i32 = box_new 5
  let v: i32 = *b
  assert_eq v 5
}
)");
  CHECK(o.cls == Classification::Pass);
  CHECK(o.leaks.empty());
}

TEST_CASE("errors inside foreign code report both traces") {
  auto o = run(test::read_file(test::corpus_path("boundary/buffer-overrun.scn")));
  REQUIRE(o.kind() == DiagKind::AccessOutOfBounds);
  const Diagnostic& d = o.diagnostics[0];
  CHECK(d.site.dialect == Dialect::Foreign);
  REQUIRE(d.foreign_trace.size() == 1);
  CHECK(d.foreign_trace[0].function == "clear");
  REQUIRE_FALSE(d.host_trace.empty());
  CHECK(d.host_trace[0].function == "main");
  REQUIRE(d.stack.size() == 2);
  CHECK(d.stack[0].dialect == Dialect::Foreign);
  CHECK(d.stack[1].dialect == Dialect::Host);
}

}
