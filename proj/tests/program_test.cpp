// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "duet/runner.hpp"
#include "support.hpp"

using namespace duet;

namespace {

ParseError parse_error(const std::string& text) {
  try {
    parse_scenario(text);
  } catch (const ParseError& e) {
    return e;
  }
  FAIL("parsed");
  return ParseError(0, 0, "");
}

}  // namespace

TEST_SUITE("program") {

TEST_CASE("a small scenario") {
  auto p = parse_scenario(
      "tag demo\n"
      "expect tb +zero-init-foreign bug(uninitialized-read) leaks 0\n"
      "steps 50\n"
      "\n"
      "type P {\n"
      "  a: i32\n"
      "  b: *mut P\n"
      "}\n"
      "static G: u32 = 4\n"
      "extern fn f(i32, ...) -> i32\n"
      "foreign fn f(x: i32, ...) -> i32 {\n"
      "  return x\n"
      "}\n"
      "host fn main() {\n"
      "  let v: i32 = call f(1, 2)\n"
      "}\n");
  CHECK(p.tags == std::vector<std::string>{"demo"});
  CHECK(p.steps == 50u);
  REQUIRE(p.expectations.size() == 1);
  const Expectation& e = p.expectations[0];
  CHECK(e.model == Model::TreeBorrows);
  CHECK(e.flags == std::vector<std::string>{"zero-init-foreign"});
  CHECK(e.kind == DiagKind::UninitializedRead);
  CHECK(e.leaks == 0u);
  CHECK(e.line == 2);
  CHECK(p.types.contains("P"));
  REQUIRE(p.binding("f") != nullptr);
  CHECK(p.binding("f")->variadic);
  CHECK(p.static_def("G")->value == 4);
  CHECK(p.function("f")->dialect == Dialect::Foreign);
  CHECK(p.function("main")->body.size() == 1);
}

TEST_CASE("parse errors carry a position") {
  auto e = parse_error("host fn main() {\n  let x: i32 = \n}\n");
  CHECK(e.line() == 2);
  e = parse_error("host fn main() {\n  frobnicate\n}\n");
  CHECK(e.line() == 2);
  e = parse_error("type T {\n  a: nosuch\n}\n");
  CHECK(e.line() == 2);
  e = parse_error("expect bug(not-a-kind)\n");
  CHECK(e.line() == 1);
  e = parse_error("host fn main() {\n");
  CHECK(e.line() >= 1);
}

TEST_CASE("undefined names are rejected at parse time") {
  CHECK_THROWS_AS(parse_scenario("host fn main() {\n  goto nowhere\n}\n"),
                  ParseError);
  CHECK_THROWS_AS(parse_scenario("host fn helper() {\n}\n"), ParseError);
}

TEST_CASE("every corpus scenario round-trips through its rendering") {
  auto files = list_scenarios(DUET_CORPUS_DIR);
  REQUIRE(files.size() >= 40);
  for (const auto& f : files) {
    CAPTURE(f.string());
    ScenarioProgram p = parse_scenario(test::read_file(f.string()));
    std::string text = render_program(p);
    ScenarioProgram q = parse_scenario(text);
    CHECK(q == p);
    CHECK(render_program(q) == text);
  }
}

}
