// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "duet/runner.hpp"
#include "support.hpp"

using namespace duet;

TEST_SUITE("corpus") {

TEST_CASE("every expectation in the bundled corpus holds") {
  CorpusSummary s = run_corpus(DUET_CORPUS_DIR, {});
  for (const auto& sr : s.scenarios) {
    CAPTURE(sr.path);
    CHECK_FALSE(sr.parse_error.has_value());
    CHECK_FALSE(sr.expectations.empty());
    for (const auto& e : sr.expectations) {
      CAPTURE(e.line);
      CHECK_MESSAGE(e.ok, e.expected, " vs ", e.actual);
    }
  }
  CHECK(s.mismatches == 0);
}

TEST_CASE("counts add up to the number of runs") {
  CorpusSummary s = run_corpus(DUET_CORPUS_DIR, {});
  for (const auto& [model, by_class] : s.counts) {
    std::size_t n = 0;
    for (const auto& [cls, k] : by_class) n += k;
    CHECK(n == s.scenarios.size());
  }
  std::size_t members = 0;
  for (const auto& g : s.groups) members += g.members.size();
  CHECK(members == s.group_index.size());
}

TEST_CASE("summaries are deterministic") {
  CorpusOptions o;
  std::string a = summary_json(run_corpus(DUET_CORPUS_DIR, o));
  std::string b = summary_json(run_corpus(DUET_CORPUS_DIR, o));
  CHECK(a == b);
  CHECK(render_summary(run_corpus(DUET_CORPUS_DIR, o)) ==
        render_summary(run_corpus(DUET_CORPUS_DIR, o)));
}

TEST_CASE("identical failures collapse into one group") {
  auto dir = std::filesystem::temp_directory_path() / "duet-dedup-corpus";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::string text = test::read_file(test::corpus_path("misc/misaligned.scn"));
  for (const char* name : {"a.scn", "b.scn", "c.scn"})
    std::ofstream(dir / name) << text;
  CorpusOptions o;
  o.both_models = false;
  CorpusSummary s = run_corpus(dir, o);
  CHECK(s.groups.size() == 1);
  CHECK(s.groups[0].members.size() == 3);
  std::filesystem::remove_all(dir);
}

TEST_CASE("one timeout scenario shows up in the counts") {
  auto dir = std::filesystem::temp_directory_path() / "duet-timeout-corpus";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "spin.scn")
      << test::read_file(test::corpus_path("misc/spin.scn"));
  CorpusOptions o;
  o.both_models = false;
  CorpusSummary s = run_corpus(dir, o);
  CHECK(s.counts["tb"]["timeout"] == 1);
  std::filesystem::remove_all(dir);
}

}
