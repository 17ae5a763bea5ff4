// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "duet/stacked_borrows.hpp"
#include <functional>

#include "support.hpp"

using namespace duet;
using test::site;

namespace {

constexpr auto R = AccessKind::Read;
constexpr auto W = AccessKind::Write;

struct Stacks {
  TagRegistry tags;
  StackedBorrows sb;
  explicit Stacks(std::uint64_t size) : sb(tags, size, "x", site()) {}
  Provenance base() const { return Provenance::concrete(sb.base_tag()); }
  Provenance retag(const Provenance& p, RetagKind k, const char* label,
                   ByteRange r = {0, 4}, bool protect = false) {
    return sb.retag(p, r, k, {}, protect, label, site());
  }
};

DiagKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const UbError& e) {
    return e.diagnostic().kind;
  }
  FAIL("no error");
  return DiagKind::AssertionFailed;
}

std::vector<Grant> grants_at(const StackedBorrows& sb, std::uint64_t off) {
  std::vector<Grant> g;
  for (const auto& it : sb.stack_at(off)) g.push_back(it.grant);
  return g;
}

}  // namespace

TEST_SUITE("stacked-borrows") {

TEST_CASE("a fresh allocation's base tag may read and write") {
  Stacks s(4);
  s.sb.access(s.base(), {0, 4}, W, site());
  s.sb.access(s.base(), {0, 4}, R, site());
  CHECK(s.sb.stack_at(0).size() == 1);
}

TEST_CASE("a sibling reborrow pops the first mutable borrow") {
  Stacks s(4);
  auto y = s.retag(s.base(), RetagKind::MutableRef, "y");
  auto z = s.retag(s.base(), RetagKind::MutableRef, "z");
  (void)z;
  CHECK(kind_of([&] { s.sb.access(y, {0, 4}, W, site()); }) ==
        DiagKind::ExpiredPermission);
}

TEST_CASE("shared references grant reads only") {
  Stacks s(4);
  auto r = s.retag(s.base(), RetagKind::SharedRef, "r");
  s.sb.access(r, {0, 4}, R, site());
  CHECK(kind_of([&] { s.sb.access(r, {0, 4}, W, site()); }) ==
        DiagKind::InsufficientPermission);
  auto raw = s.retag(r, RetagKind::Raw, "raw");
  CHECK(grants_at(s.sb, 0).back() == Grant::SharedReadOnly);
  CHECK(kind_of([&] { s.sb.access(raw, {0, 4}, W, site()); }) ==
        DiagKind::InsufficientPermission);
}

TEST_CASE("raw pointers from mutable references share read-write") {
  Stacks s(4);
  auto m = s.retag(s.base(), RetagKind::MutableRef, "m");
  auto raw = s.retag(m, RetagKind::Raw, "raw");
  CHECK(grants_at(s.sb, 0) == std::vector<Grant>{Grant::Unique, Grant::Unique,
                                                 Grant::SharedReadWrite});
  s.sb.access(raw, {0, 4}, W, site());
  s.sb.access(m, {0, 4}, W, site());
  CHECK(kind_of([&] { s.sb.access(raw, {0, 4}, R, site()); }) ==
        DiagKind::ExpiredPermission);
}

TEST_CASE("offsets outside the borrowed range") {
  Stacks s(16);
  auto first = s.retag(s.base(), RetagKind::MutableRef, "first", {0, 4});
  s.sb.access(first, {0, 4}, W, site());
  try {
    s.sb.access(first, {4, 8}, W, site());
    FAIL("expected an error");
  } catch (const UbError& e) {
    CHECK(e.diagnostic().kind == DiagKind::AccessOutOfBounds);
    CHECK(e.diagnostic().message.find("outside the range") != std::string::npos);
  }
}

TEST_CASE("reads pop down to the lowest Unique above the granting item") {
  Stacks s(4);
  auto sh = s.retag(s.base(), RetagKind::SharedRef, "sh");
  auto m = s.retag(sh, RetagKind::Raw, "m");
  (void)m;
  // [x U, sh SRO, m SRO]; a read through x keeps all of them.
  s.sb.access(s.base(), {0, 4}, R, site());
  CHECK(s.sb.stack_at(0).size() == 3);
  Stacks t(4);
  auto u = t.retag(t.base(), RetagKind::MutableRef, "u");
  t.retag(u, RetagKind::SharedRef, "v");
  t.sb.access(t.base(), {0, 4}, R, site());
  CHECK(t.sb.stack_at(0).size() == 1);
}

TEST_CASE("protected items may not be popped") {
  Stacks s(4);
  auto p = s.retag(s.base(), RetagKind::MutableRef, "p", {0, 4}, true);
  CHECK(kind_of([&] { s.sb.access(s.base(), {0, 4}, W, site()); }) ==
        DiagKind::ProtectedPermission);
  CHECK(kind_of([&] { s.sb.dealloc_check(site()); }) ==
        DiagKind::ProtectedPermission);
  s.sb.protector_end(p.tag);
  s.sb.access(s.base(), {0, 4}, W, site());
  s.sb.dealloc_check(site());
}

TEST_CASE("failed accesses leave the stacks untouched") {
  Stacks s(8);
  auto a = s.retag(s.base(), RetagKind::MutableRef, "a", {0, 4});
  auto before = s.sb.render();
  CHECK_THROWS_AS(s.sb.access(a, {0, 8}, W, site()), UbError);
  CHECK(s.sb.render() == before);
}

TEST_CASE("wildcard accesses need an exposed tag") {
  Stacks s(4);
  auto m = s.retag(s.base(), RetagKind::MutableRef, "m");
  CHECK(kind_of([&] { s.sb.access(Provenance::wildcard(), {0, 4}, R, site()); }) ==
        DiagKind::AccessOutOfBounds);
  s.sb.expose(m.tag);
  s.sb.access(Provenance::wildcard(), {0, 4}, W, site());
}

TEST_CASE("stack rendering") {
  Stacks s(4);
  s.retag(s.base(), RetagKind::SharedRef, "r");
  CHECK(s.sb.render_stack(s.sb.stack_at(0)) ==
        "┌ r: SharedReadOnly\n"
        "│ x: Unique");
}

}
