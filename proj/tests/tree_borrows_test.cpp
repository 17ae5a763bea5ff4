// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "duet/tree_borrows.hpp"
#include <functional>

#include "support.hpp"

using namespace duet;
using test::site;

namespace {

using P = Perm;
using E = Transition::Error;
constexpr auto R = AccessKind::Read;
constexpr auto W = AccessKind::Write;

struct Row {
  Perm from;
  Relation rel;
  AccessKind kind;
  Perm to;
  E err;
};

// Unprotected transitions, written out per case.
const Row kTable[] = {
    {P::Reserved, Relation::Child, R, P::Reserved, E::None},
    {P::ReservedIM, Relation::Child, R, P::ReservedIM, E::None},
    {P::Active, Relation::Child, R, P::Active, E::None},
    {P::Frozen, Relation::Child, R, P::Frozen, E::None},
    {P::Disabled, Relation::Child, R, P::Disabled, E::Expired},
    {P::Reserved, Relation::Child, W, P::Active, E::None},
    {P::ReservedIM, Relation::Child, W, P::Active, E::None},
    {P::Active, Relation::Child, W, P::Active, E::None},
    {P::Frozen, Relation::Child, W, P::Frozen, E::Insufficient},
    {P::Disabled, Relation::Child, W, P::Disabled, E::Expired},
    {P::Reserved, Relation::Foreign, R, P::Reserved, E::None},
    {P::ReservedIM, Relation::Foreign, R, P::ReservedIM, E::None},
    {P::Active, Relation::Foreign, R, P::Frozen, E::None},
    {P::Frozen, Relation::Foreign, R, P::Frozen, E::None},
    {P::Disabled, Relation::Foreign, R, P::Disabled, E::None},
    {P::Reserved, Relation::Foreign, W, P::Disabled, E::None},
    {P::ReservedIM, Relation::Foreign, W, P::ReservedIM, E::None},
    {P::Active, Relation::Foreign, W, P::Frozen, E::None},
    {P::Frozen, Relation::Foreign, W, P::Disabled, E::None},
    {P::Disabled, Relation::Foreign, W, P::Disabled, E::None},
};

struct Tree {
  TagRegistry tags;
  TreeBorrows tb;
  explicit Tree(std::uint64_t size, const char* root = "x")
      : tb(tags, size, root, site()) {}
  Provenance base() const { return Provenance::concrete(tb.base_tag()); }
  Provenance mut(const Provenance& p, const char* label, bool protect = false) {
    return tb.retag(p, {0, 4}, RetagKind::MutableRef, {}, protect, label,
                    site());
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

}  // namespace

TEST_SUITE("tree-borrows") {

TEST_CASE("transition table") {
  for (const Row& r : kTable) {
    for (bool init : {false, true}) {
      Transition t = tb_transition(r.from, r.rel, r.kind, init, false);
      CAPTURE(perm_name(r.from));
      CAPTURE(static_cast<int>(r.rel));
      CAPTURE(access_name(r.kind));
      CHECK(t.next == r.to);
      CHECK(t.error == r.err);
    }
  }
}

TEST_CASE("protectors turn would-be Disabled into an error once initialized") {
  auto t = tb_transition(P::Reserved, Relation::Foreign, W, true, true);
  CHECK(t.error == E::Protected);
  t = tb_transition(P::Reserved, Relation::Foreign, W, false, true);
  CHECK(t.error == E::None);
  CHECK(t.next == P::Disabled);
  t = tb_transition(P::Active, Relation::Foreign, W, true, true);
  CHECK(t.error == E::None);
  CHECK(t.next == P::Frozen);
}

TEST_CASE("two mutable borrows: the second is disabled by a write through the first") {
  Tree t(4);
  auto y = t.mut(t.base(), "y");
  auto z = t.mut(t.base(), "z");
  t.tb.access(y, {0, 4}, W, site("main", 11));
  CHECK(t.tb.perm(z.tag, 0) == P::Disabled);
  CHECK(t.tb.perm(y.tag, 0) == P::Active);
  REQUIRE(t.tb.events().size() == 1);
  CHECK(t.tb.render_event(t.tb.events()[0], 0) ==
        "└┬ x: Active\n"
        " ├─ y: Reserved → Active\n"
        " └─ z: Reserved → Disabled");
  try {
    t.tb.access(z, {0, 4}, W, site("main", 12));
    FAIL("expected an error");
  } catch (const UbError& e) {
    const Diagnostic& d = e.diagnostic();
    CHECK(d.kind == DiagKind::ExpiredPermission);
    // `z` was never used before, so there is no last-use entry.
    REQUIRE(d.history.size() == 2);
    CHECK(d.history[0].what == HistoryEvent::What::Created);
    CHECK(d.history[1].what == HistoryEvent::What::Invalidated);
    CHECK(d.history[1].site.line == 11);
  }
}

TEST_CASE("shared borrows are Frozen and reject writes") {
  Tree t(4);
  auto r = t.tb.retag(t.base(), {0, 4}, RetagKind::SharedRef, {}, false, "r",
                      site());
  CHECK(t.tb.perm(r.tag, 0) == P::Frozen);
  t.tb.access(r, {0, 4}, R, site());
  CHECK(kind_of([&] { t.tb.access(r, {0, 4}, W, site()); }) ==
        DiagKind::InsufficientPermission);
}

TEST_CASE("child write freezes an Active sibling") {
  Tree t(4);
  auto a = t.mut(t.base(), "a");
  auto b = t.mut(t.base(), "b");
  t.tb.access(a, {0, 4}, W, site());
  t.tb.access(t.base(), {0, 4}, W, site());
  CHECK(t.tb.perm(a.tag, 0) == P::Frozen);
  CHECK(t.tb.perm(b.tag, 0) == P::Disabled);
  CHECK(kind_of([&] { t.tb.access(a, {0, 4}, W, site()); }) ==
        DiagKind::InsufficientPermission);
  t.tb.access(a, {0, 4}, R, site());
}

TEST_CASE("interior-mutable locations survive foreign writes") {
  Tree t(8);
  std::vector<ByteRange> cells{{0, 4}};
  auto a = t.tb.retag(t.base(), {0, 8}, RetagKind::MutableRef, cells, false,
                      "a", site());
  auto b = t.tb.retag(t.base(), {0, 8}, RetagKind::MutableRef, {}, false, "b",
                      site());
  CHECK(t.tb.perm(a.tag, 0) == P::ReservedIM);
  CHECK(t.tb.perm(a.tag, 4) == P::Reserved);
  t.tb.access(b, {0, 8}, W, site());
  CHECK(t.tb.perm(a.tag, 0) == P::ReservedIM);
  CHECK(t.tb.perm(a.tag, 4) == P::Disabled);
}

TEST_CASE("raw retags and wildcard accesses leave the tree alone") {
  Tree t(4);
  auto y = t.mut(t.base(), "y");
  auto before = t.tb.serialize();
  auto r = t.tb.retag(y, {0, 4}, RetagKind::Raw, {}, false, "r", site());
  CHECK(r == y);
  t.tb.access(Provenance::wildcard(), {0, 4}, W, site());
  t.tb.access(Provenance::wildcard(), {0, 4}, R, site());
  CHECK(t.tb.serialize() == before);
}

TEST_CASE("protected reference: foreign write and deallocation") {
  Tree t(4);
  auto p = t.mut(t.base(), "p", true);
  t.tb.access(p, {0, 4}, R, site());
  CHECK(kind_of([&] { t.tb.access(t.base(), {0, 4}, W, site()); }) ==
        DiagKind::ProtectedPermission);
  CHECK(t.tb.perm(p.tag, 0) == P::Reserved);
  CHECK(kind_of([&] { t.tb.dealloc_check(site()); }) ==
        DiagKind::ProtectedPermission);
  t.tb.protector_end(p.tag);
  t.tb.access(t.base(), {0, 4}, W, site());
  t.tb.dealloc_check(site());
}

TEST_CASE("an unaccessed protected node is not yet initialized") {
  Tree t(4);
  t.mut(t.base(), "p", true);
  t.tb.access(t.base(), {0, 4}, W, site());
  t.tb.dealloc_check(site());
}

TEST_CASE("faulting accesses roll back") {
  Tree t(8);
  auto a = t.mut(t.base(), "a");
  auto s = t.tb.retag(t.base(), {0, 8}, RetagKind::SharedRef, {}, false, "s",
                      site());
  auto before = t.tb.serialize();
  CHECK_THROWS_AS(t.tb.access(s, {0, 8}, W, site()), UbError);
  CHECK(t.tb.serialize() == before);
  (void)a;
}

TEST_CASE("render_at and labels") {
  Tree t(4);
  auto y = t.mut(t.base(), "y");
  t.mut(y, "w");
  CHECK(t.tb.render_at(0) ==
        "└┬ x: Active\n"
        " └┬ y: Reserved\n"
        "  └─ w: Reserved");
  CHECK(t.tb.find_label("w").has_value());
  CHECK(t.tb.parent_of(*t.tb.find_label("w")) == y.tag);
  CHECK_FALSE(t.tb.find_label("nope").has_value());
}

}
