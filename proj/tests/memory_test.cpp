// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "duet/memory.hpp"
#include <functional>

#include "support.hpp"

using namespace duet;
using test::site;

namespace {

constexpr auto H = Dialect::Host;
constexpr auto F = Dialect::Foreign;

DiagKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const UbError& e) {
    return e.diagnostic().kind;
  }
  FAIL("no error");
  return DiagKind::AssertionFailed;
}

PointerValue at(PointerValue p, std::int64_t off) {
  p.offset += off;
  return p;
}

}  // namespace

TEST_SUITE("memory") {

TEST_CASE("addresses start at the base and keep a guard gap") {
  Memory m({});
  auto a = m.allocate(4, 4, Origin::HostStack, "a", site());
  auto b = m.allocate(8, 8, Origin::HostStack, "b", site());
  CHECK(m.address_of(a) == Memory::kBaseAddress);
  std::uint64_t expect_b = Memory::kBaseAddress + 4 + Memory::kGuardGap;
  expect_b = (expect_b + 7) / 8 * 8;
  CHECK(m.address_of(b) == expect_b);
}

TEST_CASE("address seeds shift the start deterministically") {
  MemoryConfig c;
  c.address_seed = 99;
  Memory m1(c), m2(c);
  auto a1 = m1.allocate(4, 4, Origin::HostHeap, "a", site());
  auto a2 = m2.allocate(4, 4, Origin::HostHeap, "a", site());
  CHECK(m1.address_of(a1) == m2.address_of(a2));
  CHECK(m1.address_of(a1) >= Memory::kBaseAddress);
}

TEST_CASE("fresh memory is uninitialized; writes initialize it") {
  Memory m({});
  auto p = m.allocate(4, 4, Origin::HostStack, "x", site());
  CHECK(kind_of([&] { m.check_init(p, int_type(32), {}, site()); }) ==
        DiagKind::UninitializedRead);
  m.write(p, encode_int(7, 4), 4, H, site());
  m.check_init(p, int_type(32), {}, site());
  CHECK(decode_uint(m.read(p, 4, 4, H, site())) == 7);
}

TEST_CASE("zero-init applies to foreign allocations only") {
  MemoryConfig c;
  c.zero_init_foreign = true;
  Memory m(c);
  auto f = m.allocate(4, 4, Origin::ForeignHeap, "f", site());
  auto h = m.allocate(4, 4, Origin::HostHeap, "h", site());
  m.check_init(f, int_type(32), {}, site());
  CHECK_THROWS_AS(m.check_init(h, int_type(32), {}, site()), UbError);
}

TEST_CASE("padding need not be initialized") {
  Memory m({});
  auto s = struct_type("S", {{"a", int_type(8), {}}, {"b", int_type(32), {}}});
  auto p = m.allocate(8, 4, Origin::HostStack, "s", site());
  m.write(p, encode_int(1, 1), 1, H, site());
  m.write(at(p, 4), encode_int(2, 4), 4, H, site());
  m.check_init(p, s, {}, site());
}

TEST_CASE("bounds, liveness and frees") {
  Memory m({});
  auto p = m.allocate(4, 4, Origin::HostHeap, "p", site());
  CHECK(kind_of([&] { m.read(at(p, 2), 4, 1, H, site()); }) ==
        DiagKind::AccessOutOfBounds);
  CHECK(kind_of([&] { m.read(at(p, -1), 1, 1, H, site()); }) ==
        DiagKind::AccessOutOfBounds);
  CHECK(kind_of([&] { m.deallocate(at(p, 1), Allocator::Host, site()); }) ==
        DiagKind::InvalidDealloc);
  m.deallocate(p, Allocator::Host, site());
  CHECK(kind_of([&] { m.read(p, 4, 4, H, site()); }) == DiagKind::UseAfterFree);
  CHECK(kind_of([&] { m.write(p, encode_int(0, 1), 1, H, site()); }) ==
        DiagKind::UseAfterFree);
  CHECK(kind_of([&] { m.deallocate(p, Allocator::Host, site()); }) ==
        DiagKind::DoubleFree);
}

TEST_CASE("liveness is checked before bounds") {
  Memory m({});
  auto p = m.allocate(4, 4, Origin::HostHeap, "p", site());
  m.deallocate(p, Allocator::Host, site());
  CHECK(kind_of([&] { m.read(at(p, 100), 4, 4, H, site()); }) ==
        DiagKind::UseAfterFree);
}

TEST_CASE("cross-language and stack deallocation") {
  Memory m({});
  auto f = m.allocate(4, 4, Origin::ForeignHeap, "f", site());
  auto h = m.allocate(4, 4, Origin::HostHeap, "h", site());
  auto s = m.allocate(4, 4, Origin::HostStack, "s", site());
  CHECK(kind_of([&] { m.deallocate(f, Allocator::Host, site()); }) ==
        DiagKind::CrossLanguageDealloc);
  CHECK(kind_of([&] { m.deallocate(h, Allocator::Foreign, site()); }) ==
        DiagKind::CrossLanguageDealloc);
  CHECK(kind_of([&] { m.deallocate(s, Allocator::Host, site()); }) ==
        DiagKind::InvalidDealloc);
  m.deallocate(f, Allocator::Foreign, site());
  m.deallocate(h, Allocator::Host, site());
}

TEST_CASE("symbolic alignment ignores lucky addresses") {
  Memory m({});
  auto p = m.allocate(8, 1, Origin::HostStack, "b", site());
  // The base is 16-aligned, but the allocation only promises 1.
  CHECK(m.address_of(p) % 16 == 0);
  CHECK(kind_of([&] { m.read(p, 4, 4, H, site()); }) ==
        DiagKind::MisalignedAccess);
  MemoryConfig c;
  c.symbolic_alignment = false;
  Memory concrete(c);
  auto q = concrete.allocate(8, 1, Origin::HostStack, "b", site());
  concrete.write(q, encode_int(0, 4), 4, H, site());
  CHECK(kind_of([&] { concrete.read(at(q, 1), 4, 4, H, site()); }) ==
        DiagKind::MisalignedAccess);
}

TEST_CASE("foreign accesses are exempt from alignment checks by default") {
  Memory m({});
  auto p = m.allocate(8, 1, Origin::HostStack, "b", site());
  m.write(at(p, 1), encode_int(5, 4), 4, F, site());
  MemoryConfig c;
  c.check_foreign_alignment = true;
  Memory strict(c);
  auto q = strict.allocate(8, 1, Origin::HostStack, "b", site());
  CHECK(kind_of([&] { strict.write(at(q, 1), encode_int(5, 4), 4, F, site()); }) ==
        DiagKind::MisalignedAccess);
}

TEST_CASE("stored pointers keep provenance only when intact") {
  Memory m({});
  auto x = m.allocate(4, 4, Origin::HostStack, "x", site());
  auto slot = m.allocate(8, 8, Origin::HostStack, "slot", site());
  m.write(slot, m.encode(x), 8, H, site());
  auto back = m.decode(m.read(slot, 8, 8, H, site()));
  CHECK(back == x);
  m.write(at(slot, 3), encode_int(0xaa, 1), 1, H, site());
  auto broken = m.decode(m.read(slot, 8, 8, H, site()));
  CHECK(broken.prov.kind == Provenance::Kind::None);
}

TEST_CASE("exposed addresses come back as wildcard pointers") {
  Memory m({});
  auto x = m.allocate(4, 4, Origin::HostStack, "x", site());
  std::uint64_t addr = m.expose(at(x, 2));
  auto w = m.from_exposed(addr, site());
  CHECK(w.alloc == x.alloc);
  CHECK(w.offset == 2);
  CHECK(w.prov.is_wildcard());
  MemoryConfig c;
  c.strict_provenance = true;
  Memory strict(c);
  auto y = strict.allocate(4, 4, Origin::HostStack, "y", site());
  std::uint64_t a2 = strict.expose(y);
  CHECK(kind_of([&] { strict.from_exposed(a2, site()); }) ==
        DiagKind::StrictProvenanceViolation);
}

TEST_CASE("the aliasing model is consulted after bounds") {
  Memory m({});
  auto x = m.allocate(4, 4, Origin::HostStack, "x", site());
  auto r = m.retag(x, 4, RetagKind::SharedRef, {}, false, "r", site());
  CHECK(kind_of([&] { m.write(r, encode_int(1, 4), 4, H, site()); }) ==
        DiagKind::InsufficientPermission);
  CHECK(kind_of([&] { m.write(at(r, 2), encode_int(1, 4), 4, H, site()); }) ==
        DiagKind::AccessOutOfBounds);
}

TEST_CASE("leak report covers live heap allocations") {
  Memory m({});
  m.allocate(4, 4, Origin::HostStack, "s", site());
  m.allocate(4, 4, Origin::Static, "g", site());
  auto a = m.allocate(4, 4, Origin::HostHeap, "a", site());
  auto b = m.allocate(4, 4, Origin::ForeignHeap, "b", site());
  auto c = m.allocate(4, 4, Origin::ForeignHeap, "c", site());
  auto d = m.allocate(4, 4, Origin::HostHeap, "d", site());
  m.deallocate(b, Allocator::Foreign, site());
  m.mark_leak_ok(d);
  auto leaks = m.leak_report();
  REQUIRE(leaks.size() == 2);
  for (const auto& l : leaks) CHECK(l.kind == DiagKind::MemoryLeak);
  (void)a;
  (void)c;
}

TEST_CASE("alignment must be a power of two") {
  Memory m({});
  CHECK(kind_of([&] { m.allocate(4, 3, Origin::HostHeap, "x", site()); }) ==
        DiagKind::UnsupportedOperation);
}

}
