// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "duet/memory.hpp"
#include "duet/translation.hpp"
#include <functional>

#include "support.hpp"

using namespace duet;

namespace {

TypedValue val(TypeRef t, std::uint64_t v) {
  auto n = layout_of(t).size;
  return TypedValue{t, encode_int(v, n)};
}

DiagKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const UbError& e) {
    return e.diagnostic().kind;
  }
  FAIL("no error");
  return DiagKind::AssertionFailed;
}

const TypeEnv kEnv;

}  // namespace

TEST_SUITE("translation") {

TEST_CASE("matching scalars pass through") {
  Signature sig{{int_type(32)}, int_type(32), false};
  auto out = lower_call({val(int_type(32), 5)}, sig, kEnv);
  REQUIRE(out.size() == 1);
  CHECK(out[0].kind == AbiValue::Kind::Scalar);
  CHECK(out[0].width == 32);
  CHECK(decode_uint(out[0].bytes) == 5);
}

TEST_CASE("a bool passed where an i32 is expected") {
  Signature sig{{int_type(32)}, unit_type(), false};
  CHECK(kind_of([&] { lower_call({val(int_type(8, false), 1)}, sig, kEnv); }) ==
        DiagKind::InvalidBinding);
}

TEST_CASE("an i32 binding for a size_t return") {
  AbiValue v = to_abi(int_type(64, false), encode_int(3, 8), kEnv);
  CHECK(kind_of([&] {
          raise_return(v, int_type(64, false), int_type(32), kEnv);
        }) == DiagKind::InvalidBinding);
}

TEST_CASE("a missing return type") {
  AbiValue v = to_abi(int_type(32), encode_int(3, 4), kEnv);
  CHECK(kind_of([&] { raise_return(v, int_type(32), nullptr, kEnv); }) ==
        DiagKind::InvalidBinding);
  CHECK(raise_return(AbiValue{}, nullptr, nullptr, kEnv).type->is_unit());
}

TEST_CASE("same-size signedness differences are accepted") {
  Signature sig{{int_type(32, false)}, unit_type(), false};
  auto out = lower_call({val(int_type(32), 0xffffffff)}, sig, kEnv);
  CHECK(decode_uint(out[0].bytes) == 0xffffffff);
}

TEST_CASE("homogeneous aggregates flatten into consecutive parameters") {
  auto v2 = struct_type("V2", {{"x", int_type(32), {}}, {"y", int_type(32), {}}});
  ByteVec img = encode_int(3, 4);
  auto hi = encode_int(4, 4);
  img.insert(img.end(), hi.begin(), hi.end());
  Signature sig{{int_type(32), int_type(32)}, int_type(32), false};
  auto out = lower_call({TypedValue{v2, img}}, sig, kEnv);
  REQUIRE(out.size() == 2);
  CHECK(decode_uint(out[0].bytes) == 3);
  CHECK(decode_uint(out[1].bytes) == 4);
  ByteVec joined = out[0].bytes;
  joined.insert(joined.end(), out[1].bytes.begin(), out[1].bytes.end());
  CHECK(joined == img);
}

TEST_CASE("aggregates with padding do not flatten") {
  auto s = struct_type("S", {{"a", int_type(8), {}}, {"b", int_type(32), {}}});
  Signature sig{{int_type(8), int_type(32)}, unit_type(), false};
  CHECK(kind_of([&] {
          lower_call({TypedValue{s, zero_bytes(8)}}, sig, kEnv);
        }) == DiagKind::InvalidBinding);
}

TEST_CASE("nested aggregates do not flatten") {
  auto in = struct_type("I", {{"a", int_type(32), {}}});
  auto out = struct_type("O", {{"i", in, {}}, {"j", in, {}}});
  Signature sig{{in, in}, unit_type(), false};
  CHECK(kind_of([&] {
          lower_call({TypedValue{out, zero_bytes(8)}}, sig, kEnv);
        }) == DiagKind::InvalidBinding);
}

TEST_CASE("arity mismatches") {
  Signature two{{int_type(32), int_type(32)}, unit_type(), false};
  CHECK(kind_of([&] { lower_call({val(int_type(32), 1)}, two, kEnv); }) ==
        DiagKind::InvalidBinding);
  Signature one{{int_type(32)}, unit_type(), false};
  CHECK(kind_of([&] {
          lower_call({val(int_type(32), 1), val(int_type(32), 2)}, one, kEnv);
        }) == DiagKind::InvalidBinding);
}

TEST_CASE("variadic extras") {
  Signature sig{{int_type(32)}, unit_type(), true};
  auto out = lower_call({val(int_type(32), 1), val(int_type(64), 2)}, sig, kEnv);
  CHECK(out.size() == 2);
  auto v2 = struct_type("V2", {{"x", int_type(32), {}}, {"y", int_type(32), {}}});
  CHECK(kind_of([&] {
          lower_call({val(int_type(32), 1), TypedValue{v2, zero_bytes(8)}}, sig,
                     kEnv);
        }) == DiagKind::UnsupportedOperation);
}

TEST_CASE("pointer to integer exposes; integer to pointer rebuilds") {
  Memory mem({});
  auto x = mem.allocate(4, 4, Origin::HostStack, "x", test::site());
  ByteVec img = mem.encode(x);
  bool exposed = false;
  BoundaryHooks hooks;
  hooks.expose = [&](const ByteVec&) { exposed = true; };
  hooks.from_int = [&](const ByteVec& b) {
    return mem.encode(mem.from_exposed(decode_uint(b), test::site()));
  };
  Signature to_int{{int_type(64, false)}, unit_type(), false};
  auto out = lower_call({TypedValue{ptr_type(PtrKind::RawMut, int_type(32)), img}},
                        to_int, kEnv, hooks);
  CHECK(exposed);
  CHECK_FALSE(intact_fragment(out[0].bytes).has_value());
  CHECK(decode_uint(out[0].bytes) == mem.address_of(x));

  Signature to_ptr{{opaque_ptr()}, unit_type(), false};
  auto back = lower_call({TypedValue{int_type(64, false), out[0].bytes}}, to_ptr,
                         kEnv, hooks);
  auto p = mem.decode(back[0].bytes);
  CHECK(p.alloc == x.alloc);
  CHECK(p.prov.is_wildcard());
}

TEST_CASE("opaque pointer typing") {
  CHECK(render_type(type_opaque_pointer(4, true)) == "u32");
  CHECK(render_type(type_opaque_pointer(8, true)) == "u64");
  CHECK(render_type(type_opaque_pointer(24, false)) == "u8");
  CHECK(render_type(type_opaque_pointer(4, false)) == "u8");
  CHECK(render_type(type_opaque_pointer(3, true)) == "u8");
  Memory mem({});
  auto s = mem.allocate(4, 4, Origin::Static, "S", test::site());
  auto h = mem.allocate(24, 8, Origin::HostHeap, "h", test::site());
  CHECK(render_type(type_opaque_pointer(s, mem)) == "u32");
  CHECK(render_type(type_opaque_pointer(h, mem)) == "u8");
}

}
