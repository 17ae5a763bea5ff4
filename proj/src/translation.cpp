// SPDX-License-Identifier: Apache-2.0

#include "duet/translation.hpp"

#include <fmt/format.h>

#include "duet/memory.hpp"

namespace duet {

namespace {

enum class Shape { Scalar, Pointer, Aggregate };

Shape shape_of(const TypeDesc& raw, const TypeEnv& env) {
  const TypeDesc& t = env.resolve(raw);
  if (t.is_int()) return Shape::Scalar;
  if (t.is_ptr()) return Shape::Pointer;
  if (const auto* c = std::get_if<CellType>(&t.node))
    return shape_of(*c->inner, env);
  return Shape::Aggregate;
}

[[noreturn]] void invalid(const std::string& msg) {
  throw UbError(DiagKind::InvalidBinding, msg);
}

AbiValue convert_scalar(const TypeRef& from, const ByteVec& bytes,
                        const TypeRef& to, const TypeEnv& env,
                        const BoundaryHooks& hooks, const std::string& what) {
  Layout lf = layout_of(from, env);
  Layout lt = layout_of(to, env);
  if (lf.size != lt.size)
    invalid(fmt::format("{}: {} ({} bytes) is passed where {} ({} bytes) is "
                        "expected",
                        what, render_type(from), lf.size, render_type(to),
                        lt.size));
  Shape sf = shape_of(*from, env);
  Shape st = shape_of(*to, env);
  if (st == Shape::Aggregate)
    return AbiValue{AbiValue::Kind::Blob, 0, bytes, {}};
  AbiValue out;
  out.bytes = bytes;
  if (sf == Shape::Pointer && st == Shape::Scalar) {
    if (hooks.expose) hooks.expose(bytes);
    for (auto& b : out.bytes) b.frag.reset();
  } else if (sf == Shape::Scalar && st == Shape::Pointer) {
    if (hooks.from_int && all_init(bytes)) out.bytes = hooks.from_int(bytes);
  }
  if (st == Shape::Pointer) {
    out.kind = AbiValue::Kind::Pointer;
  } else {
    out.kind = AbiValue::Kind::Scalar;
    out.width = static_cast<unsigned>(lt.size * 8);
  }
  return out;
}

}  // namespace

AbiValue to_abi(const TypeRef& t, const ByteVec& bytes, const TypeEnv& env) {
  switch (shape_of(*t, env)) {
    case Shape::Scalar:
      return AbiValue{AbiValue::Kind::Scalar,
                      static_cast<unsigned>(bytes.size() * 8), bytes, {}};
    case Shape::Pointer:
      return AbiValue{AbiValue::Kind::Pointer, 0, bytes, {}};
    case Shape::Aggregate: break;
  }
  AbiValue out{AbiValue::Kind::Aggregate, 0, bytes, {}};
  const TypeDesc& r = env.resolve(*t);
  Layout l = layout_of(*t, env);
  auto fields = aggregate_fields(r, env);
  for (std::size_t k = 0; k < fields.size(); ++k) {
    std::uint64_t off = k < l.field_offsets.size() ? l.field_offsets[k] : 0;
    std::uint64_t sz = layout_of(fields[k], env).size;
    ByteVec part(bytes.begin() + off, bytes.begin() + off + sz);
    out.fields.push_back(to_abi(fields[k], part, env));
  }
  if (out.fields.empty()) out.kind = AbiValue::Kind::Blob;
  return out;
}

std::vector<AbiValue> lower_call(const std::vector<TypedValue>& args,
                                 const Signature& callee, const TypeEnv& env,
                                 const BoundaryHooks& hooks) {
  std::vector<AbiValue> out;
  const std::size_t fixed = callee.params.size();
  std::size_t j = 0;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const TypeRef& a = args[i].type;
    const ByteVec& bytes = args[i].bytes;
    const std::string what = fmt::format("argument {}", i + 1);
    const Shape sa = shape_of(*a, env);
    if (j >= fixed) {
      if (!callee.variadic)
        invalid(fmt::format("{}: the definition takes only {} parameters",
                            what, fixed));
      if (sa == Shape::Aggregate)
        throw UbError(DiagKind::UnsupportedOperation,
                      fmt::format("{}: aggregate {} passed as a variadic "
                                  "argument",
                                  what, render_type(a)));
      out.push_back(to_abi(a, bytes, env));
      continue;
    }
    const TypeRef& d = callee.params[j];
    if (sa != Shape::Aggregate) {
      out.push_back(convert_scalar(a, bytes, d, env, hooks, what));
      ++j;
      continue;
    }
    const Layout la = layout_of(a, env);
    const Layout ld = layout_of(d, env);
    const auto fa = aggregate_fields(env.resolve(*a), env);
    const Shape sd = shape_of(*d, env);
    if (sd == Shape::Aggregate) {
      if (la.size != ld.size)
        invalid(fmt::format("{}: {} ({} bytes) is passed where {} ({} bytes) "
                            "is expected",
                            what, render_type(a), la.size, render_type(d),
                            ld.size));
      out.push_back(to_abi(d, bytes, env));
      ++j;
      continue;
    }
    if (la.size == ld.size) {
      AbiValue v{AbiValue::Kind::Scalar, static_cast<unsigned>(ld.size * 8),
                 bytes, {}};
      if (sd == Shape::Pointer)
        v = AbiValue{AbiValue::Kind::Pointer, 0, bytes, {}};
      out.push_back(std::move(v));
      ++j;
      continue;
    }
    const std::size_t remaining = args.size() - i - 1;
    if (is_homogeneous_aggregate(env.resolve(*a), env) && !fa.empty() &&
        fixed >= remaining + fa.size() && j + fa.size() <= fixed) {
      std::uint64_t off = 0;
      for (std::size_t k = 0; k < fa.size(); ++k) {
        if (shape_of(*fa[k], env) == Shape::Aggregate)
          invalid(fmt::format("{}: nested aggregate field {} cannot be "
                              "flattened",
                              what, render_type(fa[k])));
        std::uint64_t sz = layout_of(fa[k], env).size;
        ByteVec part(bytes.begin() + off, bytes.begin() + off + sz);
        out.push_back(convert_scalar(
            fa[k], part, callee.params[j + k], env, hooks,
            fmt::format("{} field {}", what, k + 1)));
        off += sz;
      }
      j += fa.size();
      continue;
    }
    invalid(fmt::format("{}: {} ({} bytes) is passed where {} ({} bytes) is "
                        "expected",
                        what, render_type(a), la.size, render_type(d),
                        ld.size));
  }
  if (j < fixed)
    invalid(fmt::format("the definition expects {} parameters but the "
                        "binding supplies {}",
                        fixed, j));
  return out;
}

TypedValue raise_return(const AbiValue& v, const TypeRef& definition_ret,
                        const TypeRef& binding_ret, const TypeEnv& env,
                        const BoundaryHooks& hooks) {
  const bool def_unit = !definition_ret || definition_ret->is_unit();
  const bool bind_unit = !binding_ret || binding_ret->is_unit();
  if (def_unit && bind_unit) return TypedValue{unit_type(), {}};
  if (bind_unit)
    invalid(fmt::format("the definition returns {} but the binding declares "
                        "no return type",
                        render_type(definition_ret)));
  if (def_unit)
    invalid(fmt::format("the binding expects {} but the definition returns "
                        "nothing",
                        render_type(binding_ret)));
  Shape sd = shape_of(*definition_ret, env);
  Shape sb = shape_of(*binding_ret, env);
  if (sd != Shape::Aggregate && sb != Shape::Aggregate) {
    AbiValue c = convert_scalar(definition_ret, v.bytes, binding_ret, env,
                                hooks, "return value");
    return TypedValue{binding_ret, c.bytes};
  }
  Layout ld = layout_of(definition_ret, env);
  Layout lb = layout_of(binding_ret, env);
  if (ld.size != lb.size)
    invalid(fmt::format("return value: the definition returns {} ({} bytes) "
                        "but the binding declares {} ({} bytes)",
                        render_type(definition_ret), ld.size,
                        render_type(binding_ret), lb.size));
  return TypedValue{binding_ret, v.bytes};
}

TypeRef type_opaque_pointer(std::optional<std::uint64_t> target_size,
                            bool stack_or_static) {
  if (stack_or_static && target_size) {
    switch (*target_size) {
      case 1: return int_type(8, false);
      case 2: return int_type(16, false);
      case 4: return int_type(32, false);
      case 8: return int_type(64, false);
      default: break;
    }
  }
  return int_type(8, false);
}

TypeRef type_opaque_pointer(const PointerValue& p, const Memory& mem) {
  const Allocation* a = p.alloc ? mem.find(*p.alloc) : nullptr;
  if (a == nullptr) return type_opaque_pointer(std::nullopt, false);
  bool stack_or_static = a->origin == Origin::HostStack ||
                         a->origin == Origin::ForeignStack ||
                         a->origin == Origin::Static;
  return type_opaque_pointer(a->size, stack_or_static);
}

}  // namespace duet
