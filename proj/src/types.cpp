// SPDX-License-Identifier: Apache-2.0

#include "duet/types.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

namespace duet {

bool type_eq(const TypeRef& a, const TypeRef& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  return *a == *b;
}

bool FieldDef::operator==(const FieldDef& other) const {
  return name == other.name && type_eq(type, other.type) &&
         explicit_offset == other.explicit_offset;
}
bool PtrType::operator==(const PtrType& other) const {
  return kind == other.kind && type_eq(pointee, other.pointee);
}
bool ArrayType::operator==(const ArrayType& other) const {
  return count == other.count && type_eq(elem, other.elem);
}
bool CellType::operator==(const CellType& other) const {
  return type_eq(inner, other.inner);
}
bool PhantomType::operator==(const PhantomType& other) const {
  return type_eq(inner, other.inner);
}

namespace {
TypeRef make(auto node) {
  return std::make_shared<const TypeDesc>(TypeDesc{std::move(node)});
}
}  // namespace

TypeRef int_type(unsigned bits, bool is_signed) {
  return make(IntType{bits, is_signed});
}
TypeRef ptr_type(PtrKind kind, TypeRef pointee) {
  return make(PtrType{kind, std::move(pointee)});
}
TypeRef opaque_ptr() { return make(PtrType{PtrKind::Opaque, nullptr}); }
TypeRef struct_type(std::string name, std::vector<FieldDef> fields) {
  return make(StructType{std::move(name), std::move(fields)});
}
TypeRef array_type(TypeRef elem, std::uint64_t count) {
  return make(ArrayType{std::move(elem), count});
}
TypeRef cell_type(TypeRef inner) { return make(CellType{std::move(inner)}); }
TypeRef phantom_type(TypeRef inner) {
  return make(PhantomType{std::move(inner)});
}
TypeRef unit_type() { return make(UnitType{}); }
TypeRef named_type(std::string name) { return make(NamedType{std::move(name)}); }

bool is_reference(PtrKind kind) {
  return kind == PtrKind::SharedRef || kind == PtrKind::MutRef;
}
bool is_raw(PtrKind kind) {
  return kind == PtrKind::RawConst || kind == PtrKind::RawMut ||
         kind == PtrKind::Opaque;
}

std::string render_type(const TypeDesc& t) {
  struct Visitor {
    std::string operator()(const IntType& i) const {
      return fmt::format("{}{}", i.is_signed ? 'i' : 'u', i.bits);
    }
    std::string operator()(const PtrType& p) const {
      if (p.kind == PtrKind::Opaque) return "ptr";
      std::string inner = p.pointee ? render_type(*p.pointee) : "ptr";
      switch (p.kind) {
        case PtrKind::SharedRef: return "&" + inner;
        case PtrKind::MutRef: return "&mut " + inner;
        case PtrKind::RawConst: return "*const " + inner;
        case PtrKind::RawMut: return "*mut " + inner;
        case PtrKind::Box: return "box " + inner;
        case PtrKind::Opaque: break;
      }
      return "ptr";
    }
    std::string operator()(const StructType& s) const {
      std::string out = "struct " + s.name + " {";
      for (std::size_t i = 0; i < s.fields.size(); ++i) {
        const auto& f = s.fields[i];
        out += fmt::format("{}{}: {}", i ? ", " : " ", f.name,
                           render_type(*f.type));
        if (f.explicit_offset) out += fmt::format(" @ {}", *f.explicit_offset);
      }
      return out + " }";
    }
    std::string operator()(const ArrayType& a) const {
      return fmt::format("[{}; {}]", render_type(*a.elem), a.count);
    }
    std::string operator()(const CellType& c) const {
      return "cell<" + render_type(*c.inner) + ">";
    }
    std::string operator()(const PhantomType& p) const {
      return "phantom<" + render_type(*p.inner) + ">";
    }
    std::string operator()(const UnitType&) const { return "()"; }
    std::string operator()(const NamedType& n) const { return n.name; }
  };
  return std::visit(Visitor{}, t.node);
}

void TypeEnv::define(std::string name, TypeRef type) {
  types_[std::move(name)] = std::move(type);
}

const TypeDesc* TypeEnv::find(const std::string& name) const {
  auto it = types_.find(name);
  return it == types_.end() ? nullptr : it->second.get();
}

const TypeDesc& TypeEnv::resolve(const TypeDesc& t) const {
  const TypeDesc* cur = &t;
  std::set<std::string> seen;
  while (const auto* named = std::get_if<NamedType>(&cur->node)) {
    if (!seen.insert(named->name).second)
      throw LayoutError("type alias cycle through '" + named->name + "'");
    const TypeDesc* next = find(named->name);
    if (!next) throw LayoutError("unknown type '" + named->name + "'");
    cur = next;
  }
  return *cur;
}

namespace {

std::uint64_t round_up(std::uint64_t v, std::uint64_t align) {
  return (v + align - 1) / align * align;
}

void append_shifted(std::vector<ByteRange>& dst,
                    const std::vector<ByteRange>& src, std::uint64_t shift) {
  for (const auto& r : src) dst.push_back({r.begin + shift, r.end + shift});
}

// Sorts and merges touching ranges.
std::vector<ByteRange> normalize(std::vector<ByteRange> ranges) {
  std::sort(ranges.begin(), ranges.end(),
            [](const ByteRange& a, const ByteRange& b) {
              return a.begin < b.begin;
            });
  std::vector<ByteRange> out;
  for (const auto& r : ranges) {
    if (r.empty()) continue;
    if (!out.empty() && out.back().end >= r.begin)
      out.back().end = std::max(out.back().end, r.end);
    else
      out.push_back(r);
  }
  return out;
}

class LayoutComputer {
 public:
  explicit LayoutComputer(const TypeEnv& env) : env_(env) {}

  Layout compute(const TypeDesc& t) {
    struct Visitor {
      LayoutComputer& self;
      Layout operator()(const IntType& i) const {
        if (i.bits != 8 && i.bits != 16 && i.bits != 32 && i.bits != 64)
          throw LayoutError(fmt::format("unsupported integer width {}", i.bits));
        std::uint64_t n = i.bits / 8;
        return Layout{.size = n, .align = n, .value_ranges = {{0, n}}};
      }
      Layout operator()(const PtrType&) const {
        return Layout{.size = kPointerSize,
                      .align = kPointerSize,
                      .value_ranges = {{0, kPointerSize}}};
      }
      Layout operator()(const StructType& s) const { return self.structure(s); }
      Layout operator()(const ArrayType& a) const { return self.array(a); }
      Layout operator()(const CellType& c) const {
        Layout inner = self.compute(*c.inner);
        inner.cell_ranges = inner.size ? std::vector<ByteRange>{{0, inner.size}}
                                       : std::vector<ByteRange>{};
        return inner;
      }
      Layout operator()(const PhantomType& p) const {
        // The marker must still be a well-formed type.
        (void)self.compute(*p.inner);
        return Layout{.size = 0, .align = 1};
      }
      Layout operator()(const UnitType&) const {
        return Layout{.size = 0, .align = 1};
      }
      Layout operator()(const NamedType& n) const {
        if (!self.active_.insert(n.name).second)
          throw LayoutError("recursive type '" + n.name +
                            "' without indirection");
        const TypeDesc* def = self.env_.find(n.name);
        if (!def) throw LayoutError("unknown type '" + n.name + "'");
        Layout out = self.compute(*def);
        self.active_.erase(n.name);
        return out;
      }
    };
    return std::visit(Visitor{*this}, t.node);
  }

 private:
  Layout structure(const StructType& s) {
    Layout out;
    std::set<std::string> names;
    std::vector<ByteRange> occupied;
    std::uint64_t cursor = 0;
    for (const auto& f : s.fields) {
      if (!names.insert(f.name).second)
        throw LayoutError("duplicate field '" + f.name + "' in " + s.name);
      Layout fl = compute(*f.type);
      std::uint64_t off = round_up(cursor, fl.align);
      if (f.explicit_offset) {
        off = *f.explicit_offset;
        if (off % fl.align != 0)
          throw LayoutError(fmt::format("field '{}' offset {} violates alignment {}",
                                        f.name, off, fl.align));
        for (const auto& r : occupied)
          if (fl.size && off < r.end && r.begin < off + fl.size)
            throw LayoutError("field '" + f.name + "' overlaps another field");
      }
      out.field_offsets.push_back(off);
      if (fl.size) occupied.push_back({off, off + fl.size});
      out.align = std::max(out.align, fl.align);
      append_shifted(out.cell_ranges, fl.cell_ranges, off);
      append_shifted(out.padding_ranges, fl.padding_ranges, off);
      append_shifted(out.value_ranges, fl.value_ranges, off);
      cursor = std::max(cursor, off + fl.size);
    }
    out.size = round_up(cursor, out.align);
    // Gaps between fields and the tail become padding.
    auto covered = normalize(occupied);
    std::uint64_t pos = 0;
    for (const auto& r : covered) {
      if (r.begin > pos) out.padding_ranges.push_back({pos, r.begin});
      pos = r.end;
    }
    if (out.size > pos) out.padding_ranges.push_back({pos, out.size});
    out.padding_ranges = normalize(std::move(out.padding_ranges));
    out.cell_ranges = normalize(std::move(out.cell_ranges));
    out.value_ranges = normalize(std::move(out.value_ranges));
    return out;
  }

  Layout array(const ArrayType& a) {
    Layout el = compute(*a.elem);
    Layout out{.size = el.size * a.count, .align = el.align};
    for (std::uint64_t i = 0; i < a.count; ++i) {
      std::uint64_t off = i * el.size;
      out.field_offsets.push_back(off);
      append_shifted(out.cell_ranges, el.cell_ranges, off);
      append_shifted(out.padding_ranges, el.padding_ranges, off);
      append_shifted(out.value_ranges, el.value_ranges, off);
    }
    out.padding_ranges = normalize(std::move(out.padding_ranges));
    out.cell_ranges = normalize(std::move(out.cell_ranges));
    out.value_ranges = normalize(std::move(out.value_ranges));
    return out;
  }

  const TypeEnv& env_;
  std::set<std::string> active_;
};

}  // namespace

Layout layout_of(const TypeDesc& t, const TypeEnv& env) {
  return LayoutComputer(env).compute(t);
}

std::vector<TypeRef> aggregate_fields(const TypeDesc& t, const TypeEnv& env) {
  const TypeDesc& r = env.resolve(t);
  std::vector<TypeRef> out;
  if (const auto* s = std::get_if<StructType>(&r.node)) {
    for (const auto& f : s->fields) out.push_back(f.type);
  } else if (const auto* a = std::get_if<ArrayType>(&r.node)) {
    out.assign(a->count, a->elem);
  }
  return out;
}

bool is_homogeneous_aggregate(const TypeDesc& t, const TypeEnv& env) {
  auto fields = aggregate_fields(t, env);
  if (fields.empty()) return false;
  for (const auto& f : fields) {
    if (!type_eq(f, fields.front())) return false;
  }
  return layout_of(t, env).padding_ranges.empty();
}

}  // namespace duet
