// SPDX-License-Identifier: Apache-2.0
//
// The simulated type system shared by both dialects and its byte layout on
// the fixed 64-bit little-endian target.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace duet {

inline constexpr std::uint64_t kPointerSize = 8;

/// Half-open byte range [begin, end).
struct ByteRange {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;

  std::uint64_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool contains(std::uint64_t off) const { return off >= begin && off < end; }
  bool operator==(const ByteRange&) const = default;
};

enum class PtrKind { SharedRef, MutRef, RawConst, RawMut, Opaque, Box };

struct TypeDesc;
using TypeRef = std::shared_ptr<const TypeDesc>;

struct FieldDef {
  std::string name;
  TypeRef type;
  std::optional<std::uint64_t> explicit_offset;

  bool operator==(const FieldDef& other) const;
};

struct IntType {
  unsigned bits = 32;
  bool is_signed = true;
  bool operator==(const IntType&) const = default;
};

struct PtrType {
  PtrKind kind = PtrKind::RawMut;
  TypeRef pointee;  // null for opaque pointers
  bool operator==(const PtrType& other) const;
};

struct StructType {
  std::string name;
  std::vector<FieldDef> fields;
  bool operator==(const StructType&) const = default;
};

struct ArrayType {
  TypeRef elem;
  std::uint64_t count = 0;
  bool operator==(const ArrayType& other) const;
};

struct CellType {
  TypeRef inner;
  bool operator==(const CellType& other) const;
};

struct PhantomType {
  TypeRef inner;
  bool operator==(const PhantomType& other) const;
};

struct UnitType {
  bool operator==(const UnitType&) const = default;
};

/// Reference to a struct declared in a `type` section, resolved through a
/// TypeEnv. Lets pointer fields name their own enclosing struct.
struct NamedType {
  std::string name;
  bool operator==(const NamedType&) const = default;
};

struct TypeDesc {
  std::variant<IntType, PtrType, StructType, ArrayType, CellType, PhantomType,
               UnitType, NamedType>
      node;

  bool operator==(const TypeDesc&) const = default;

  bool is_int() const { return std::holds_alternative<IntType>(node); }
  bool is_ptr() const { return std::holds_alternative<PtrType>(node); }
  bool is_unit() const { return std::holds_alternative<UnitType>(node); }
  const IntType* as_int() const { return std::get_if<IntType>(&node); }
  const PtrType* as_ptr() const { return std::get_if<PtrType>(&node); }
};

bool type_eq(const TypeRef& a, const TypeRef& b);

// Constructors.
TypeRef int_type(unsigned bits, bool is_signed = true);
TypeRef ptr_type(PtrKind kind, TypeRef pointee);
TypeRef opaque_ptr();
TypeRef struct_type(std::string name, std::vector<FieldDef> fields);
TypeRef array_type(TypeRef elem, std::uint64_t count);
TypeRef cell_type(TypeRef inner);
TypeRef phantom_type(TypeRef inner);
TypeRef unit_type();
TypeRef named_type(std::string name);

bool is_reference(PtrKind kind);
bool is_raw(PtrKind kind);

std::string render_type(const TypeDesc& t);
inline std::string render_type(const TypeRef& t) { return render_type(*t); }

class LayoutError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Layout {
  std::uint64_t size = 0;
  std::uint64_t align = 1;
  std::vector<std::uint64_t> field_offsets;
  std::vector<ByteRange> padding_ranges;
  std::vector<ByteRange> cell_ranges;
  /// Byte ranges covered by integer or pointer leaves (everything that must be
  /// initialized for a typed read of the whole value).
  std::vector<ByteRange> value_ranges;

  bool operator==(const Layout&) const = default;
};

/// Declared struct types of a scenario, by name.
class TypeEnv {
 public:
  void define(std::string name, TypeRef type);
  const TypeDesc* find(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }

  /// Follows NamedType references to the underlying definition.
  const TypeDesc& resolve(const TypeDesc& t) const;

 private:
  std::map<std::string, TypeRef> types_;
};

/// Deterministic C layout: fields in declaration order, each at the next
/// multiple of its alignment (or its explicit offset), trailing padding to the
/// struct alignment. Throws LayoutError on recursion without indirection or on
/// bad explicit offsets.
Layout layout_of(const TypeDesc& t, const TypeEnv& env = {});
inline Layout layout_of(const TypeRef& t, const TypeEnv& env = {}) {
  return layout_of(*t, env);
}

/// All leaves are the identical type and there is no padding.
bool is_homogeneous_aggregate(const TypeDesc& t, const TypeEnv& env);

/// Field types of a struct or the repeated element of an array; empty for
/// scalars.
std::vector<TypeRef> aggregate_fields(const TypeDesc& t, const TypeEnv& env);

}  // namespace duet
