// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "duet/types.hpp"

namespace duet {

using AllocId = std::uint64_t;
using TagId = std::uint64_t;

struct Provenance {
  enum class Kind : std::uint8_t { None, Concrete, Wildcard };

  Kind kind = Kind::None;
  TagId tag = 0;

  static Provenance none() { return {}; }
  static Provenance concrete(TagId t) { return {Kind::Concrete, t}; }
  static Provenance wildcard() { return {Kind::Wildcard, 0}; }

  bool is_concrete() const { return kind == Kind::Concrete; }
  bool is_wildcard() const { return kind == Kind::Wildcard; }
  bool operator==(const Provenance&) const = default;
};

std::string render_provenance(const Provenance& p);

/// A pointer is an allocation-relative offset plus provenance. Without an
/// allocation, `offset` holds the absolute simulated address.
struct PointerValue {
  std::optional<AllocId> alloc;
  std::int64_t offset = 0;
  Provenance prov;

  bool operator==(const PointerValue&) const = default;
};

/// Marks one byte of a stored pointer. A load reconstructs provenance only
/// when all eight bytes carry the same fragment in order.
struct Fragment {
  Provenance prov;
  AllocId alloc = 0;
  std::uint8_t index = 0;

  bool operator==(const Fragment&) const = default;
};

struct AbstractByte {
  bool init = false;
  std::uint8_t value = 0;
  std::optional<Fragment> frag;

  static AbstractByte uninit() { return {}; }
  static AbstractByte of(std::uint8_t v) { return {true, v, std::nullopt}; }
  bool operator==(const AbstractByte&) const = default;
};

using ByteVec = std::vector<AbstractByte>;

ByteVec uninit_bytes(std::size_t n);
ByteVec zero_bytes(std::size_t n);

/// Little-endian integer image.
ByteVec encode_int(std::uint64_t value, std::size_t width);

/// Pointer image: the absolute address, with provenance fragments when the
/// pointer carries a tag and names an allocation.
ByteVec encode_pointer(const PointerValue& p, std::uint64_t address);

bool all_init(const ByteVec& bytes);

/// Integer value of a fully initialized little-endian image.
std::uint64_t decode_uint(const ByteVec& bytes);
std::int64_t decode_sint(const ByteVec& bytes);

/// The provenance fragment shared by all bytes, when the image is an intact
/// stored pointer.
std::optional<Fragment> intact_fragment(const ByteVec& bytes);

/// Keeps the low `bits` bits.
std::uint64_t truncate_to(std::uint64_t v, unsigned bits);

}  // namespace duet
