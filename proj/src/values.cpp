// SPDX-License-Identifier: Apache-2.0

#include "duet/values.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace duet {

std::string render_provenance(const Provenance& p) {
  switch (p.kind) {
    case Provenance::Kind::None: return "none";
    case Provenance::Kind::Wildcard: return "wildcard";
    case Provenance::Kind::Concrete: return fmt::format("<{}>", p.tag);
  }
  return "none";
}

ByteVec uninit_bytes(std::size_t n) { return ByteVec(n); }

ByteVec zero_bytes(std::size_t n) { return ByteVec(n, AbstractByte::of(0)); }

ByteVec encode_int(std::uint64_t value, std::size_t width) {
  ByteVec out(width);
  for (std::size_t i = 0; i < width; ++i) {
    out[i] = AbstractByte::of(
        i < 8 ? static_cast<std::uint8_t>(value >> (8 * i)) : 0);
  }
  return out;
}

ByteVec encode_pointer(const PointerValue& p, std::uint64_t address) {
  ByteVec out = encode_int(address, kPointerSize);
  if (p.alloc && p.prov.kind != Provenance::Kind::None) {
    for (std::uint8_t i = 0; i < kPointerSize; ++i)
      out[i].frag = Fragment{p.prov, *p.alloc, i};
  }
  return out;
}

bool all_init(const ByteVec& bytes) {
  return std::all_of(bytes.begin(), bytes.end(),
                     [](const AbstractByte& b) { return b.init; });
}

std::uint64_t decode_uint(const ByteVec& bytes) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bytes.size() && i < 8; ++i)
    v |= static_cast<std::uint64_t>(bytes[i].value) << (8 * i);
  return v;
}

std::int64_t decode_sint(const ByteVec& bytes) {
  std::uint64_t v = decode_uint(bytes);
  std::size_t bits = std::min<std::size_t>(bytes.size(), 8) * 8;
  if (bits == 0) return 0;
  if (bits < 64 && (v >> (bits - 1)) & 1) v |= ~0ULL << bits;
  return static_cast<std::int64_t>(v);
}

std::optional<Fragment> intact_fragment(const ByteVec& bytes) {
  if (bytes.size() != kPointerSize || !bytes[0].frag) return std::nullopt;
  const Fragment& first = *bytes[0].frag;
  for (std::uint8_t i = 0; i < kPointerSize; ++i) {
    const auto& f = bytes[i].frag;
    if (!f || !bytes[i].init || f->index != i || f->prov != first.prov ||
        f->alloc != first.alloc)
      return std::nullopt;
  }
  return first;
}

std::uint64_t truncate_to(std::uint64_t v, unsigned bits) {
  return bits >= 64 ? v : v & ((1ULL << bits) - 1);
}

}  // namespace duet
