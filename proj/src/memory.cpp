// SPDX-License-Identifier: Apache-2.0

#include "duet/memory.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "duet/kernels.hpp"

namespace duet {

const char* origin_name(Origin o) {
  switch (o) {
    case Origin::HostStack: return "host-stack";
    case Origin::HostHeap: return "host-heap";
    case Origin::ForeignHeap: return "foreign-heap";
    case Origin::ForeignStack: return "foreign-stack";
    case Origin::Static: return "static";
  }
  return "?";
}

bool is_heap(Origin o) {
  return o == Origin::HostHeap || o == Origin::ForeignHeap;
}

namespace {

std::uint64_t round_up(std::uint64_t v, std::uint64_t align) {
  return (v + align - 1) / align * align;
}

// splitmix64 finalizer; spreads small seeds over the start window.
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool is_foreign(Origin o) {
  return o == Origin::ForeignHeap || o == Origin::ForeignStack;
}

}  // namespace

Memory::Memory(MemoryConfig cfg) : cfg_(cfg) {
  if (cfg_.address_seed != 0)
    next_addr_ = kBaseAddress + (mix(cfg_.address_seed) % 4096) * 16;
}

const Allocation* Memory::find(AllocId id) const {
  auto it = allocs_.find(id);
  return it == allocs_.end() ? nullptr : &it->second;
}

Allocation* Memory::find(AllocId id) {
  auto it = allocs_.find(id);
  return it == allocs_.end() ? nullptr : &it->second;
}

PointerValue Memory::allocate(std::uint64_t size, std::uint64_t align,
                              Origin origin, const std::string& label,
                              const Site& site) {
  if (align == 0 || (align & (align - 1)) != 0)
    throw UbError(DiagKind::UnsupportedOperation,
                  fmt::format("alignment {} is not a power of two", align));
  Allocation a;
  a.id = next_id_++;
  a.base = round_up(next_addr_, align);
  next_addr_ = a.base + std::max<std::uint64_t>(size, 1) + kGuardGap;
  a.size = size;
  a.align = align;
  a.origin = origin;
  a.label = label;
  a.created = site;
  if (cfg_.zero_init_foreign && is_foreign(origin)) {
    a.bytes = zero_bytes(size);
    a.init_mask.assign(size, 1);
  } else {
    a.bytes = uninit_bytes(size);
    a.init_mask.assign(size, 0);
  }
  a.tracker = make_tracker(cfg_.model, tags_, size, label, site);
  PointerValue p{a.id, 0, Provenance::concrete(a.tracker->base_tag())};
  allocs_.emplace(a.id, std::move(a));
  return p;
}

Allocation& Memory::checked(const PointerValue& p, std::uint64_t size,
                            const char* what) {
  Allocation* a = p.alloc ? find(*p.alloc) : nullptr;
  if (a == nullptr || p.prov.kind == Provenance::Kind::None) {
    UbError e(DiagKind::AccessOutOfBounds,
              fmt::format("{} of {} bytes at address {:#x}: the pointer has "
                          "no provenance for any allocation",
                          what, size, address_of(p)));
    e.diagnostic().addresses.push_back(address_of(p));
    throw e;
  }
  if (!a->live) {
    UbError e(DiagKind::UseAfterFree,
              fmt::format("{} of {} bytes in alloc{} after it was freed",
                          what, size, a->id));
    e.diagnostic().addresses.push_back(a->base + p.offset);
    e.diagnostic().alloc_origin = origin_name(a->origin);
    throw e;
  }
  if (p.offset < 0 || static_cast<std::uint64_t>(p.offset) > a->size ||
      size > a->size - static_cast<std::uint64_t>(p.offset)) {
    UbError e(DiagKind::AccessOutOfBounds,
              fmt::format("{} of {} bytes at offset {} is out of bounds of "
                          "alloc{} ({} bytes)",
                          what, size, p.offset, a->id, a->size));
    e.diagnostic().addresses.push_back(address_of(p));
    e.diagnostic().alloc_origin = origin_name(a->origin);
    throw e;
  }
  return *a;
}

namespace {

void check_align(const MemoryConfig& cfg, const Allocation& a,
                 const PointerValue& p, std::uint64_t align, Dialect actor) {
  if (align <= 1) return;
  if (actor == Dialect::Foreign && !cfg.check_foreign_alignment) return;
  auto off = static_cast<std::uint64_t>(p.offset);
  bool ok = cfg.symbolic_alignment
                ? (off % align == 0 && a.align >= align)
                : ((a.base + off) % align == 0);
  if (ok) return;
  UbError e(DiagKind::MisalignedAccess,
            fmt::format("access requires alignment {}, but the pointer is at "
                        "offset {} of alloc{} (alignment {})",
                        align, off, a.id, a.align));
  e.diagnostic().addresses.push_back(a.base + off);
  throw e;
}

}  // namespace

ByteVec Memory::read(const PointerValue& p, std::uint64_t size,
                     std::uint64_t align, Dialect actor, const Site& site) {
  Allocation& a = checked(p, size, "read");
  check_align(cfg_, a, p, align, actor);
  auto off = static_cast<std::uint64_t>(p.offset);
  try {
    a.tracker->access(p.prov, {off, off + size}, AccessKind::Read, site);
  } catch (UbError& e) {
    e.diagnostic().addresses.push_back(a.base + off);
    throw;
  }
  return ByteVec(a.bytes.begin() + off, a.bytes.begin() + off + size);
}

void Memory::write(const PointerValue& p, const ByteVec& bytes,
                   std::uint64_t align, Dialect actor, const Site& site) {
  Allocation& a = checked(p, bytes.size(), "write");
  check_align(cfg_, a, p, align, actor);
  auto off = static_cast<std::uint64_t>(p.offset);
  try {
    a.tracker->access(p.prov, {off, off + bytes.size()}, AccessKind::Write,
                      site);
  } catch (UbError& e) {
    e.diagnostic().addresses.push_back(a.base + off);
    throw;
  }
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    a.bytes[off + i] = bytes[i];
    a.init_mask[off + i] = bytes[i].init ? 1 : 0;
  }
}

ByteVec Memory::read_typed(const PointerValue& p, const TypeRef& t,
                           const TypeEnv& env, Dialect actor,
                           bool require_init, const Site& site) {
  Layout l = layout_of(t, env);
  ByteVec out = read(p, l.size, l.align, actor, site);
  if (require_init) check_init(p, t, env, site);
  return out;
}

void Memory::write_typed(const PointerValue& p, const TypeRef& t,
                         const TypeEnv& env, const ByteVec& bytes,
                         Dialect actor, const Site& site) {
  Layout l = layout_of(t, env);
  if (bytes.size() != l.size)
    throw UbError(DiagKind::UnsupportedOperation,
                  fmt::format("value of {} bytes stored as {} ({} bytes)",
                              bytes.size(), render_type(t), l.size));
  write(p, bytes, l.align, actor, site);
}

void Memory::check_init(const PointerValue& p, const TypeRef& t,
                        const TypeEnv& env, const Site& site) {
  (void)site;
  Layout l = layout_of(t, env);
  Allocation& a = checked(p, l.size, "read");
  auto off = static_cast<std::uint64_t>(p.offset);
  for (const ByteRange& r : l.value_ranges) {
    std::span<const std::uint8_t> mask(a.init_mask.data() + off + r.begin,
                                       r.size());
    std::size_t hole = kernels::find_zero(mask);
    if (hole == kernels::npos) continue;
    UbError e(DiagKind::UninitializedRead,
              fmt::format("reading {} at offset {} of alloc{}: byte {} is "
                          "uninitialized",
                          render_type(t), off, a.id, r.begin + hole));
    e.diagnostic().addresses.push_back(a.base + off + r.begin + hole);
    e.diagnostic().alloc_origin = origin_name(a.origin);
    throw e;
  }
}

PointerValue Memory::retag(const PointerValue& p, std::uint64_t size,
                           RetagKind kind,
                           const std::vector<ByteRange>& cell_ranges,
                           bool protect, const std::string& label,
                           const Site& site) {
  if (kind == RetagKind::Raw && !p.prov.is_concrete()) return p;
  Allocation& a = checked(p, size, "reborrow");
  auto off = static_cast<std::uint64_t>(p.offset);
  std::vector<ByteRange> cells;
  for (const ByteRange& r : cell_ranges)
    cells.push_back({off + r.begin, off + r.end});
  PointerValue out = p;
  try {
    out.prov = a.tracker->retag(p.prov, {off, off + size}, kind, cells,
                                protect, label, site);
  } catch (UbError& e) {
    e.diagnostic().addresses.push_back(a.base + off);
    throw;
  }
  return out;
}

void Memory::protector_end(const PointerValue& p) {
  if (!p.alloc || !p.prov.is_concrete()) return;
  Allocation* a = find(*p.alloc);
  if (a != nullptr && a->live) a->tracker->protector_end(p.prov.tag);
}

void Memory::deallocate(const PointerValue& p, Allocator via,
                        const Site& site) {
  Allocation* a = p.alloc ? find(*p.alloc) : nullptr;
  if (a == nullptr) {
    UbError e(DiagKind::InvalidDealloc,
              fmt::format("deallocating address {:#x}, which is not the "
                          "start of any allocation",
                          address_of(p)));
    e.diagnostic().addresses.push_back(address_of(p));
    throw e;
  }
  auto fail = [&](DiagKind k, std::string msg) {
    UbError e(k, std::move(msg));
    e.diagnostic().addresses.push_back(a->base + p.offset);
    e.diagnostic().alloc_origin = origin_name(a->origin);
    throw e;
  };
  if (!a->live)
    fail(DiagKind::DoubleFree,
         fmt::format("alloc{} ({}) is freed twice", a->id,
                     origin_name(a->origin)));
  if (p.offset != 0)
    fail(DiagKind::InvalidDealloc,
         fmt::format("deallocating alloc{} through a pointer at offset {}",
                     a->id, p.offset));
  if (!is_heap(a->origin))
    fail(DiagKind::InvalidDealloc,
         fmt::format("deallocating {} memory (alloc{})",
                     origin_name(a->origin), a->id));
  if ((via == Allocator::Host && a->origin == Origin::ForeignHeap) ||
      (via == Allocator::Foreign && a->origin == Origin::HostHeap))
    fail(DiagKind::CrossLanguageDealloc,
         fmt::format("alloc{} was allocated by the {} allocator but is freed "
                     "by the {} allocator",
                     a->id, a->origin == Origin::HostHeap ? "host" : "foreign",
                     via == Allocator::Host ? "host" : "foreign"));
  try {
    // Freeing counts as a write to every byte through the given pointer.
    a->tracker->access(p.prov, {0, a->size}, AccessKind::Write, site);
    a->tracker->dealloc_check(site);
  } catch (UbError& e) {
    e.diagnostic().addresses.push_back(a->base);
    e.diagnostic().alloc_origin = origin_name(a->origin);
    throw;
  }
  a->live = false;
}

void Memory::release(AllocId id) {
  if (Allocation* a = find(id)) a->live = false;
}

void Memory::mark_leak_ok(const PointerValue& p) {
  if (!p.alloc) return;
  if (Allocation* a = find(*p.alloc)) a->leak_ok = true;
}

std::uint64_t Memory::address_of(const PointerValue& p) const {
  if (!p.alloc) return static_cast<std::uint64_t>(p.offset);
  const Allocation* a = find(*p.alloc);
  if (a == nullptr) return static_cast<std::uint64_t>(p.offset);
  return a->base + static_cast<std::uint64_t>(p.offset);
}

std::uint64_t Memory::expose(const PointerValue& p) {
  if (p.alloc && p.prov.is_concrete()) {
    if (Allocation* a = find(*p.alloc)) {
      a->exposed.insert(p.prov.tag);
      if (a->live) a->tracker->expose(p.prov.tag);
    }
  }
  return address_of(p);
}

PointerValue Memory::from_exposed(std::uint64_t addr, const Site& site) {
  (void)site;
  if (cfg_.strict_provenance) {
    UbError e(DiagKind::StrictProvenanceViolation,
              fmt::format("integer-to-pointer cast of {:#x} under strict "
                          "provenance",
                          addr));
    e.diagnostic().addresses.push_back(addr);
    throw e;
  }
  for (const auto& [id, a] : allocs_) {
    if (a.live && addr >= a.base && addr < a.base + std::max<std::uint64_t>(a.size, 1))
      return PointerValue{id, static_cast<std::int64_t>(addr - a.base),
                          Provenance::wildcard()};
  }
  return PointerValue{std::nullopt, static_cast<std::int64_t>(addr),
                      Provenance::none()};
}

ByteVec Memory::encode(const PointerValue& p) const {
  return encode_pointer(p, address_of(p));
}

PointerValue Memory::decode(const ByteVec& bytes) const {
  std::uint64_t addr = decode_uint(bytes);
  if (auto f = intact_fragment(bytes)) {
    if (const Allocation* a = find(f->alloc))
      return PointerValue{a->id, static_cast<std::int64_t>(addr - a->base),
                          f->prov};
  }
  return PointerValue{std::nullopt, static_cast<std::int64_t>(addr),
                      Provenance::none()};
}

std::vector<Diagnostic> Memory::leak_report() const {
  std::vector<Diagnostic> out;
  for (const auto& [id, a] : allocs_) {
    if (!a.live || !is_heap(a.origin) || a.leak_ok) continue;
    Diagnostic d;
    d.kind = DiagKind::MemoryLeak;
    d.message = fmt::format("memory leaked: alloc{} ({} bytes, {}) is never "
                            "freed",
                            id, a.size, origin_name(a.origin));
    d.site = a.created;
    d.alloc_origin = origin_name(a.origin);
    d.addresses.push_back(a.base);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace duet
