// SPDX-License-Identifier: Apache-2.0
//
// The shared allocation store. Every access from either dialect goes through
// here: liveness, bounds, symbolic alignment, the aliasing tracker, and the
// per-byte initialization state, in that order.

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "duet/diagnostic.hpp"
#include "duet/tracker.hpp"
#include "duet/types.hpp"
#include "duet/values.hpp"

namespace duet {

enum class Origin : std::uint8_t {
  HostStack,
  HostHeap,
  ForeignHeap,
  ForeignStack,
  Static,
};

const char* origin_name(Origin o);
bool is_heap(Origin o);

/// Which allocator a deallocation request goes through.
enum class Allocator : std::uint8_t { Host, Foreign };

struct MemoryConfig {
  Model model = Model::TreeBorrows;
  bool strict_provenance = false;
  bool zero_init_foreign = false;
  bool symbolic_alignment = true;
  /// Foreign accesses are exempt from alignment checks unless set.
  bool check_foreign_alignment = false;
  std::uint64_t address_seed = 0;
};

struct Allocation {
  AllocId id = 0;
  std::uint64_t base = 0;
  std::uint64_t size = 0;
  std::uint64_t align = 1;
  ByteVec bytes;
  /// 1 per initialized byte; mirrors bytes[i].init for the mask scans.
  std::vector<std::uint8_t> init_mask;
  Origin origin = Origin::HostStack;
  bool live = true;
  bool leak_ok = false;  // intentionally leaked
  std::set<TagId> exposed;
  std::unique_ptr<AllocTracker> tracker;
  std::string label;
  Site created;
};

class Memory {
 public:
  static constexpr std::uint64_t kBaseAddress = 0x10000;
  static constexpr std::uint64_t kGuardGap = 16;

  explicit Memory(MemoryConfig cfg);

  const MemoryConfig& config() const { return cfg_; }
  TagRegistry& tags() { return tags_; }

  /// Fresh allocation; the result carries the base tag.
  PointerValue allocate(std::uint64_t size, std::uint64_t align, Origin origin,
                        const std::string& label, const Site& site);
  void deallocate(const PointerValue& p, Allocator via, const Site& site);
  /// End of a stack frame or similar scope exit: no checks.
  void release(AllocId id);
  void mark_leak_ok(const PointerValue& p);

  ByteVec read(const PointerValue& p, std::uint64_t size, std::uint64_t align,
               Dialect actor, const Site& site);
  void write(const PointerValue& p, const ByteVec& bytes, std::uint64_t align,
             Dialect actor, const Site& site);

  /// Typed read. With `require_init`, every value byte of `t` must be
  /// initialized.
  ByteVec read_typed(const PointerValue& p, const TypeRef& t,
                     const TypeEnv& env, Dialect actor, bool require_init,
                     const Site& site);
  void write_typed(const PointerValue& p, const TypeRef& t,
                   const TypeEnv& env, const ByteVec& bytes, Dialect actor,
                   const Site& site);

  /// Checks that every non-padding byte of `t` at `p` is initialized; no
  /// tracker access.
  void check_init(const PointerValue& p, const TypeRef& t, const TypeEnv& env,
                  const Site& site);

  PointerValue retag(const PointerValue& p, std::uint64_t size, RetagKind kind,
                     const std::vector<ByteRange>& cell_ranges, bool protect,
                     const std::string& label, const Site& site);
  void protector_end(const PointerValue& p);

  std::uint64_t expose(const PointerValue& p);
  PointerValue from_exposed(std::uint64_t addr, const Site& site);
  std::uint64_t address_of(const PointerValue& p) const;

  /// Pointer image for storing `p` in memory.
  ByteVec encode(const PointerValue& p) const;
  /// Rebuilds a pointer from an 8-byte image. Bytes without an intact
  /// fragment give a pointer without provenance.
  PointerValue decode(const ByteVec& bytes) const;

  std::vector<Diagnostic> leak_report() const;

  const Allocation* find(AllocId id) const;
  Allocation* find(AllocId id);
  const std::map<AllocId, Allocation>& allocations() const { return allocs_; }

 private:
  Allocation& checked(const PointerValue& p, std::uint64_t size,
                      const char* what);

  MemoryConfig cfg_;
  TagRegistry tags_;
  std::map<AllocId, Allocation> allocs_;
  AllocId next_id_ = 1;
  std::uint64_t next_addr_ = kBaseAddress;
};

}  // namespace duet
