// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

#include "duet/tracker.hpp"

namespace duet {

enum class Grant : std::uint8_t { Unique, SharedReadWrite, SharedReadOnly };

const char* grant_name(Grant g);
bool grants(Grant g, AccessKind kind);

struct SbItem {
  TagId tag = 0;
  Grant grant = Grant::Unique;
  bool is_protected = false;

  bool operator==(const SbItem&) const = default;
};

/// Stacked Borrows: one item stack per location. Stacks only ever grow by
/// pushes at the top and shrink by pops from the top.
class StackedBorrows final : public AllocTracker {
 public:
  struct Pop {
    Site site;
    std::string detail;
    std::string stack_before;
  };

  struct TagInfo {
    std::string label;
    Site created;
    ByteRange range;
    std::optional<Site> last_use;
    std::map<std::uint64_t, Pop> pops;
  };

  /// One mutation of one stack, for auditing.
  struct LogEntry {
    enum class Op : std::uint8_t { Push, Pop };
    Op op = Op::Push;
    std::uint64_t offset = 0;
    SbItem item;
    std::size_t depth = 0;  // stack size before the operation
  };

  StackedBorrows(TagRegistry& tags, std::uint64_t size, std::string base_label,
                 Site created);

  Model model() const override { return Model::StackedBorrows; }
  TagId base_tag() const override { return base_; }
  bool has_tag(TagId tag) const override { return info_.count(tag) != 0; }
  std::string label_of(TagId tag) const override;

  Provenance retag(const Provenance& parent, ByteRange range, RetagKind kind,
                   std::span<const ByteRange> cell_ranges, bool protect,
                   const std::string& label, const Site& site) override;
  void access(const Provenance& prov, ByteRange range, AccessKind kind,
              const Site& site) override;
  void protector_end(TagId tag) override;
  void expose(TagId tag) override { exposed_.insert(tag); }
  void dealloc_check(const Site& site) override;
  std::string render() const override;

  const std::vector<SbItem>& stack_at(std::uint64_t offset) const {
    return stacks_.at(offset);
  }
  const TagInfo& info(TagId tag) const { return info_.at(tag); }
  /// Push/pop log; only recorded while auditing is on.
  const std::vector<LogEntry>& log() const { return log_; }
  void set_audit(bool on) { audit_ = on; }
  std::string render_stack(const std::vector<SbItem>& stack) const;

 private:
  // Index of the item that grants `kind` to `prov` at `offset`; throws.
  std::size_t granting(const Provenance& prov, std::uint64_t offset,
                       AccessKind kind, const Site& site) const;
  // Pops the items an access through stack[idx] invalidates.
  void invalidate_above(std::uint64_t offset, std::size_t idx,
                        AccessKind kind, const std::string& via,
                        const Site& site);
  void push(std::uint64_t offset, SbItem item);
  [[noreturn]] void missing(const Provenance& prov, std::uint64_t offset,
                            AccessKind kind, const Site& site) const;
  void add_history(Diagnostic& d, TagId tag, std::uint64_t offset) const;

  TagRegistry& tags_;
  TagId base_ = 0;
  std::vector<std::vector<SbItem>> stacks_;
  std::unordered_map<TagId, TagInfo> info_;
  std::set<TagId> exposed_;
  std::vector<LogEntry> log_;
  bool audit_ = false;
};

}  // namespace duet
