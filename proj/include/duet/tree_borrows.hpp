// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <unordered_map>
#include <vector>

#include "duet/kernels.hpp"
#include "duet/tracker.hpp"

namespace duet {

/// Tree Borrows per-location permission.
enum class Perm : std::uint8_t {
  Reserved = 0,
  ReservedIM = 1,  // interior-mutable Reserved, rendered "Reserved*"
  Active = 2,
  Frozen = 3,
  Disabled = 4,
};

const char* perm_name(Perm p);

enum class Relation : std::uint8_t { Child, Foreign };

/// Outcome of one per-location transition.
struct Transition {
  enum class Error : std::uint8_t { None, Expired, Insufficient, Protected };
  Perm next = Perm::Reserved;
  Error error = Error::None;
};

/// The transition table. `initialized` and `is_protected` only matter for the
/// protector rule.
Transition tb_transition(Perm current, Relation rel, AccessKind kind,
                         bool initialized, bool is_protected);

class TreeBorrows final : public AllocTracker {
 public:
  /// Per-location state byte: low three bits hold the Perm, bit 3 records
  /// that the location has been accessed through (or below) this node.
  static constexpr std::uint8_t kInitBit = 0x08;
  static constexpr std::uint8_t kErrorBit = 0x80;

  struct Node {
    TagId tag = 0;
    int parent = -1;
    std::vector<int> children;
    bool is_protected = false;
    std::string label;
    Site created;
    std::optional<Site> last_use;
    std::vector<std::uint8_t> state;
    /// Location -> index into events() of the access that last froze or
    /// disabled this node there.
    std::map<std::uint64_t, std::size_t> invalidated_by;
  };

  /// A state-changing access with the tree's per-location states before and
  /// after it, for every node that existed at the time.
  struct Event {
    Site site;
    AccessKind kind = AccessKind::Read;
    int accessor = -1;
    ByteRange range;
    std::size_t node_count = 0;
    std::vector<std::uint8_t> before;  // node_count x range.size()
    std::vector<std::uint8_t> after;

    Perm before_at(std::size_t node, std::uint64_t off) const;
    Perm after_at(std::size_t node, std::uint64_t off) const;
  };

  TreeBorrows(TagRegistry& tags, std::uint64_t size, std::string base_label,
              Site created);

  Model model() const override { return Model::TreeBorrows; }
  TagId base_tag() const override { return nodes_.front().tag; }
  bool has_tag(TagId tag) const override { return index_.count(tag) != 0; }
  std::string label_of(TagId tag) const override;

  Provenance retag(const Provenance& parent, ByteRange range, RetagKind kind,
                   std::span<const ByteRange> cell_ranges, bool protect,
                   const std::string& label, const Site& site) override;
  void access(const Provenance& prov, ByteRange range, AccessKind kind,
              const Site& site) override;
  void protector_end(TagId tag) override;
  void dealloc_check(const Site& site) override;
  std::string render() const override;

  Perm perm(TagId tag, std::uint64_t offset) const;
  bool initialized(TagId tag, std::uint64_t offset) const;
  bool is_protected(TagId tag) const;
  std::optional<TagId> parent_of(TagId tag) const;
  std::size_t node_count() const { return nodes_.size(); }
  const Node& node(TagId tag) const { return nodes_.at(index_.at(tag)); }
  /// Oldest node created under `label`.
  std::optional<TagId> find_label(const std::string& label) const;
  const std::vector<Event>& events() const { return events_; }

  /// Table of the tree at `offset`: `before → after` per node for an event,
  /// rooted at `root` (whole tree when absent).
  std::string render_event(const Event& ev, std::uint64_t offset,
                           std::optional<TagId> root = std::nullopt) const;
  /// Current permissions at `offset`.
  std::string render_at(std::uint64_t offset,
                        std::optional<TagId> root = std::nullopt) const;

  /// Byte-level serialization of all node states (used to check that an
  /// operation left the tree untouched).
  std::vector<std::uint8_t> serialize() const;

 private:
  int index_of(TagId tag) const;
  bool is_ancestor_or_self(int ancestor, int node) const;
  int common_ancestor(int a, int b) const;
  [[noreturn]] void fail(Transition::Error err, int node, std::uint64_t offset,
                         AccessKind kind, int accessor, const Site& site,
                         const std::vector<std::uint8_t>& before,
                         ByteRange range);
  std::string render_rows(int root, std::size_t limit,
                          const std::function<std::string(int)>& cell) const;

  TagRegistry& tags_;
  std::uint64_t size_;
  std::vector<Node> nodes_;
  std::unordered_map<TagId, int> index_;
  std::vector<Event> events_;
};

}  // namespace duet
