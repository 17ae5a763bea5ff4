// SPDX-License-Identifier: Apache-2.0
//
// Per-allocation aliasing-model state behind one interface. Each allocation
// owns one tracker; the memory model routes every access through it.

#pragma once

#include <memory>
#include <span>
#include <string>

#include "duet/diagnostic.hpp"
#include "duet/types.hpp"
#include "duet/values.hpp"

namespace duet {

enum class AccessKind : std::uint8_t { Read, Write };
enum class RetagKind : std::uint8_t { MutableRef, SharedRef, Raw };
enum class Model : std::uint8_t { TreeBorrows, StackedBorrows };

const char* access_name(AccessKind k);
const char* model_name(Model m);

/// Machine-wide source of fresh tags.
class TagRegistry {
 public:
  TagId fresh() { return ++last_; }
  TagId last() const { return last_; }

 private:
  TagId last_ = 0;
};

class AllocTracker {
 public:
  virtual ~AllocTracker() = default;

  virtual Model model() const = 0;
  virtual TagId base_tag() const = 0;
  virtual bool has_tag(TagId tag) const = 0;
  virtual std::string label_of(TagId tag) const = 0;

  /// Derives a new pointer from `parent` for the byte range `range`.
  /// `cell_ranges` are allocation-relative locations under interior
  /// mutability. Throws UbError.
  virtual Provenance retag(const Provenance& parent, ByteRange range,
                           RetagKind kind,
                           std::span<const ByteRange> cell_ranges,
                           bool protect, const std::string& label,
                           const Site& site) = 0;

  /// Throws UbError when the access is not permitted.
  virtual void access(const Provenance& prov, ByteRange range,
                      AccessKind kind, const Site& site) = 0;

  virtual void protector_end(TagId tag) = 0;

  /// Records that `tag` was exposed; wildcard accesses may then use it.
  virtual void expose(TagId tag) { (void)tag; }

  /// Throws UbError when the allocation may not be freed yet.
  virtual void dealloc_check(const Site& site) = 0;

  /// Current state, one line per node or stack segment.
  virtual std::string render() const = 0;
};

std::unique_ptr<AllocTracker> make_tracker(Model model, TagRegistry& tags,
                                           std::uint64_t size,
                                           const std::string& base_label,
                                           const Site& created);

}  // namespace duet
