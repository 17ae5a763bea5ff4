// SPDX-License-Identifier: Apache-2.0

#include "duet/tracker.hpp"

#include "duet/stacked_borrows.hpp"
#include "duet/tree_borrows.hpp"

namespace duet {

const char* access_name(AccessKind k) {
  return k == AccessKind::Read ? "read" : "write";
}

const char* model_name(Model m) {
  return m == Model::TreeBorrows ? "tb" : "sb";
}

std::unique_ptr<AllocTracker> make_tracker(Model model, TagRegistry& tags,
                                           std::uint64_t size,
                                           const std::string& base_label,
                                           const Site& created) {
  if (model == Model::TreeBorrows)
    return std::make_unique<TreeBorrows>(tags, size, base_label, created);
  return std::make_unique<StackedBorrows>(tags, size, base_label, created);
}

}  // namespace duet
