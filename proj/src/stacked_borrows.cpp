// SPDX-License-Identifier: Apache-2.0

#include "duet/stacked_borrows.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace duet {

const char* grant_name(Grant g) {
  switch (g) {
    case Grant::Unique: return "Unique";
    case Grant::SharedReadWrite: return "SharedReadWrite";
    case Grant::SharedReadOnly: return "SharedReadOnly";
  }
  return "?";
}

bool grants(Grant g, AccessKind kind) {
  return kind == AccessKind::Read || g != Grant::SharedReadOnly;
}

StackedBorrows::StackedBorrows(TagRegistry& tags, std::uint64_t size,
                               std::string base_label, Site created)
    : tags_(tags) {
  base_ = tags_.fresh();
  stacks_.assign(size, {SbItem{base_, Grant::Unique, false}});
  info_[base_] = TagInfo{std::move(base_label), std::move(created),
                         ByteRange{0, size}, std::nullopt, {}};
}

std::string StackedBorrows::label_of(TagId tag) const {
  auto it = info_.find(tag);
  return it == info_.end() ? fmt::format("<{}>", tag) : it->second.label;
}

std::string StackedBorrows::render_stack(
    const std::vector<SbItem>& stack) const {
  std::string out;
  for (std::size_t i = stack.size(); i-- > 0;) {
    const SbItem& it = stack[i];
    if (!out.empty()) out += "\n";
    out += fmt::format("{} {}: {}{}", i + 1 == stack.size() ? "┌" : "│",
                       label_of(it.tag), grant_name(it.grant),
                       it.is_protected ? " (protected)" : "");
  }
  return out;
}

std::string StackedBorrows::render() const {
  std::string out;
  std::size_t start = 0;
  for (std::size_t o = 1; o <= stacks_.size(); ++o) {
    if (o < stacks_.size() && stacks_[o] == stacks_[start]) continue;
    if (!out.empty()) out += "\n";
    out += fmt::format("[{:#x}..{:#x}]\n", start, o) +
           render_stack(stacks_[start]);
    start = o;
  }
  return out;
}

void StackedBorrows::add_history(Diagnostic& d, TagId tag,
                                 std::uint64_t offset) const {
  auto it = info_.find(tag);
  if (it == info_.end()) return;
  const TagInfo& ti = it->second;
  d.history.push_back({HistoryEvent::What::Created, ti.label, ti.created,
                       fmt::format("tag created for [{:#x}..{:#x}]",
                                   ti.range.begin, ti.range.end)});
  if (ti.last_use)
    d.history.push_back({HistoryEvent::What::LastValidUse, ti.label,
                         *ti.last_use, "last access through this tag"});
  auto pop = ti.pops.find(offset);
  if (pop != ti.pops.end()) {
    d.history.push_back({HistoryEvent::What::Invalidated, ti.label,
                         pop->second.site, pop->second.detail});
    d.permission_table = pop->second.stack_before;
  }
}

void StackedBorrows::missing(const Provenance& prov, std::uint64_t offset,
                             AccessKind kind, const Site& site) const {
  (void)site;
  Diagnostic d;
  d.kind = DiagKind::AccessOutOfBounds;
  if (prov.is_wildcard()) {
    d.message = fmt::format(
        "{} access through a wildcard pointer at offset {:#x}: no exposed "
        "tag in the stack grants it",
        access_name(kind), offset);
  } else if (!prov.is_concrete() || !has_tag(prov.tag)) {
    d.message = fmt::format(
        "{} access at offset {:#x} through a pointer whose tag does not "
        "belong to this allocation",
        access_name(kind), offset);
  } else {
    const TagInfo& ti = info_.at(prov.tag);
    if (!ti.range.contains(offset)) {
      d.message = fmt::format(
          "{} access through `{}` at offset {:#x} is outside the range "
          "[{:#x}..{:#x}] it borrowed",
          access_name(kind), ti.label, offset, ti.range.begin, ti.range.end);
    } else {
      d.kind = DiagKind::ExpiredPermission;
      d.message = fmt::format(
          "{} access through `{}` at offset {:#x}: the tag has been popped "
          "from the borrow stack",
          access_name(kind), ti.label, offset);
    }
    add_history(d, prov.tag, offset);
  }
  if (d.permission_table.empty())
    d.permission_table = render_stack(stacks_.at(offset));
  throw UbError(std::move(d));
}

std::size_t StackedBorrows::granting(const Provenance& prov,
                                     std::uint64_t offset, AccessKind kind,
                                     const Site& site) const {
  const auto& st = stacks_.at(offset);
  if (prov.is_wildcard()) {
    for (std::size_t i = st.size(); i-- > 0;)
      if (exposed_.count(st[i].tag) && grants(st[i].grant, kind)) return i;
    missing(prov, offset, kind, site);
  }
  if (prov.is_concrete()) {
    bool present = false;
    for (std::size_t i = st.size(); i-- > 0;) {
      if (st[i].tag != prov.tag) continue;
      if (grants(st[i].grant, kind)) return i;
      present = true;
    }
    if (present) {
      Diagnostic d;
      d.kind = DiagKind::InsufficientPermission;
      d.message = fmt::format(
          "write access through `{}` at offset {:#x} is forbidden: it only "
          "grants SharedReadOnly",
          label_of(prov.tag), offset);
      add_history(d, prov.tag, offset);
      if (d.permission_table.empty()) d.permission_table = render_stack(st);
      throw UbError(std::move(d));
    }
  }
  missing(prov, offset, kind, site);
}

void StackedBorrows::invalidate_above(std::uint64_t offset, std::size_t idx,
                                      AccessKind kind, const std::string& via,
                                      const Site& site) {
  auto& st = stacks_[offset];
  std::size_t keep = idx + 1;
  if (kind == AccessKind::Read) {
    // Reads only invalidate write-granting Unique items; pop down to the
    // lowest one so that mutation stays at the top.
    keep = st.size();
    for (std::size_t i = idx + 1; i < st.size(); ++i) {
      if (st[i].grant == Grant::Unique) {
        keep = i;
        break;
      }
    }
  }
  if (keep >= st.size()) return;
  const std::string before = render_stack(st);
  for (std::size_t i = keep; i < st.size(); ++i) {
    if (!st[i].is_protected) continue;
    Diagnostic d;
    d.kind = DiagKind::ProtectedPermission;
    d.message = fmt::format(
        "{} access through `{}` at offset {:#x} would pop `{}`, which is "
        "protected by an active function call",
        access_name(kind), via, offset, label_of(st[i].tag));
    add_history(d, st[i].tag, offset);
    d.history.push_back({HistoryEvent::What::Invalidated,
                         label_of(st[i].tag), site,
                         fmt::format("{} access through `{}`",
                                     access_name(kind), via)});
    d.permission_table = before;
    throw UbError(std::move(d));
  }
  while (st.size() > keep) {
    SbItem it = st.back();
    if (audit_)
      log_.push_back({LogEntry::Op::Pop, offset, it, st.size()});
    st.pop_back();
    auto& pops = info_[it.tag].pops;
    if (!pops.count(offset))
      pops[offset] = Pop{site,
                         fmt::format("popped by {} access through `{}`",
                                     access_name(kind), via),
                         before};
  }
}

void StackedBorrows::push(std::uint64_t offset, SbItem item) {
  auto& st = stacks_[offset];
  if (audit_) log_.push_back({LogEntry::Op::Push, offset, item, st.size()});
  st.push_back(item);
}

void StackedBorrows::access(const Provenance& prov, ByteRange range,
                            AccessKind kind, const Site& site) {
  if (!prov.is_concrete() && !prov.is_wildcard())
    throw UbError(DiagKind::AccessOutOfBounds,
                  "access through a pointer without provenance");
  const std::string via =
      prov.is_concrete() ? label_of(prov.tag) : std::string("wildcard");
  std::vector<std::vector<SbItem>> saved(stacks_.begin() + range.begin,
                                         stacks_.begin() + range.end);
  const std::size_t logged = log_.size();
  try {
    for (std::uint64_t o = range.begin; o < range.end; ++o) {
      std::size_t idx = granting(prov, o, kind, site);
      invalidate_above(o, idx, kind, via, site);
    }
  } catch (const UbError&) {
    std::copy(saved.begin(), saved.end(), stacks_.begin() + range.begin);
    log_.resize(logged);
    throw;
  }
  if (prov.is_concrete()) info_[prov.tag].last_use = site;
}

Provenance StackedBorrows::retag(const Provenance& parent, ByteRange range,
                                 RetagKind kind,
                                 std::span<const ByteRange> cell_ranges,
                                 bool protect, const std::string& label,
                                 const Site& site) {
  if (kind == RetagKind::Raw && !parent.is_concrete()) return parent;
  if (!parent.is_concrete() && !parent.is_wildcard()) {
    throw UbError(DiagKind::AccessOutOfBounds,
                  "cannot reborrow a pointer without provenance");
  }
  auto in_cell = [&](std::uint64_t o) {
    return std::any_of(cell_ranges.begin(), cell_ranges.end(),
                       [&](const ByteRange& r) { return r.contains(o); });
  };
  const std::string via =
      parent.is_concrete() ? label_of(parent.tag) : std::string("wildcard");

  TagId tag = tags_.fresh();
  info_[tag] = TagInfo{label, site, range, std::nullopt, {}};
  std::vector<std::vector<SbItem>> saved(stacks_.begin() + range.begin,
                                         stacks_.begin() + range.end);
  const std::size_t logged = log_.size();
  try {
    for (std::uint64_t o = range.begin; o < range.end; ++o) {
      Grant g = Grant::Unique;
      AccessKind ak = AccessKind::Write;
      if (kind == RetagKind::SharedRef) {
        g = in_cell(o) ? Grant::SharedReadWrite : Grant::SharedReadOnly;
        ak = AccessKind::Read;
      } else if (kind == RetagKind::Raw) {
        // A raw pointer inherits write permission only if its parent has it.
        std::size_t r = granting(parent, o, AccessKind::Read, site);
        bool writable = grants(stacks_[o][r].grant, AccessKind::Write);
        g = writable ? Grant::SharedReadWrite : Grant::SharedReadOnly;
        ak = writable ? AccessKind::Write : AccessKind::Read;
      }
      std::size_t idx = granting(parent, o, ak, site);
      invalidate_above(o, idx, ak, via, site);
      push(o, SbItem{tag, g, protect});
    }
  } catch (const UbError&) {
    std::copy(saved.begin(), saved.end(), stacks_.begin() + range.begin);
    log_.resize(logged);
    info_.erase(tag);
    throw;
  }
  if (parent.is_concrete()) info_[parent.tag].last_use = site;
  return Provenance::concrete(tag);
}

void StackedBorrows::protector_end(TagId tag) {
  for (auto& st : stacks_)
    for (auto& it : st)
      if (it.tag == tag) it.is_protected = false;
}

void StackedBorrows::dealloc_check(const Site& site) {
  (void)site;
  for (std::size_t o = 0; o < stacks_.size(); ++o) {
    for (const auto& it : stacks_[o]) {
      if (!it.is_protected) continue;
      Diagnostic d;
      d.kind = DiagKind::ProtectedPermission;
      d.message = fmt::format(
          "deallocation is forbidden while `{}` is protected by an active "
          "function call",
          label_of(it.tag));
      add_history(d, it.tag, o);
      d.permission_table = render_stack(stacks_[o]);
      throw UbError(std::move(d));
    }
  }
}

}  // namespace duet
