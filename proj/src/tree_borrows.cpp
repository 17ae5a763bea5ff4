// SPDX-License-Identifier: Apache-2.0

#include "duet/tree_borrows.hpp"

#include <algorithm>
#include <array>

#include <fmt/format.h>

namespace duet {

const char* perm_name(Perm p) {
  switch (p) {
    case Perm::Reserved: return "Reserved";
    case Perm::ReservedIM: return "Reserved*";
    case Perm::Active: return "Active";
    case Perm::Frozen: return "Frozen";
    case Perm::Disabled: return "Disabled";
  }
  return "?";
}

Transition tb_transition(Perm current, Relation rel, AccessKind kind,
                         bool initialized, bool is_protected) {
  using E = Transition::Error;
  Transition t{current, E::None};
  if (rel == Relation::Child) {
    if (current == Perm::Disabled) return {Perm::Disabled, E::Expired};
    if (kind == AccessKind::Write) {
      if (current == Perm::Frozen) return {Perm::Frozen, E::Insufficient};
      t.next = Perm::Active;
    }
    return t;
  }
  if (kind == AccessKind::Read) {
    if (current == Perm::Active) t.next = Perm::Frozen;
  } else {
    switch (current) {
      case Perm::Reserved: t.next = Perm::Disabled; break;
      case Perm::ReservedIM: break;
      // Foreign write on Active freezes rather than disables the child.
      case Perm::Active: t.next = Perm::Frozen; break;
      case Perm::Frozen: t.next = Perm::Disabled; break;
      case Perm::Disabled: break;
    }
  }
  if (is_protected && initialized && t.next == Perm::Disabled &&
      current != Perm::Disabled)
    t.error = E::Protected;
  return t;
}

namespace {

constexpr std::uint8_t kPermMask = 0x07;

kernels::Lut16 build_lut(Relation rel, AccessKind kind, bool is_protected) {
  kernels::Lut16 lut{};
  for (std::uint8_t s = 0; s < 16; ++s) {
    std::uint8_t perm = s & kPermMask;
    bool init = (s & TreeBorrows::kInitBit) != 0;
    if (perm > static_cast<std::uint8_t>(Perm::Disabled)) {
      lut[s] = s;
      continue;
    }
    Transition t =
        tb_transition(static_cast<Perm>(perm), rel, kind, init, is_protected);
    if (t.error != Transition::Error::None) {
      lut[s] = TreeBorrows::kErrorBit | static_cast<std::uint8_t>(t.error);
      continue;
    }
    std::uint8_t out = static_cast<std::uint8_t>(t.next);
    if (init || rel == Relation::Child) out |= TreeBorrows::kInitBit;
    lut[s] = out;
  }
  return lut;
}

// Indexed by [relation][kind][protected].
const std::array<std::array<std::array<kernels::Lut16, 2>, 2>, 2>& luts() {
  static const auto tables = [] {
    std::array<std::array<std::array<kernels::Lut16, 2>, 2>, 2> t{};
    for (int r = 0; r < 2; ++r)
      for (int k = 0; k < 2; ++k)
        for (int p = 0; p < 2; ++p)
          t[r][k][p] = build_lut(static_cast<Relation>(r),
                                 static_cast<AccessKind>(k), p != 0);
    return t;
  }();
  return tables;
}

Perm perm_of(std::uint8_t s) { return static_cast<Perm>(s & kPermMask); }

}  // namespace

Perm TreeBorrows::Event::before_at(std::size_t node, std::uint64_t off) const {
  return perm_of(before[node * range.size() + (off - range.begin)]);
}
Perm TreeBorrows::Event::after_at(std::size_t node, std::uint64_t off) const {
  return perm_of(after[node * range.size() + (off - range.begin)]);
}

TreeBorrows::TreeBorrows(TagRegistry& tags, std::uint64_t size,
                         std::string base_label, Site created)
    : tags_(tags), size_(size) {
  Node root;
  root.tag = tags_.fresh();
  root.label = std::move(base_label);
  root.created = std::move(created);
  root.state.assign(size_, static_cast<std::uint8_t>(Perm::Active) | kInitBit);
  index_[root.tag] = 0;
  nodes_.push_back(std::move(root));
}

int TreeBorrows::index_of(TagId tag) const {
  auto it = index_.find(tag);
  if (it == index_.end())
    throw UbError(DiagKind::AccessOutOfBounds,
                  fmt::format("tag <{}> does not belong to this allocation", tag));
  return it->second;
}

std::string TreeBorrows::label_of(TagId tag) const {
  auto it = index_.find(tag);
  return it == index_.end() ? fmt::format("<{}>", tag)
                            : nodes_[it->second].label;
}

bool TreeBorrows::is_ancestor_or_self(int ancestor, int node) const {
  for (int cur = node; cur >= 0; cur = nodes_[cur].parent)
    if (cur == ancestor) return true;
  return false;
}

int TreeBorrows::common_ancestor(int a, int b) const {
  if (a < 0 || b < 0) return 0;
  for (int cur = a; cur >= 0; cur = nodes_[cur].parent)
    if (is_ancestor_or_self(cur, b)) return cur;
  return 0;
}

Provenance TreeBorrows::retag(const Provenance& parent, ByteRange range,
                              RetagKind kind,
                              std::span<const ByteRange> cell_ranges,
                              bool protect, const std::string& label,
                              const Site& site) {
  // No assertion happens at retag time; `range` only matters to Stacked
  // Borrows.
  (void)range;
  if (kind == RetagKind::Raw || parent.is_wildcard()) return parent;
  if (!parent.is_concrete())
    throw UbError(DiagKind::AccessOutOfBounds,
                  "cannot reborrow a pointer without provenance");
  int p = index_of(parent.tag);

  Node n;
  n.tag = tags_.fresh();
  n.parent = p;
  n.is_protected = protect;
  n.label = label;
  n.created = site;
  Perm initial = kind == RetagKind::MutableRef ? Perm::Reserved : Perm::Frozen;
  n.state.assign(size_, static_cast<std::uint8_t>(initial));
  for (const auto& cr : cell_ranges) {
    for (std::uint64_t o = cr.begin; o < std::min(cr.end, size_); ++o)
      n.state[o] = static_cast<std::uint8_t>(Perm::ReservedIM);
  }
  int idx = static_cast<int>(nodes_.size());
  index_[n.tag] = idx;
  TagId tag = n.tag;
  nodes_.push_back(std::move(n));
  nodes_[p].children.push_back(idx);
  return Provenance::concrete(tag);
}

void TreeBorrows::access(const Provenance& prov, ByteRange range,
                         AccessKind kind, const Site& site) {
  if (prov.is_wildcard()) return;
  if (!prov.is_concrete())
    throw UbError(DiagKind::AccessOutOfBounds,
                  "access through a pointer without provenance");
  int acc = index_of(prov.tag);
  if (range.empty()) {
    nodes_[acc].last_use = site;
    return;
  }
  const std::size_t n = nodes_.size();
  const std::size_t len = range.size();
  std::vector<std::uint8_t> before(n * len);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(nodes_[i].state.begin() + range.begin, len,
                before.begin() + i * len);

  // The accessed node and its ancestors first, so that an error in the
  // accessing path wins over protector errors elsewhere.
  std::vector<int> order;
  for (int cur = acc; cur >= 0; cur = nodes_[cur].parent) order.push_back(cur);
  for (int i = 0; i < static_cast<int>(n); ++i)
    if (!is_ancestor_or_self(i, acc)) order.push_back(i);

  const auto& tables = luts();
  for (int i : order) {
    Node& nd = nodes_[i];
    Relation rel =
        is_ancestor_or_self(i, acc) ? Relation::Child : Relation::Foreign;
    const auto& lut = tables[static_cast<int>(rel)][static_cast<int>(kind)]
                            [nd.is_protected ? 1 : 0];
    std::span<std::uint8_t> cells(nd.state.data() + range.begin, len);
    std::size_t bad = kernels::map_states(cells, lut);
    if (bad != kernels::npos) {
      auto err = static_cast<Transition::Error>(lut[cells[bad] & 0x0f] &
                                                ~kErrorBit);
      fail(err, i, range.begin + bad, kind, acc, site, before, range);
    }
  }
  nodes_[acc].last_use = site;

  bool changed = false;
  for (std::size_t i = 0; i < n && !changed; ++i) {
    for (std::size_t j = 0; j < len; ++j) {
      if (((before[i * len + j] ^ nodes_[i].state[range.begin + j]) &
           kPermMask) != 0) {
        changed = true;
        break;
      }
    }
  }
  if (!changed) return;

  Event ev{site, kind, acc, range, n, std::move(before), {}};
  ev.after.resize(n * len);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(nodes_[i].state.begin() + range.begin, len,
                ev.after.begin() + i * len);
  std::size_t id = events_.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < len; ++j) {
      Perm b = perm_of(ev.before[i * len + j]);
      Perm a = perm_of(ev.after[i * len + j]);
      if (a != b && (a == Perm::Frozen || a == Perm::Disabled))
        nodes_[i].invalidated_by[range.begin + j] = id;
    }
  }
  events_.push_back(std::move(ev));
}

void TreeBorrows::fail(Transition::Error err, int node, std::uint64_t offset,
                       AccessKind kind, int accessor, const Site& site,
                       const std::vector<std::uint8_t>& before,
                       ByteRange range) {
  const std::size_t len = range.size();
  // Leave the tree as it was before the faulting access.
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    std::copy_n(before.begin() + i * len, len,
                nodes_[i].state.begin() + range.begin);

  const Node& nd = nodes_[node];
  const Node& acc = nodes_[accessor];
  Diagnostic d;
  switch (err) {
    case Transition::Error::Expired:
      d.kind = DiagKind::ExpiredPermission;
      d.message = fmt::format(
          "{} access through `{}` at offset {:#x} is forbidden: `{}` has "
          "Disabled permission",
          access_name(kind), acc.label, offset, nd.label);
      break;
    case Transition::Error::Insufficient:
      d.kind = DiagKind::InsufficientPermission;
      d.message = fmt::format(
          "write access through `{}` at offset {:#x} is forbidden: `{}` has "
          "read-only Frozen permission",
          acc.label, offset, nd.label);
      break;
    default:
      d.kind = DiagKind::ProtectedPermission;
      d.message = fmt::format(
          "{} access through `{}` at offset {:#x} would disable `{}`, which "
          "is protected by an active function call",
          access_name(kind), acc.label, offset, nd.label);
      break;
  }

  auto created = [](const Node& x) {
    return HistoryEvent{HistoryEvent::What::Created, x.label, x.created,
                        "tag created"};
  };
  d.history.push_back(created(nd));
  if (nd.last_use)
    d.history.push_back({HistoryEvent::What::LastValidUse, nd.label,
                         *nd.last_use, "last access through this tag"});

  auto inv = nd.invalidated_by.find(offset);
  if (err == Transition::Error::Protected) {
    Event pseudo{site, kind, accessor, range, nodes_.size(), before, before};
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Relation rel = is_ancestor_or_self(static_cast<int>(i), accessor)
                         ? Relation::Child
                         : Relation::Foreign;
      for (std::size_t j = 0; j < len; ++j) {
        std::uint8_t s = before[i * len + j];
        Transition t = tb_transition(perm_of(s), rel, kind,
                                     (s & kInitBit) != 0,
                                     nodes_[i].is_protected);
        Perm next = t.error == Transition::Error::Protected ? Perm::Disabled
                                                            : t.next;
        pseudo.after[i * len + j] = static_cast<std::uint8_t>(next);
      }
    }
    d.history.push_back({HistoryEvent::What::Invalidated, nd.label, site,
                         fmt::format("{} access through `{}`",
                                     access_name(kind), acc.label)});
    d.permission_table = render_event(
        pseudo, offset, nodes_[common_ancestor(accessor, node)].tag);
  } else if (inv != nd.invalidated_by.end()) {
    const Event& ev = events_[inv->second];
    const std::string via =
        ev.accessor >= 0 ? nodes_[ev.accessor].label : std::string("?");
    d.history.push_back(
        {HistoryEvent::What::Invalidated, nd.label, ev.site,
         fmt::format("{} access through `{}` changed it from {} to {}",
                     access_name(ev.kind), via,
                     perm_name(ev.before_at(node, offset)),
                     perm_name(ev.after_at(node, offset)))});
    d.permission_table = render_event(
        ev, offset, nodes_[common_ancestor(ev.accessor, node)].tag);
  } else {
    int root = nd.parent >= 0 ? nd.parent : node;
    d.permission_table = render_at(offset, nodes_[root].tag);
  }
  if (accessor != node) d.history.push_back(created(acc));
  throw UbError(std::move(d));
}

void TreeBorrows::protector_end(TagId tag) {
  auto it = index_.find(tag);
  if (it != index_.end()) nodes_[it->second].is_protected = false;
}

void TreeBorrows::dealloc_check(const Site& site) {
  (void)site;
  for (const auto& nd : nodes_) {
    if (!nd.is_protected) continue;
    auto hit = std::find_if(nd.state.begin(), nd.state.end(),
                            [](std::uint8_t s) { return (s & kInitBit) != 0; });
    if (hit == nd.state.end()) continue;
    auto off = static_cast<std::uint64_t>(hit - nd.state.begin());
    Diagnostic d;
    d.kind = DiagKind::ProtectedPermission;
    d.message = fmt::format(
        "deallocation is forbidden while `{}` is protected by an active "
        "function call",
        nd.label);
    d.history.push_back({HistoryEvent::What::Created, nd.label, nd.created,
                         "tag created (protected)"});
    if (nd.last_use)
      d.history.push_back({HistoryEvent::What::LastValidUse, nd.label,
                           *nd.last_use, "last access through this tag"});
    d.permission_table = render_at(off);
    throw UbError(std::move(d));
  }
}

std::optional<TagId> TreeBorrows::find_label(const std::string& label) const {
  for (const auto& nd : nodes_)
    if (nd.label == label) return nd.tag;
  return std::nullopt;
}

Perm TreeBorrows::perm(TagId tag, std::uint64_t offset) const {
  return perm_of(nodes_.at(index_of(tag)).state.at(offset));
}

bool TreeBorrows::initialized(TagId tag, std::uint64_t offset) const {
  return (nodes_.at(index_of(tag)).state.at(offset) & kInitBit) != 0;
}

bool TreeBorrows::is_protected(TagId tag) const {
  return nodes_.at(index_of(tag)).is_protected;
}

std::optional<TagId> TreeBorrows::parent_of(TagId tag) const {
  int p = nodes_.at(index_of(tag)).parent;
  if (p < 0) return std::nullopt;
  return nodes_[p].tag;
}

std::string TreeBorrows::render_rows(
    int root, std::size_t limit,
    const std::function<std::string(int)>& cell) const {
  std::string out;
  std::function<void(int, const std::string&, bool, bool)> visit =
      [&](int i, const std::string& prefix, bool last, bool is_root) {
        std::vector<int> kids;
        for (int c : nodes_[i].children)
          if (static_cast<std::size_t>(c) < limit) kids.push_back(c);
        std::string branch = kids.empty() ? "─" : "┬";
        if (is_root)
          out += "└" + branch;
        else
          out += prefix + (last ? "└" : "├") + branch;
        out += " " + nodes_[i].label + ": " + cell(i) + "\n";
        std::string next = is_root ? " " : prefix + (last ? " " : "│");
        for (std::size_t k = 0; k < kids.size(); ++k)
          visit(kids[k], next, k + 1 == kids.size(), false);
      };
  visit(root, "", true, true);
  if (!out.empty()) out.pop_back();
  return out;
}

std::string TreeBorrows::render_event(const Event& ev, std::uint64_t offset,
                                      std::optional<TagId> root) const {
  int r = root ? index_of(*root) : 0;
  return render_rows(r, ev.node_count, [&](int i) {
    Perm b = ev.before_at(static_cast<std::size_t>(i), offset);
    Perm a = ev.after_at(static_cast<std::size_t>(i), offset);
    if (a == b) return std::string(perm_name(b));
    return fmt::format("{} → {}", perm_name(b), perm_name(a));
  });
}

std::string TreeBorrows::render_at(std::uint64_t offset,
                                   std::optional<TagId> root) const {
  int r = root ? index_of(*root) : 0;
  return render_rows(r, nodes_.size(), [&](int i) {
    return std::string(perm_name(perm_of(nodes_[i].state.at(offset))));
  });
}

std::string TreeBorrows::render() const {
  if (size_ == 0) return render_rows(0, nodes_.size(), [](int) {
    return std::string("(empty)");
  });
  std::string out;
  std::uint64_t start = 0;
  auto column_eq = [&](std::uint64_t a, std::uint64_t b) {
    for (const auto& nd : nodes_)
      if ((nd.state[a] & kPermMask) != (nd.state[b] & kPermMask)) return false;
    return true;
  };
  for (std::uint64_t o = 1; o <= size_; ++o) {
    if (o < size_ && column_eq(start, o)) continue;
    if (!out.empty()) out += "\n";
    out += fmt::format("[{:#x}..{:#x}]\n", start, o) + render_at(start);
    start = o;
  }
  return out;
}

std::vector<std::uint8_t> TreeBorrows::serialize() const {
  std::vector<std::uint8_t> out;
  for (const auto& nd : nodes_) {
    out.push_back(nd.is_protected ? 1 : 0);
    out.insert(out.end(), nd.state.begin(), nd.state.end());
  }
  return out;
}

}  // namespace duet
