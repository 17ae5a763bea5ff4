// SPDX-License-Identifier: Apache-2.0

#include "duet/diagnostic.hpp"

#include <array>
#include <utility>

#include <fmt/format.h>

namespace duet {

namespace {

constexpr std::array<std::pair<DiagKind, const char*>, 15> kKinds{{
    {DiagKind::ExpiredPermission, "expired-permission"},
    {DiagKind::InsufficientPermission, "insufficient-permission"},
    {DiagKind::ProtectedPermission, "protected-permission"},
    {DiagKind::AccessOutOfBounds, "access-out-of-bounds"},
    {DiagKind::UseAfterFree, "use-after-free"},
    {DiagKind::DoubleFree, "double-free"},
    {DiagKind::InvalidDealloc, "invalid-dealloc"},
    {DiagKind::UninitializedRead, "uninitialized-read"},
    {DiagKind::MisalignedAccess, "misaligned-access"},
    {DiagKind::InvalidBinding, "invalid-binding"},
    {DiagKind::CrossLanguageDealloc, "cross-language-dealloc"},
    {DiagKind::StrictProvenanceViolation, "strict-provenance-violation"},
    {DiagKind::MemoryLeak, "memory-leak"},
    {DiagKind::UnsupportedOperation, "unsupported-operation"},
    {DiagKind::AssertionFailed, "assertion-failed"},
}};

}  // namespace

const char* dialect_name(Dialect d) {
  return d == Dialect::Host ? "host" : "foreign";
}

const char* kind_name(DiagKind k) {
  for (const auto& [kind, name] : kKinds)
    if (kind == k) return name;
  return "?";
}

std::optional<DiagKind> parse_kind(const std::string& s) {
  for (const auto& [kind, name] : kKinds)
    if (s == name) return kind;
  return std::nullopt;
}

std::string render_site(const Site& s) {
  std::string out =
      fmt::format("{} fn {} line {}", dialect_name(s.dialect), s.function,
                  s.line);
  if (!s.text.empty()) out += fmt::format(": `{}`", s.text);
  return out;
}

const char* history_what_name(HistoryEvent::What w) {
  switch (w) {
    case HistoryEvent::What::Created: return "created";
    case HistoryEvent::What::LastValidUse: return "last-valid-use";
    case HistoryEvent::What::Invalidated: return "invalidated";
  }
  return "?";
}

}  // namespace duet
