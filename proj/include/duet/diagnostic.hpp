// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include "duet/values.hpp"

namespace duet {

enum class Dialect : std::uint8_t { Host, Foreign };

const char* dialect_name(Dialect d);

enum class DiagKind : std::uint8_t {
  ExpiredPermission,
  InsufficientPermission,
  ProtectedPermission,
  AccessOutOfBounds,
  UseAfterFree,
  DoubleFree,
  InvalidDealloc,
  UninitializedRead,
  MisalignedAccess,
  InvalidBinding,
  CrossLanguageDealloc,
  StrictProvenanceViolation,
  MemoryLeak,
  UnsupportedOperation,
  AssertionFailed,
};

const char* kind_name(DiagKind k);
std::optional<DiagKind> parse_kind(const std::string& s);

/// A program point: function, 1-based source line, and the statement text.
struct Site {
  Dialect dialect = Dialect::Host;
  std::string function;
  int line = 0;
  std::string text;

  bool operator==(const Site&) const = default;
};

std::string render_site(const Site& s);

struct TraceFrame {
  Dialect dialect = Dialect::Host;
  std::string function;
  int line = 0;

  bool operator==(const TraceFrame&) const = default;
};

/// One entry of a tag's permission history.
struct HistoryEvent {
  enum class What : std::uint8_t { Created, LastValidUse, Invalidated };

  What what = What::Created;
  std::string tag;  // tag label
  Site site;
  std::string detail;

  bool operator==(const HistoryEvent&) const = default;
};

const char* history_what_name(HistoryEvent::What w);

struct Diagnostic {
  DiagKind kind = DiagKind::AccessOutOfBounds;
  std::string message;
  Site site;
  std::vector<TraceFrame> host_trace;     // innermost first
  std::vector<TraceFrame> foreign_trace;  // innermost first
  /// Host and foreign frames interleaved, innermost first.
  std::vector<TraceFrame> stack;
  std::vector<HistoryEvent> history;
  /// Tree/stack rendering at the offending location around the invalidating
  /// access, when the tracker has one.
  std::string permission_table;
  std::optional<std::string> alloc_origin;
  std::vector<std::uint64_t> addresses;

  bool operator==(const Diagnostic&) const = default;
};

/// Thrown through the engine when undefined (or undesired) behavior is
/// detected; the machine turns it into an outcome.
class UbError : public std::exception {
 public:
  explicit UbError(Diagnostic d) : diag_(std::move(d)) {}
  UbError(DiagKind kind, std::string message) {
    diag_.kind = kind;
    diag_.message = std::move(message);
  }

  const char* what() const noexcept override { return diag_.message.c_str(); }
  const Diagnostic& diagnostic() const { return diag_; }
  Diagnostic& diagnostic() { return diag_; }

 private:
  Diagnostic diag_;
};

}  // namespace duet
