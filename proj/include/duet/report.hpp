// SPDX-License-Identifier: Apache-2.0
//
// Deduplication keys and the text / structured renderings of run results.
// Field names of the structured form are listed in docs/report-schema.md.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "duet/machine.hpp"

namespace duet {

struct DedupConfig {
  /// Foreign errors keep the host frame that made the boundary call.
  bool include_boundary_frame = true;
};

struct DedupKey {
  std::string exit_class;  // diagnostic kind, or pass/unsupported/timeout
  std::string log;         // first message line, addresses and ids masked
  std::vector<std::string> fingerprint;

  bool operator==(const DedupKey&) const = default;
  auto operator<=>(const DedupKey&) const = default;
  std::string str() const;
};

/// Replaces hex addresses and allocation ids with placeholders.
std::string mask_addresses(const std::string& s);

DedupKey normalize(const Diagnostic& d, const DedupConfig& cfg = {});
DedupKey normalize(const Outcome& o, const DedupConfig& cfg = {});

struct DedupGroup {
  DedupKey key;
  std::size_t representative = 0;
  std::vector<std::size_t> members;
};

/// Groups by key; groups ordered by first appearance, members ascending.
std::vector<DedupGroup> dedup(const std::vector<DedupKey>& keys);

/// Exit code for one outcome: 0 pass, 1 bug, 2 unsupported, 3 timeout,
/// 4 pass with leaks.
int exit_code(const Outcome& o);

struct RunReport {
  std::string scenario;
  Model model = Model::TreeBorrows;
  MachineConfig config;
  Outcome outcome;
  std::optional<DedupKey> key;

  bool operator==(const RunReport&) const;
};

enum class Verdict : std::uint8_t { Agree, SbOnlyViolation, TbOnlyViolation };

const char* verdict_name(Verdict v);
Verdict verdict_of(const Outcome& sb, const Outcome& tb);

struct DiffReport {
  RunReport sb;
  RunReport tb;
  Verdict verdict = Verdict::Agree;
};

std::string render_diagnostic(const Diagnostic& d);
std::string render_text(const RunReport& r);
std::string render_text(const DiffReport& r);

/// Structured form as a JSON document.
std::string to_json(const RunReport& r, int indent = 2);
std::string to_json(const DiffReport& r, int indent = 2);
/// Inverse of to_json(RunReport). Throws std::runtime_error.
RunReport report_from_json(const std::string& text);

}  // namespace duet
