// SPDX-License-Identifier: Apache-2.0

#include "duet/report.hpp"

#include <map>
#include <regex>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

namespace duet {

using json = nlohmann::ordered_json;

std::string DedupKey::str() const {
  std::string out = exit_class + " | " + log + " |";
  for (const auto& f : fingerprint) out += " " + f;
  return out;
}

std::string mask_addresses(const std::string& s) {
  static const std::regex kHex("0x[0-9a-fA-F]+");
  static const std::regex kAlloc("alloc[0-9]+");
  return std::regex_replace(std::regex_replace(s, kHex, "<addr>"), kAlloc,
                            "alloc<id>");
}

namespace {

std::string frame_key(const TraceFrame& f) {
  return fmt::format("{}:{}:{}", dialect_name(f.dialect), f.function, f.line);
}

}  // namespace

DedupKey normalize(const Diagnostic& d, const DedupConfig& cfg) {
  DedupKey k;
  k.exit_class = kind_name(d.kind);
  k.log = mask_addresses(d.message.substr(0, d.message.find('\n')));
  if (d.site.dialect == Dialect::Host) {
    for (const TraceFrame& f : d.stack) {
      if (f.dialect != Dialect::Host) continue;
      k.fingerprint.push_back(frame_key(f));
      break;
    }
  } else {
    for (const TraceFrame& f : d.stack) {
      if (f.dialect == Dialect::Host) {
        if (cfg.include_boundary_frame) k.fingerprint.push_back(frame_key(f));
        break;
      }
      k.fingerprint.push_back(frame_key(f));
    }
  }
  return k;
}

DedupKey normalize(const Outcome& o, const DedupConfig& cfg) {
  if (!o.diagnostics.empty()) return normalize(o.diagnostics.front(), cfg);
  DedupKey k;
  k.exit_class = classification_name(o.cls);
  if (o.cls == Classification::Pass && !o.leaks.empty())
    k.log = fmt::format("{} leaks", o.leaks.size());
  return k;
}

std::vector<DedupGroup> dedup(const std::vector<DedupKey>& keys) {
  std::vector<DedupGroup> groups;
  std::map<DedupKey, std::size_t> index;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    auto [it, fresh] = index.try_emplace(keys[i], groups.size());
    if (fresh) groups.push_back(DedupGroup{keys[i], i, {}});
    groups[it->second].members.push_back(i);
  }
  return groups;
}

int exit_code(const Outcome& o) {
  switch (o.cls) {
    case Classification::Pass: return o.leaks.empty() ? 0 : 4;
    case Classification::Bug: return 1;
    case Classification::Unsupported: return 2;
    case Classification::Timeout: return 3;
  }
  return 1;
}

bool RunReport::operator==(const RunReport& o) const {
  return scenario == o.scenario && model == o.model && config == o.config &&
         outcome.cls == o.outcome.cls &&
         outcome.diagnostics == o.outcome.diagnostics &&
         outcome.leaks == o.outcome.leaks && outcome.steps == o.outcome.steps &&
         key == o.key;
}

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Agree: return "agree";
    case Verdict::SbOnlyViolation: return "sb-only-violation";
    case Verdict::TbOnlyViolation: return "tb-only-violation";
  }
  return "?";
}

Verdict verdict_of(const Outcome& sb, const Outcome& tb) {
  const bool s = sb.cls == Classification::Bug;
  const bool t = tb.cls == Classification::Bug;
  if (s && !t) return Verdict::SbOnlyViolation;
  if (t && !s) return Verdict::TbOnlyViolation;
  return Verdict::Agree;
}

// Text -----------------------------------------------------------------------

namespace {

std::string trace_line(const std::vector<TraceFrame>& frames) {
  std::string out;
  for (const auto& f : frames) {
    if (!out.empty()) out += " <- ";
    out += fmt::format("{}:{}", f.function, f.line);
  }
  return out;
}

std::string indent(const std::string& s, const std::string& pad) {
  std::string out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t nl = s.find('\n', start);
    std::string line = s.substr(start, nl == std::string::npos ? nl : nl - start);
    if (!line.empty() || nl != std::string::npos) out += pad + line + "\n";
    if (nl == std::string::npos) break;
    start = nl + 1;
  }
  return out;
}

}  // namespace

std::string render_diagnostic(const Diagnostic& d) {
  std::string out = fmt::format("error: {}\n", kind_name(d.kind));
  out += fmt::format("  --> {}\n", render_site(d.site));
  out += indent(d.message, "  ");
  if (!d.history.empty()) {
    out += "  history:\n";
    for (const auto& h : d.history) {
      out += fmt::format("    {} {}: {}", history_what_name(h.what), h.tag,
                         render_site(h.site));
      if (!h.detail.empty()) out += fmt::format(" ({})", h.detail);
      out += "\n";
    }
  }
  if (!d.permission_table.empty()) {
    out += "  permissions:\n";
    out += indent(d.permission_table, "    ");
  }
  if (!d.host_trace.empty())
    out += fmt::format("  host trace: {}\n", trace_line(d.host_trace));
  if (!d.foreign_trace.empty())
    out += fmt::format("  foreign trace: {}\n", trace_line(d.foreign_trace));
  if (d.alloc_origin) out += fmt::format("  allocation: {}\n", *d.alloc_origin);
  return out;
}

std::string render_text(const RunReport& r) {
  const Outcome& o = r.outcome;
  std::string head = classification_name(o.cls);
  if (auto k = o.kind(); k && o.cls == Classification::Bug)
    head = fmt::format("bug({})", kind_name(*k));
  std::string out = fmt::format("{} [{}, seed {}]: {} after {} steps\n",
                                r.scenario, model_name(r.model), r.config.seed,
                                head, o.steps);
  for (const auto& d : o.diagnostics) out += render_diagnostic(d);
  for (const auto& l : o.leaks) {
    out += fmt::format("leak: {}\n", l.message);
    out += fmt::format("  --> {}\n", render_site(l.site));
  }
  return out;
}

std::string render_text(const DiffReport& r) {
  return render_text(r.sb) + render_text(r.tb) +
         fmt::format("verdict: {}\n", verdict_name(r.verdict));
}

// Structured -----------------------------------------------------------------

namespace {

json site_json(const Site& s) {
  return json{{"dialect", dialect_name(s.dialect)},
              {"function", s.function},
              {"line", s.line},
              {"text", s.text}};
}

Dialect dialect_from(const std::string& s) {
  if (s == "host") return Dialect::Host;
  if (s == "foreign") return Dialect::Foreign;
  throw std::runtime_error("unknown dialect " + s);
}

Site site_from(const json& j) {
  return Site{dialect_from(j.at("dialect").get<std::string>()),
              j.at("function").get<std::string>(), j.at("line").get<int>(),
              j.at("text").get<std::string>()};
}

json frames_json(const std::vector<TraceFrame>& fs) {
  json a = json::array();
  for (const auto& f : fs)
    a.push_back(json{{"dialect", dialect_name(f.dialect)},
                     {"function", f.function},
                     {"line", f.line}});
  return a;
}

std::vector<TraceFrame> frames_from(const json& a) {
  std::vector<TraceFrame> out;
  for (const auto& j : a)
    out.push_back({dialect_from(j.at("dialect").get<std::string>()),
                   j.at("function").get<std::string>(),
                   j.at("line").get<int>()});
  return out;
}

json diag_json(const Diagnostic& d) {
  json h = json::array();
  for (const auto& e : d.history)
    h.push_back(json{{"event", history_what_name(e.what)},
                     {"tag", e.tag},
                     {"site", site_json(e.site)},
                     {"detail", e.detail}});
  return json{
      {"kind", kind_name(d.kind)},
      {"message", d.message},
      {"site", site_json(d.site)},
      {"host_trace", frames_json(d.host_trace)},
      {"foreign_trace", frames_json(d.foreign_trace)},
      {"stack", frames_json(d.stack)},
      {"history", h},
      {"permission_table", d.permission_table},
      {"alloc_origin", d.alloc_origin ? json(*d.alloc_origin) : json(nullptr)},
      {"addresses", d.addresses},
  };
}

HistoryEvent::What what_from(const std::string& s) {
  for (auto w : {HistoryEvent::What::Created, HistoryEvent::What::LastValidUse,
                 HistoryEvent::What::Invalidated})
    if (s == history_what_name(w)) return w;
  throw std::runtime_error("unknown history event " + s);
}

Diagnostic diag_from(const json& j) {
  Diagnostic d;
  auto k = parse_kind(j.at("kind").get<std::string>());
  if (!k) throw std::runtime_error("unknown kind");
  d.kind = *k;
  d.message = j.at("message").get<std::string>();
  d.site = site_from(j.at("site"));
  d.host_trace = frames_from(j.at("host_trace"));
  d.foreign_trace = frames_from(j.at("foreign_trace"));
  d.stack = frames_from(j.at("stack"));
  for (const auto& e : j.at("history"))
    d.history.push_back({what_from(e.at("event").get<std::string>()),
                         e.at("tag").get<std::string>(), site_from(e.at("site")),
                         e.at("detail").get<std::string>()});
  d.permission_table = j.at("permission_table").get<std::string>();
  if (!j.at("alloc_origin").is_null())
    d.alloc_origin = j.at("alloc_origin").get<std::string>();
  d.addresses = j.at("addresses").get<std::vector<std::uint64_t>>();
  return d;
}

json config_json(const MachineConfig& c) {
  return json{{"strict_provenance", c.strict_provenance},
              {"zero_init_foreign", c.zero_init_foreign},
              {"permissive_foreign_loads", c.permissive_foreign_loads},
              {"unique_as_mutable", c.unique_as_mutable},
              {"symbolic_alignment", c.symbolic_alignment},
              {"check_foreign_alignment", c.check_foreign_alignment},
              {"seed", c.seed},
              {"address_seed", c.address_seed},
              {"step_budget", c.step_budget}};
}

Classification class_from(const std::string& s) {
  for (auto c : {Classification::Pass, Classification::Bug,
                 Classification::Unsupported, Classification::Timeout})
    if (s == classification_name(c)) return c;
  throw std::runtime_error("unknown classification " + s);
}

json key_json(const DedupKey& k) {
  return json{{"exit_class", k.exit_class},
              {"log", k.log},
              {"fingerprint", k.fingerprint}};
}

json report_json(const RunReport& r) {
  const Outcome& o = r.outcome;
  json diags = json::array();
  for (const auto& d : o.diagnostics) diags.push_back(diag_json(d));
  json leaks = json::array();
  for (const auto& d : o.leaks) leaks.push_back(diag_json(d));
  auto k = o.kind();
  json cfg = config_json(r.config);
  return json{
      {"scenario", r.scenario},
      {"model", model_name(r.model)},
      {"seed", r.config.seed},
      {"config", cfg},
      {"outcome",
       json{{"classification", classification_name(o.cls)},
            {"kind", k ? json(kind_name(*k)) : json(nullptr)},
            {"exit_code", exit_code(o)},
            {"steps", o.steps}}},
      {"diagnostics", diags},
      {"leaks", leaks},
      {"dedup_key", r.key ? key_json(*r.key) : json(nullptr)},
  };
}

}  // namespace

std::string to_json(const RunReport& r, int indent) {
  return report_json(r).dump(indent);
}

std::string to_json(const DiffReport& r, int indent) {
  json j{{"sb", report_json(r.sb)},
         {"tb", report_json(r.tb)},
         {"verdict", verdict_name(r.verdict)}};
  return j.dump(indent);
}

RunReport report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(e.what());
  }
  try {
    RunReport r;
    r.scenario = j.at("scenario").get<std::string>();
    const auto m = j.at("model").get<std::string>();
    if (m == "tb") {
      r.model = Model::TreeBorrows;
    } else if (m == "sb") {
      r.model = Model::StackedBorrows;
    } else {
      throw std::runtime_error("unknown model " + m);
    }
    const json& c = j.at("config");
    r.config.model = r.model;
    r.config.strict_provenance = c.at("strict_provenance").get<bool>();
    r.config.zero_init_foreign = c.at("zero_init_foreign").get<bool>();
    r.config.permissive_foreign_loads =
        c.at("permissive_foreign_loads").get<bool>();
    r.config.unique_as_mutable = c.at("unique_as_mutable").get<bool>();
    r.config.symbolic_alignment = c.at("symbolic_alignment").get<bool>();
    r.config.check_foreign_alignment =
        c.at("check_foreign_alignment").get<bool>();
    r.config.seed = c.at("seed").get<std::uint64_t>();
    r.config.address_seed = c.at("address_seed").get<std::uint64_t>();
    r.config.step_budget = c.at("step_budget").get<std::uint64_t>();
    const json& o = j.at("outcome");
    r.outcome.cls = class_from(o.at("classification").get<std::string>());
    r.outcome.steps = o.at("steps").get<std::uint64_t>();
    for (const auto& d : j.at("diagnostics"))
      r.outcome.diagnostics.push_back(diag_from(d));
    for (const auto& d : j.at("leaks")) r.outcome.leaks.push_back(diag_from(d));
    const json& k = j.at("dedup_key");
    if (!k.is_null())
      r.key = DedupKey{k.at("exit_class").get<std::string>(),
                       k.at("log").get<std::string>(),
                       k.at("fingerprint").get<std::vector<std::string>>()};
    return r;
  } catch (const json::exception& e) {
    throw std::runtime_error(e.what());
  }
}

}  // namespace duet
