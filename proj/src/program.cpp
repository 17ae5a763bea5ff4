// SPDX-License-Identifier: Apache-2.0

#include "duet/program.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace duet {

// ---------------------------------------------------------------------------
// Equality (source positions excluded).

namespace {

bool types_eq(const std::vector<TypeRef>& a, const std::vector<TypeRef>& b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end(), type_eq);
}

}  // namespace

bool Rvalue::operator==(const Rvalue& o) const {
  return kind == o.kind && is_mut == o.is_mut && place == o.place &&
         ops == o.ops && type_eq(type, o.type) && name == o.name &&
         binop == o.binop && init == o.init;
}

bool Stmt::operator==(const Stmt& o) const {
  return kind == o.kind && name == o.name && type_eq(type, o.type) &&
         rv == o.rv && place == o.place && ops == o.ops && cmp == o.cmp;
}

bool Param::operator==(const Param& o) const {
  return name == o.name && type_eq(type, o.type);
}

bool FnDef::operator==(const FnDef& o) const {
  return name == o.name && dialect == o.dialect && params == o.params &&
         type_eq(ret, o.ret) && variadic == o.variadic && body == o.body;
}

std::map<std::string, std::size_t> FnDef::labels() const {
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < body.size(); ++i)
    if (body[i].kind == Stmt::Kind::Label) out[body[i].name] = i;
  return out;
}

bool Binding::operator==(const Binding& o) const {
  return name == o.name && target == o.target && types_eq(params, o.params) &&
         type_eq(ret, o.ret) && variadic == o.variadic;
}

bool StaticDef::operator==(const StaticDef& o) const {
  return name == o.name && type_eq(type, o.type) && value == o.value;
}

bool Expectation::operator==(const Expectation& o) const {
  return model == o.model && flags == o.flags && outcome == o.outcome &&
         kind == o.kind && leaks == o.leaks;
}

const char* expect_outcome_name(Expectation::Outcome o) {
  switch (o) {
    case Expectation::Outcome::Pass: return "pass";
    case Expectation::Outcome::Bug: return "bug";
    case Expectation::Outcome::Unsupported: return "unsupported";
    case Expectation::Outcome::Timeout: return "timeout";
  }
  return "?";
}

bool ScenarioProgram::operator==(const ScenarioProgram& o) const {
  if (type_order != o.type_order) return false;
  for (const auto& n : type_order) {
    const TypeDesc* a = types.find(n);
    const TypeDesc* b = o.types.find(n);
    if (!a || !b || !(*a == *b)) return false;
  }
  return statics == o.statics && bindings == o.bindings &&
         functions == o.functions && entry == o.entry &&
         expectations == o.expectations && tags == o.tags && steps == o.steps;
}

const FnDef* ScenarioProgram::function(const std::string& name) const {
  for (const auto& f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

const Binding* ScenarioProgram::binding(const std::string& name) const {
  for (const auto& b : bindings)
    if (b.name == name) return &b;
  return nullptr;
}

const StaticDef* ScenarioProgram::static_def(const std::string& name) const {
  for (const auto& s : statics)
    if (s.name == name) return &s;
  return nullptr;
}

std::size_t ScenarioProgram::statement_count() const {
  std::size_t n = 0;
  for (const auto& f : functions) n += f.body.size();
  return n;
}

ParseError::ParseError(int line, int col, const std::string& msg)
    : std::runtime_error(fmt::format("{}:{}: {}", line, col, msg)),
      line_(line),
      col_(col),
      detail_(msg) {}

// ---------------------------------------------------------------------------
// Lexing.

namespace {

struct Token {
  enum class Kind : std::uint8_t { Ident, Int, Punct, End };
  Kind kind = Kind::End;
  std::string text;
  std::uint64_t value = 0;
  int col = 1;
};

const std::set<std::string> kKeywords = {
    "let",      "uninit",   "zeroed",   "as",       "offset",  "cell_get",
    "box_new",  "into_raw", "from_raw", "alloc",    "expose",  "from_exposed",
    "add",      "sub",      "call",     "spawn",    "join",    "global",
    "load",     "malloc",   "alloca",   "gep",      "store",   "free",
    "memset",   "memcpy",   "dealloc",  "drop",     "leak",    "assume_init",
    "return",   "assert_eq", "label",   "goto",     "if",      "raw",
    "mut",      "const",    "fn",       "host",     "foreign", "extern",
    "type",     "static",   "box",      "ptr",      "cell",    "phantom",
};

const std::set<std::string> kHostOnly = {
    "offset",  "cell_get", "box_new",  "into_raw", "from_raw",  "alloc",
    "expose",  "from_exposed", "spawn", "join",    "dealloc",   "drop",
    "leak",    "assume_init", "assert_eq",
};

const std::set<std::string> kForeignOnly = {
    "load", "malloc", "alloca", "gep", "store", "free", "memset", "memcpy",
};

class Lexer {
 public:
  Lexer(const std::string& line, int lineno) : lineno_(lineno) {
    std::size_t i = 0;
    while (i < line.size()) {
      char c = line[i];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++i;
        continue;
      }
      Token t;
      t.col = static_cast<int>(i) + 1;
      bool neg_number = c == '-' && i + 1 < line.size() &&
                        std::isdigit(static_cast<unsigned char>(line[i + 1]));
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        std::size_t j = i;
        while (j < line.size() &&
               (std::isalnum(static_cast<unsigned char>(line[j])) ||
                line[j] == '_'))
          ++j;
        t.kind = Token::Kind::Ident;
        t.text = line.substr(i, j - i);
        i = j;
      } else if (std::isdigit(static_cast<unsigned char>(c)) || neg_number) {
        std::size_t j = i + (neg_number ? 1 : 0);
        int base = 10;
        if (line.compare(j, 2, "0x") == 0 || line.compare(j, 2, "0X") == 0) {
          base = 16;
          j += 2;
        }
        std::size_t start = j;
        while (j < line.size() &&
               std::isxdigit(static_cast<unsigned char>(line[j])))
          ++j;
        std::uint64_t v = 0;
        auto [ptr, ec] =
            std::from_chars(line.data() + start, line.data() + j, v, base);
        if (ec != std::errc() || ptr != line.data() + j || start == j)
          throw ParseError(lineno_, t.col, "malformed integer literal");
        t.kind = Token::Kind::Int;
        t.value = neg_number ? ~v + 1 : v;
        t.text = line.substr(i, j - i);
        i = j;
      } else {
        static const char* kMulti[] = {"...", "->", "==", "!=", "<=", ">="};
        bool matched = false;
        for (const char* m : kMulti) {
          if (line.compare(i, std::char_traits<char>::length(m), m) == 0) {
            t.text = m;
            matched = true;
            break;
          }
        }
        if (!matched) {
          if (std::string("&*.,:()[]{};=<>@").find(c) == std::string::npos)
            throw ParseError(lineno_, t.col,
                             fmt::format("unexpected character '{}'", c));
          t.text = std::string(1, c);
        }
        t.kind = Token::Kind::Punct;
        i += t.text.size();
      }
      toks_.push_back(std::move(t));
    }
    Token end;
    end.col = static_cast<int>(line.size()) + 1;
    toks_.push_back(end);
  }

  const Token& peek(std::size_t ahead = 0) const {
    return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
  }
  Token next() {
    Token t = peek();
    if (pos_ < toks_.size() - 1) ++pos_;
    return t;
  }
  bool at_end() const { return peek().kind == Token::Kind::End; }
  bool is(const std::string& text) const {
    const Token& t = peek();
    return t.kind != Token::Kind::End && t.kind != Token::Kind::Int &&
           t.text == text;
  }
  bool accept(const std::string& text) {
    if (!is(text)) return false;
    next();
    return true;
  }
  void expect(const std::string& text) {
    if (!accept(text)) fail(fmt::format("expected '{}'", text));
  }
  std::string ident(const char* what = "identifier") {
    const Token& t = peek();
    if (t.kind != Token::Kind::Ident) fail(fmt::format("expected {}", what));
    return next().text;
  }
  std::string name(const char* what = "name") {
    const Token& t = peek();
    if (t.kind == Token::Kind::Ident && kKeywords.count(t.text))
      fail(fmt::format("'{}' is a keyword", t.text));
    return ident(what);
  }
  std::uint64_t integer() {
    if (peek().kind != Token::Kind::Int) fail("expected integer literal");
    return next().value;
  }
  void finish() {
    if (!at_end()) fail(fmt::format("unexpected '{}'", peek().text));
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(lineno_, peek().col, msg);
  }
  [[noreturn]] void fail_at(const Token& t, const std::string& msg) const {
    throw ParseError(lineno_, t.col, msg);
  }
  int lineno() const { return lineno_; }

 private:
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  int lineno_;
};

TypeRef parse_type_tokens(Lexer& lx, const std::set<std::string>& known) {
  if (lx.accept("&")) {
    bool m = lx.accept("mut");
    return ptr_type(m ? PtrKind::MutRef : PtrKind::SharedRef,
                    parse_type_tokens(lx, known));
  }
  if (lx.accept("*")) {
    if (lx.accept("mut"))
      return ptr_type(PtrKind::RawMut, parse_type_tokens(lx, known));
    lx.expect("const");
    return ptr_type(PtrKind::RawConst, parse_type_tokens(lx, known));
  }
  if (lx.accept("[")) {
    TypeRef elem = parse_type_tokens(lx, known);
    lx.expect(";");
    std::uint64_t n = lx.integer();
    lx.expect("]");
    return array_type(elem, n);
  }
  if (lx.accept("(")) {
    lx.expect(")");
    return unit_type();
  }
  const Token t = lx.peek();
  std::string id = lx.ident("type");
  if (id == "box") return ptr_type(PtrKind::Box, parse_type_tokens(lx, known));
  if (id == "ptr") return opaque_ptr();
  if (id == "cell" || id == "phantom") {
    lx.expect("<");
    TypeRef inner = parse_type_tokens(lx, known);
    lx.expect(">");
    return id == "cell" ? cell_type(inner) : phantom_type(inner);
  }
  if (id == "bool") return int_type(8, false);
  if (id == "usize") return int_type(64, false);
  if (id == "isize") return int_type(64, true);
  if (id.size() >= 2 && (id[0] == 'i' || id[0] == 'u')) {
    std::string digits = id.substr(1);
    if (digits == "8" || digits == "16" || digits == "32" || digits == "64")
      return int_type(static_cast<unsigned>(std::stoul(digits)), id[0] == 'i');
  }
  if (known.count(id)) return named_type(id);
  lx.fail_at(t, fmt::format("unknown type '{}'", id));
}

// ---------------------------------------------------------------------------
// Statements.

struct FnScope {
  Dialect dialect = Dialect::Host;
  std::set<std::string> locals;
};

class Parser {
 public:
  explicit Parser(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines_.push_back(line);
    }
  }

  ScenarioProgram run();

 private:
  static std::string strip(const std::string& line) {
    std::string s = line.substr(0, line.find('#'));
    auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }
  int col_of(std::size_t idx) const {
    auto b = lines_[idx].find_first_not_of(" \t");
    return b == std::string::npos ? 1 : static_cast<int>(b) + 1;
  }

  void collect_type_names();
  void parse_expect(const std::string& s, int lineno);
  void parse_type_block(std::size_t& i);
  void parse_static(Lexer& lx);
  void parse_binding(Lexer& lx);
  void parse_function(std::size_t& i, Dialect d);
  Stmt parse_stmt(Lexer& lx, FnScope& scope);
  Rvalue parse_rvalue(Lexer& lx, FnScope& scope);
  Place parse_place(Lexer& lx, FnScope& scope);
  Operand parse_operand(Lexer& lx, FnScope& scope);
  std::vector<Operand> parse_args(Lexer& lx, FnScope& scope);
  TypeRef type(Lexer& lx) { return parse_type_tokens(lx, type_names_); }
  void check_dialect(Lexer& lx, const FnScope& scope);
  void validate();

  std::vector<std::string> lines_;
  std::set<std::string> type_names_;
  ScenarioProgram prog_;
  bool entry_set_ = false;
  // Call sites, validated once every function is known.
  struct CallSite {
    int line;
    int col;
    Dialect dialect;
    std::string callee;
    std::size_t argc;
    bool spawn;
  };
  std::vector<CallSite> calls_;
  struct Jump {
    int line;
    int col;
    std::string fn;
    std::string label;
  };
  std::vector<Jump> jumps_;
};

void Parser::collect_type_names() {
  for (std::size_t i = 0; i < lines_.size(); ++i) {
    std::string s = strip(lines_[i]);
    if (s.rfind("type ", 0) != 0) continue;
    Lexer lx(s, static_cast<int>(i) + 1);
    lx.next();
    std::string n = lx.name("type name");
    if (!type_names_.insert(n).second)
      throw ParseError(static_cast<int>(i) + 1, col_of(i),
                       fmt::format("type '{}' is defined twice", n));
  }
}

void Parser::parse_expect(const std::string& s, int lineno) {
  std::istringstream in(s.substr(6));
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  Expectation e;
  e.line = lineno;
  std::size_t k = 0;
  auto bad = [&](const std::string& msg) {
    throw ParseError(lineno, 1, msg);
  };
  if (k < words.size() && (words[k] == "tb" || words[k] == "sb")) {
    e.model = words[k] == "tb" ? Model::TreeBorrows : Model::StackedBorrows;
    ++k;
  }
  static const std::set<std::string> kFlags = {
      "strict-provenance",     "zero-init-foreign",    "no-permissive-loads",
      "no-symbolic-alignment", "no-unique-as-mutable",
  };
  while (k < words.size() && !words[k].empty() && words[k][0] == '+') {
    std::string f = words[k].substr(1);
    if (!kFlags.count(f)) bad(fmt::format("unknown flag '+{}'", f));
    e.flags.push_back(f);
    ++k;
  }
  if (k >= words.size()) bad("expected outcome after 'expect'");
  const std::string& o = words[k++];
  if (o == "pass") {
    e.outcome = Expectation::Outcome::Pass;
  } else if (o == "timeout") {
    e.outcome = Expectation::Outcome::Timeout;
  } else if (o == "unsupported") {
    e.outcome = Expectation::Outcome::Unsupported;
  } else if (o.rfind("bug(", 0) == 0 && o.back() == ')') {
    e.outcome = Expectation::Outcome::Bug;
    auto kind = parse_kind(o.substr(4, o.size() - 5));
    if (!kind) bad(fmt::format("unknown diagnostic kind in '{}'", o));
    e.kind = kind;
  } else {
    bad(fmt::format("unknown outcome '{}'", o));
  }
  if (k < words.size()) {
    if (words[k] != "leaks" || k + 1 >= words.size())
      bad("expected 'leaks N'");
    try {
      e.leaks = std::stoull(words[k + 1]);
    } catch (const std::exception&) {
      bad("expected leak count");
    }
    k += 2;
  }
  if (k != words.size()) bad(fmt::format("unexpected '{}'", words[k]));
  prog_.expectations.push_back(std::move(e));
}

void Parser::parse_type_block(std::size_t& i) {
  int lineno = static_cast<int>(i) + 1;
  Lexer head(strip(lines_[i]), lineno);
  head.next();
  std::string name = head.name("type name");
  head.expect("{");
  head.finish();
  std::vector<FieldDef> fields;
  std::set<std::string> seen;
  for (++i; i < lines_.size(); ++i) {
    std::string s = strip(lines_[i]);
    if (s.empty()) continue;
    Lexer lx(s, static_cast<int>(i) + 1);
    if (lx.accept("}")) {
      lx.finish();
      TypeRef t = struct_type(name, std::move(fields));
      prog_.types.define(name, t);
      prog_.type_order.push_back(name);
      try {
        (void)layout_of(*t, prog_.types);
      } catch (const LayoutError& e) {
        throw ParseError(lineno, 1, e.what());
      }
      return;
    }
    FieldDef f;
    f.name = lx.name("field name");
    if (!seen.insert(f.name).second)
      lx.fail(fmt::format("duplicate field '{}'", f.name));
    lx.expect(":");
    f.type = type(lx);
    if (lx.accept("@")) f.explicit_offset = lx.integer();
    lx.finish();
    fields.push_back(std::move(f));
  }
  throw ParseError(lineno, 1, fmt::format("type '{}' is not closed", name));
}

void Parser::parse_static(Lexer& lx) {
  StaticDef sd;
  sd.line = lx.lineno();
  sd.name = lx.name("static name");
  if (prog_.static_def(sd.name))
    lx.fail(fmt::format("static '{}' is defined twice", sd.name));
  lx.expect(":");
  sd.type = type(lx);
  if (!sd.type->is_int() && !sd.type->is_ptr())
    lx.fail("statics must have integer or pointer type");
  lx.expect("=");
  sd.value = lx.integer();
  lx.finish();
  prog_.statics.push_back(std::move(sd));
}

void Parser::parse_binding(Lexer& lx) {
  Binding b;
  b.line = lx.lineno();
  lx.expect("fn");
  b.name = lx.name("binding name");
  b.target = b.name;
  if (lx.accept("=")) b.target = lx.name("function name");
  lx.expect("(");
  if (!lx.accept(")")) {
    do {
      if (lx.accept("...")) {
        b.variadic = true;
        break;
      }
      b.params.push_back(type(lx));
    } while (lx.accept(","));
    lx.expect(")");
  }
  b.ret = lx.accept("->") ? type(lx) : unit_type();
  lx.finish();
  if (prog_.binding(b.name))
    lx.fail(fmt::format("binding '{}' is declared twice", b.name));
  prog_.bindings.push_back(std::move(b));
}

void Parser::parse_function(std::size_t& i, Dialect d) {
  int lineno = static_cast<int>(i) + 1;
  Lexer lx(strip(lines_[i]), lineno);
  lx.next();  // host / foreign
  lx.expect("fn");
  FnDef f;
  f.line = lineno;
  f.dialect = d;
  f.name = lx.name("function name");
  if (prog_.function(f.name))
    lx.fail(fmt::format("function '{}' is defined twice", f.name));
  FnScope scope{d, {}};
  lx.expect("(");
  if (!lx.accept(")")) {
    do {
      if (lx.accept("...")) {
        if (d == Dialect::Host) lx.fail("host functions cannot be variadic");
        f.variadic = true;
        break;
      }
      Param p;
      p.name = lx.name("parameter name");
      lx.expect(":");
      p.type = type(lx);
      if (!scope.locals.insert(p.name).second)
        lx.fail(fmt::format("duplicate parameter '{}'", p.name));
      f.params.push_back(std::move(p));
    } while (lx.accept(","));
    lx.expect(")");
  }
  f.ret = lx.accept("->") ? type(lx) : unit_type();
  lx.expect("{");
  lx.finish();
  std::set<std::string> labels;
  for (++i; i < lines_.size(); ++i) {
    std::string s = strip(lines_[i]);
    if (s.empty()) continue;
    Lexer body(s, static_cast<int>(i) + 1);
    if (body.accept("}")) {
      body.finish();
      prog_.functions.push_back(std::move(f));
      return;
    }
    Stmt st = parse_stmt(body, scope);
    st.line = static_cast<int>(i) + 1;
    st.text = s;
    if (st.kind == Stmt::Kind::Label && !labels.insert(st.name).second)
      throw ParseError(st.line, col_of(i),
                       fmt::format("label '{}' defined twice", st.name));
    if (st.kind == Stmt::Kind::Goto || st.kind == Stmt::Kind::If)
      jumps_.push_back({st.line, col_of(i), f.name, st.name});
    f.body.push_back(std::move(st));
  }
  throw ParseError(lineno, 1,
                   fmt::format("function '{}' is not closed", f.name));
}

void Parser::check_dialect(Lexer& lx, const FnScope& scope) {
  const Token& t = lx.peek();
  if (t.kind != Token::Kind::Ident && !(t.kind == Token::Kind::Punct &&
                                        t.text == "&"))
    return;
  if (scope.dialect == Dialect::Foreign &&
      (t.text == "&" || kHostOnly.count(t.text)))
    lx.fail(t.text == "&"
                ? "dialect violation: borrow form in a foreign function"
                : fmt::format("dialect violation: '{}' is a host form",
                              t.text));
  if (scope.dialect == Dialect::Host && kForeignOnly.count(t.text))
    lx.fail(fmt::format("dialect violation: '{}' is a foreign form", t.text));
}

Place Parser::parse_place(Lexer& lx, FnScope& scope) {
  std::size_t derefs = 0;
  while (lx.accept("*")) ++derefs;
  Token root = lx.peek();
  Place p;
  p.root = lx.name("place");
  if (!scope.locals.count(p.root) && !prog_.static_def(p.root))
    lx.fail_at(root, fmt::format("unknown local '{}'", p.root));
  for (;;) {
    if (lx.accept(".")) {
      if (lx.peek().kind == Token::Kind::Int) {
        p.projs.push_back({Proj::Kind::Index, "", lx.integer()});
      } else {
        p.projs.push_back({Proj::Kind::Field, lx.name("field"), 0});
      }
    } else if (lx.accept("[")) {
      p.projs.push_back({Proj::Kind::Index, "", lx.integer()});
      lx.expect("]");
    } else if (lx.accept("->")) {
      p.projs.push_back({Proj::Kind::Deref, "", 0});
      p.projs.push_back({Proj::Kind::Field, lx.name("field"), 0});
    } else {
      break;
    }
  }
  for (std::size_t k = 0; k < derefs; ++k)
    p.projs.push_back({Proj::Kind::Deref, "", 0});
  if (scope.dialect == Dialect::Foreign &&
      (!p.projs.empty() || prog_.static_def(p.root)))
    lx.fail_at(root, "foreign operands are plain locals");
  return p;
}

Operand Parser::parse_operand(Lexer& lx, FnScope& scope) {
  Operand o;
  if (lx.peek().kind == Token::Kind::Int) {
    o.kind = Operand::Kind::Int;
    o.value = lx.integer();
    return o;
  }
  o.kind = Operand::Kind::Place;
  o.place = parse_place(lx, scope);
  return o;
}

std::vector<Operand> Parser::parse_args(Lexer& lx, FnScope& scope) {
  std::vector<Operand> args;
  lx.expect("(");
  if (lx.accept(")")) return args;
  do {
    args.push_back(parse_operand(lx, scope));
  } while (lx.accept(","));
  lx.expect(")");
  return args;
}

Rvalue Parser::parse_rvalue(Lexer& lx, FnScope& scope) {
  check_dialect(lx, scope);
  Rvalue rv;
  using K = Rvalue::Kind;
  const bool host = scope.dialect == Dialect::Host;
  auto one = [&](K k) {
    rv.kind = k;
    rv.ops.push_back(parse_operand(lx, scope));
  };
  auto two = [&](K k) {
    rv.kind = k;
    rv.ops.push_back(parse_operand(lx, scope));
    rv.ops.push_back(parse_operand(lx, scope));
  };
  auto call = [&](K k) {
    Token t = lx.peek();
    rv.kind = k;
    rv.name = lx.name("function name");
    rv.ops = parse_args(lx, scope);
    calls_.push_back({lx.lineno(), t.col, scope.dialect, rv.name,
                      rv.ops.size(), k == K::Spawn});
  };
  if (host && lx.accept("uninit")) {
    rv.kind = K::Uninit;
  } else if (host && lx.accept("zeroed")) {
    rv.kind = K::Zeroed;
  } else if (lx.accept("&")) {
    if (lx.accept("raw")) {
      rv.kind = K::AddrOf;
      if (lx.accept("mut")) {
        rv.is_mut = true;
      } else {
        lx.expect("const");
      }
    } else {
      rv.kind = K::Borrow;
      rv.is_mut = lx.accept("mut");
    }
    rv.place = parse_place(lx, scope);
  } else if (lx.accept("offset")) {
    two(K::Offset);
  } else if (lx.accept("cell_get")) {
    rv.kind = K::CellGet;
    rv.place = parse_place(lx, scope);
  } else if (lx.accept("box_new")) {
    rv.kind = K::BoxNew;
    if (lx.accept("uninit")) {
      rv.init = K::Uninit;
    } else if (lx.accept("zeroed")) {
      rv.init = K::Zeroed;
    } else {
      rv.init = K::Use;
      rv.ops.push_back(parse_operand(lx, scope));
    }
  } else if (lx.accept("into_raw")) {
    one(K::IntoRaw);
  } else if (lx.accept("from_raw")) {
    one(K::FromRaw);
  } else if (lx.accept("alloc")) {
    two(K::Alloc);
  } else if (lx.accept("expose")) {
    one(K::Expose);
  } else if (lx.accept("from_exposed")) {
    one(K::FromExposed);
  } else if (lx.accept("add")) {
    two(K::Binary);
    rv.binop = BinOp::Add;
  } else if (lx.accept("sub")) {
    two(K::Binary);
    rv.binop = BinOp::Sub;
  } else if (lx.accept("call")) {
    call(K::Call);
  } else if (lx.accept("spawn")) {
    call(K::Spawn);
  } else if (lx.accept("join")) {
    one(K::Join);
  } else if (lx.accept("global")) {
    Token t = lx.peek();
    rv.kind = K::Global;
    rv.name = lx.name("static name");
    if (!prog_.static_def(rv.name))
      lx.fail_at(t, fmt::format("unknown static '{}'", rv.name));
  } else if (lx.accept("load")) {
    one(K::Load);
  } else if (lx.accept("malloc")) {
    one(K::Malloc);
  } else if (lx.accept("alloca")) {
    one(K::Alloca);
  } else if (lx.accept("gep")) {
    two(K::Gep);
  } else {
    one(K::Use);
    if (host && lx.accept("as")) {
      rv.kind = K::Cast;
      rv.type = type(lx);
    }
  }
  return rv;
}

Stmt Parser::parse_stmt(Lexer& lx, FnScope& scope) {
  check_dialect(lx, scope);
  Stmt st;
  using K = Stmt::Kind;
  auto cmp = [&]() {
    static const std::pair<const char*, CmpOp> kOps[] = {
        {"==", CmpOp::Eq}, {"!=", CmpOp::Ne}, {"<=", CmpOp::Le},
        {">=", CmpOp::Ge}, {"<", CmpOp::Lt},  {">", CmpOp::Gt}};
    for (const auto& [txt, op] : kOps)
      if (lx.accept(txt)) return op;
    lx.fail("expected comparison operator");
  };
  if (lx.accept("let")) {
    st.kind = K::Let;
    st.name = lx.name("local name");
    lx.expect(":");
    st.type = type(lx);
    if (lx.accept("=")) st.rv = parse_rvalue(lx, scope);
    if (scope.dialect == Dialect::Foreign && !st.rv)
      lx.fail("foreign locals need an initializer");
    // Declared after the initializer, so `let x: T = x` reads the old x.
    scope.locals.insert(st.name);
  } else if (lx.is("call") || lx.is("spawn") || lx.is("join")) {
    st.kind = K::Eval;
    st.rv = parse_rvalue(lx, scope);
  } else if (lx.accept("dealloc")) {
    st.kind = K::Dealloc;
    st.ops.push_back(parse_operand(lx, scope));
  } else if (lx.accept("drop")) {
    st.kind = K::Drop;
    st.place = parse_place(lx, scope);
  } else if (lx.accept("leak")) {
    st.kind = K::Leak;
    st.ops.push_back(parse_operand(lx, scope));
  } else if (lx.accept("assume_init")) {
    st.kind = K::AssumeInit;
    st.place = parse_place(lx, scope);
  } else if (lx.accept("return")) {
    st.kind = K::Return;
    if (!lx.at_end()) st.ops.push_back(parse_operand(lx, scope));
  } else if (lx.accept("assert_eq")) {
    st.kind = K::AssertEq;
    st.ops.push_back(parse_operand(lx, scope));
    st.ops.push_back(parse_operand(lx, scope));
  } else if (lx.accept("label")) {
    st.kind = K::Label;
    st.name = lx.name("label");
  } else if (lx.accept("goto")) {
    st.kind = K::Goto;
    st.name = lx.name("label");
  } else if (lx.accept("if")) {
    st.kind = K::If;
    st.ops.push_back(parse_operand(lx, scope));
    st.cmp = cmp();
    st.ops.push_back(parse_operand(lx, scope));
    lx.expect("goto");
    st.name = lx.name("label");
  } else if (lx.accept("store")) {
    st.kind = K::Store;
    st.type = type(lx);
    st.ops.push_back(parse_operand(lx, scope));
    st.ops.push_back(parse_operand(lx, scope));
  } else if (lx.accept("free")) {
    st.kind = K::Free;
    st.ops.push_back(parse_operand(lx, scope));
  } else if (lx.is("memset") || lx.is("memcpy")) {
    st.kind = lx.next().text == "memset" ? K::Memset : K::Memcpy;
    for (int k = 0; k < 3; ++k) st.ops.push_back(parse_operand(lx, scope));
  } else {
    if (scope.dialect == Dialect::Foreign)
      lx.fail("foreign functions have no assignment form; use store");
    st.kind = K::Assign;
    st.place = parse_place(lx, scope);
    lx.expect("=");
    st.rv = parse_rvalue(lx, scope);
  }
  lx.finish();
  return st;
}

void Parser::validate() {
  for (const auto& c : calls_) {
    const FnDef* f = prog_.function(c.callee);
    const Binding* b = prog_.binding(c.callee);
    if (c.dialect == Dialect::Host) {
      if (f && f->dialect == Dialect::Host) {
        if (c.argc != f->params.size())
          throw ParseError(c.line, c.col,
                           fmt::format("'{}' takes {} arguments, {} given",
                                       c.callee, f->params.size(), c.argc));
        continue;
      }
      if (c.spawn)
        throw ParseError(c.line, c.col,
                         fmt::format("'{}' is not a host function", c.callee));
      if (b) {
        if (c.argc < b->params.size() ||
            (!b->variadic && c.argc != b->params.size()))
          throw ParseError(c.line, c.col,
                           fmt::format("binding '{}' takes {} arguments, {} "
                                       "given",
                                       c.callee, b->params.size(), c.argc));
        continue;
      }
      if (f)
        throw ParseError(c.line, c.col,
                         fmt::format("foreign function '{}' needs an extern "
                                     "fn binding",
                                     c.callee));
      throw ParseError(c.line, c.col,
                       fmt::format("unknown function '{}'", c.callee));
    }
    if (!f)
      throw ParseError(c.line, c.col,
                       fmt::format("unknown function '{}'", c.callee));
    if (c.argc < f->params.size() ||
        (!f->variadic && c.argc != f->params.size()))
      throw ParseError(c.line, c.col,
                       fmt::format("'{}' takes {} arguments, {} given",
                                   c.callee, f->params.size(), c.argc));
  }
  for (const auto& b : prog_.bindings) {
    const FnDef* f = prog_.function(b.target);
    if (!f || f->dialect != Dialect::Foreign)
      throw ParseError(b.line, 1,
                       fmt::format("binding '{}' names no foreign function "
                                   "'{}'",
                                   b.name, b.target));
  }
  for (const auto& j : jumps_) {
    const FnDef* f = prog_.function(j.fn);
    if (!f->labels().count(j.label))
      throw ParseError(j.line, j.col,
                       fmt::format("unknown label '{}'", j.label));
  }
  const FnDef* entry = prog_.function(prog_.entry);
  if (!entry)
    throw ParseError(1, 1,
                     fmt::format("entry function '{}' is not defined",
                                 prog_.entry));
  if (entry->dialect != Dialect::Host || !entry->params.empty())
    throw ParseError(entry->line, 1,
                     "the entry function must be a host function without "
                     "parameters");
}

ScenarioProgram Parser::run() {
  collect_type_names();
  for (std::size_t i = 0; i < lines_.size(); ++i) {
    std::string s = strip(lines_[i]);
    if (s.empty()) continue;
    int lineno = static_cast<int>(i) + 1;
    if (s.rfind("expect ", 0) == 0 || s == "expect") {
      parse_expect(s, lineno);
      continue;
    }
    if (s.rfind("tag ", 0) == 0) {
      std::istringstream in(s.substr(4));
      for (std::string t; in >> t;) prog_.tags.push_back(t);
      continue;
    }
    Lexer lx(s, lineno);
    const Token head = lx.peek();
    if (head.kind != Token::Kind::Ident)
      lx.fail("expected a declaration");
    if (head.text == "type") {
      parse_type_block(i);
    } else if (head.text == "host" || head.text == "foreign") {
      parse_function(i, head.text == "host" ? Dialect::Host
                                            : Dialect::Foreign);
    } else {
      lx.next();
      if (head.text == "extern") {
        parse_binding(lx);
      } else if (head.text == "static") {
        parse_static(lx);
      } else if (head.text == "entry") {
        if (entry_set_) lx.fail_at(head, "entry is set twice");
        prog_.entry = lx.name("function name");
        entry_set_ = true;
        lx.finish();
      } else if (head.text == "steps") {
        prog_.steps = lx.integer();
        lx.finish();
      } else {
        lx.fail_at(head, fmt::format("unknown declaration '{}'", head.text));
      }
    }
  }
  validate();
  return std::move(prog_);
}

}  // namespace

ScenarioProgram parse_scenario(const std::string& text) {
  try {
    return Parser(text).run();
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(0, 0, e.what());
  }
}

TypeRef parse_type(const std::string& text, const TypeEnv& env) {
  (void)env;
  Lexer lx(text, 1);
  std::set<std::string> known;
  TypeRef t = parse_type_tokens(lx, known);
  lx.finish();
  return t;
}

// ---------------------------------------------------------------------------
// Rendering.

namespace {

std::string render_int(std::uint64_t v) {
  auto s = static_cast<std::int64_t>(v);
  return s < 0 ? std::to_string(s) : std::to_string(v);
}

const char* cmp_text(CmpOp op) {
  switch (op) {
    case CmpOp::Eq: return "==";
    case CmpOp::Ne: return "!=";
    case CmpOp::Lt: return "<";
    case CmpOp::Le: return "<=";
    case CmpOp::Gt: return ">";
    case CmpOp::Ge: return ">=";
  }
  return "==";
}

std::string join_ops(const std::vector<Operand>& ops, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (i) out += sep;
    out += render_operand(ops[i]);
  }
  return out;
}

}  // namespace

std::string render_place(const Place& p) {
  // Trailing derefs print as prefix stars; a deref followed by a field prints
  // as `->`.
  std::size_t n = p.projs.size();
  std::size_t stars = 0;
  while (stars < n && p.projs[n - 1 - stars].kind == Proj::Kind::Deref)
    ++stars;
  std::string body = p.root;
  for (std::size_t i = 0; i + stars < n; ++i) {
    const Proj& pr = p.projs[i];
    if (pr.kind == Proj::Kind::Deref) {
      // Only reachable as the first half of `->`.
      body += "->" + p.projs[++i].field;
    } else if (pr.kind == Proj::Kind::Field) {
      body += "." + pr.field;
    } else {
      body += fmt::format("[{}]", pr.index);
    }
  }
  return std::string(stars, '*') + body;
}

std::string render_operand(const Operand& o) {
  return o.kind == Operand::Kind::Int ? render_int(o.value)
                                      : render_place(o.place);
}

std::string render_rvalue(const Rvalue& rv) {
  using K = Rvalue::Kind;
  auto op = [&](std::size_t i) { return render_operand(rv.ops.at(i)); };
  switch (rv.kind) {
    case K::Uninit: return "uninit";
    case K::Zeroed: return "zeroed";
    case K::Use: return op(0);
    case K::Borrow:
      return (rv.is_mut ? "&mut " : "&") + render_place(rv.place);
    case K::AddrOf:
      return (rv.is_mut ? "&raw mut " : "&raw const ") +
             render_place(rv.place);
    case K::Cast: return op(0) + " as " + render_type(rv.type);
    case K::Offset: return "offset " + op(0) + " " + op(1);
    case K::CellGet: return "cell_get " + render_place(rv.place);
    case K::BoxNew:
      if (rv.init == K::Uninit) return "box_new uninit";
      if (rv.init == K::Zeroed) return "box_new zeroed";
      return "box_new " + op(0);
    case K::IntoRaw: return "into_raw " + op(0);
    case K::FromRaw: return "from_raw " + op(0);
    case K::Alloc: return "alloc " + op(0) + " " + op(1);
    case K::Expose: return "expose " + op(0);
    case K::FromExposed: return "from_exposed " + op(0);
    case K::Binary:
      return std::string(rv.binop == BinOp::Add ? "add " : "sub ") + op(0) +
             " " + op(1);
    case K::Call: return "call " + rv.name + "(" + join_ops(rv.ops, ", ") + ")";
    case K::Spawn:
      return "spawn " + rv.name + "(" + join_ops(rv.ops, ", ") + ")";
    case K::Join: return "join " + op(0);
    case K::Global: return "global " + rv.name;
    case K::Load: return "load " + op(0);
    case K::Malloc: return "malloc " + op(0);
    case K::Alloca: return "alloca " + op(0);
    case K::Gep: return "gep " + op(0) + " " + op(1);
  }
  return "?";
}

std::string render_stmt(const Stmt& s) {
  using K = Stmt::Kind;
  switch (s.kind) {
    case K::Let:
      return "let " + s.name + ": " + render_type(s.type) +
             (s.rv ? " = " + render_rvalue(*s.rv) : std::string());
    case K::Assign: return render_place(s.place) + " = " + render_rvalue(*s.rv);
    case K::Eval: return render_rvalue(*s.rv);
    case K::Dealloc: return "dealloc " + join_ops(s.ops, " ");
    case K::Drop: return "drop " + render_place(s.place);
    case K::Leak: return "leak " + join_ops(s.ops, " ");
    case K::AssumeInit: return "assume_init " + render_place(s.place);
    case K::Return:
      return s.ops.empty() ? "return" : "return " + join_ops(s.ops, " ");
    case K::AssertEq: return "assert_eq " + join_ops(s.ops, " ");
    case K::Label: return "label " + s.name;
    case K::Goto: return "goto " + s.name;
    case K::If:
      return fmt::format("if {} {} {} goto {}", render_operand(s.ops[0]),
                         cmp_text(s.cmp), render_operand(s.ops[1]), s.name);
    case K::Store:
      return "store " + render_type(s.type) + " " + join_ops(s.ops, " ");
    case K::Free: return "free " + join_ops(s.ops, " ");
    case K::Memset: return "memset " + join_ops(s.ops, " ");
    case K::Memcpy: return "memcpy " + join_ops(s.ops, " ");
  }
  return "?";
}

std::string render_program(const ScenarioProgram& p) {
  std::string out;
  for (const auto& e : p.expectations) {
    out += "expect";
    if (e.model) out += e.model == Model::TreeBorrows ? " tb" : " sb";
    for (const auto& f : e.flags) out += " +" + f;
    out += " ";
    if (e.outcome == Expectation::Outcome::Bug)
      out += fmt::format("bug({})", kind_name(*e.kind));
    else
      out += expect_outcome_name(e.outcome);
    if (e.leaks) out += fmt::format(" leaks {}", *e.leaks);
    out += "\n";
  }
  if (!p.tags.empty()) {
    out += "tag";
    for (const auto& t : p.tags) out += " " + t;
    out += "\n";
  }
  if (p.entry != "main") out += "entry " + p.entry + "\n";
  if (p.steps) out += fmt::format("steps {}\n", *p.steps);
  for (const auto& n : p.type_order) {
    const auto& st = std::get<StructType>(p.types.find(n)->node);
    out += "\ntype " + n + " {\n";
    for (const auto& f : st.fields) {
      out += "  " + f.name + ": " + render_type(f.type);
      if (f.explicit_offset) out += fmt::format(" @ {}", *f.explicit_offset);
      out += "\n";
    }
    out += "}\n";
  }
  if (!p.statics.empty()) out += "\n";
  for (const auto& s : p.statics)
    out += "static " + s.name + ": " + render_type(s.type) + " = " +
           render_int(s.value) + "\n";
  if (!p.bindings.empty()) out += "\n";
  for (const auto& b : p.bindings) {
    out += "extern fn " + b.name;
    if (b.target != b.name) out += " = " + b.target;
    out += "(";
    for (std::size_t i = 0; i < b.params.size(); ++i) {
      if (i) out += ", ";
      out += render_type(b.params[i]);
    }
    if (b.variadic) out += b.params.empty() ? "..." : ", ...";
    out += ")";
    if (!b.ret->is_unit()) out += " -> " + render_type(b.ret);
    out += "\n";
  }
  for (const auto& f : p.functions) {
    out += f.dialect == Dialect::Host ? "\nhost fn " : "\nforeign fn ";
    out += f.name + "(";
    for (std::size_t i = 0; i < f.params.size(); ++i) {
      if (i) out += ", ";
      out += f.params[i].name + ": " + render_type(f.params[i].type);
    }
    if (f.variadic) out += f.params.empty() ? "..." : ", ...";
    out += ")";
    if (!f.ret->is_unit()) out += " -> " + render_type(f.ret);
    out += " {\n";
    for (const auto& s : f.body) out += "  " + render_stmt(s) + "\n";
    out += "}\n";
  }
  return out;
}

}  // namespace duet
