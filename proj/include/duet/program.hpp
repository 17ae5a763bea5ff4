// SPDX-License-Identifier: Apache-2.0
//
// Scenario programs: declarations, the two statement dialects, and the
// line-oriented text format (see docs/scenario-format.md).

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "duet/diagnostic.hpp"
#include "duet/tracker.hpp"
#include "duet/types.hpp"

namespace duet {

/// A path to a memory location: a local (or static), then field, index and
/// dereference steps applied left to right.
struct Proj {
  enum class Kind : std::uint8_t { Field, Index, Deref };
  Kind kind = Kind::Field;
  std::string field;
  std::uint64_t index = 0;

  bool operator==(const Proj&) const = default;
};

struct Place {
  std::string root;
  std::vector<Proj> projs;

  bool operator==(const Place&) const = default;
};

/// An integer literal or a copy out of a place.
struct Operand {
  enum class Kind : std::uint8_t { Int, Place };
  Kind kind = Kind::Int;
  std::uint64_t value = 0;  // two's complement
  Place place;

  bool operator==(const Operand&) const = default;
};

enum class BinOp : std::uint8_t { Add, Sub };
enum class CmpOp : std::uint8_t { Eq, Ne, Lt, Le, Gt, Ge };

struct Rvalue {
  enum class Kind : std::uint8_t {
    Uninit,
    Zeroed,
    Use,          // ops[0]
    Borrow,       // &mut place / &place (retag)
    AddrOf,       // &raw mut place / &raw const place (no retag)
    Cast,         // ops[0] as type
    Offset,       // offset ops[0] ops[1] (elements)
    CellGet,      // cell_get place
    BoxNew,       // box_new init; init is Uninit, Zeroed or Use(ops[0])
    IntoRaw,      // into_raw ops[0]
    FromRaw,      // from_raw ops[0]
    Alloc,        // alloc size align
    Expose,       // expose ops[0]
    FromExposed,  // from_exposed ops[0]
    Binary,       // add/sub ops[0] ops[1]
    Call,         // call name(ops)
    Spawn,        // spawn name(ops)
    Join,         // join ops[0]
    Global,       // global name
    // Foreign only.
    Load,    // load ops[0]
    Malloc,  // malloc ops[0]
    Alloca,  // alloca ops[0]
    Gep,     // gep ops[0] ops[1] (bytes)
  };

  Kind kind = Kind::Use;
  bool is_mut = false;
  Place place;
  std::vector<Operand> ops;
  TypeRef type;  // Cast target
  std::string name;
  BinOp binop = BinOp::Add;
  Kind init = Kind::Use;  // BoxNew initializer form

  bool operator==(const Rvalue& o) const;
};

struct Stmt {
  enum class Kind : std::uint8_t {
    Let,         // let name: type [= rv]
    Assign,      // place = rv
    Eval,        // call/spawn/join for effect
    Dealloc,     // dealloc op
    Drop,        // drop place
    Leak,        // leak op
    AssumeInit,  // assume_init place
    Return,      // return [op]
    AssertEq,    // assert_eq a b
    Label,
    Goto,
    If,  // if a cmp b goto name
    // Foreign only.
    Store,   // store type p v
    Free,    // free p
    Memset,  // memset p byte n
    Memcpy,  // memcpy dst src n
  };

  Kind kind = Kind::Let;
  std::string name;
  TypeRef type;
  std::optional<Rvalue> rv;
  Place place;
  std::vector<Operand> ops;
  CmpOp cmp = CmpOp::Eq;

  // Source position; not part of equality.
  int line = 0;
  std::string text;

  bool operator==(const Stmt& o) const;
};

struct Param {
  std::string name;
  TypeRef type;
  bool operator==(const Param& o) const;
};

struct FnDef {
  std::string name;
  Dialect dialect = Dialect::Host;
  std::vector<Param> params;
  TypeRef ret;  // unit when absent
  bool variadic = false;
  std::vector<Stmt> body;
  int line = 0;

  bool operator==(const FnDef& o) const;
  std::map<std::string, std::size_t> labels() const;
};

/// A host-side declaration of a foreign function. It is not checked against
/// the definition it names.
struct Binding {
  std::string name;
  std::string target;
  std::vector<TypeRef> params;
  TypeRef ret;
  bool variadic = false;
  int line = 0;

  bool operator==(const Binding& o) const;
};

struct StaticDef {
  std::string name;
  TypeRef type;
  std::uint64_t value = 0;
  int line = 0;

  bool operator==(const StaticDef& o) const;
};

/// `expect [tb|sb] [+flag...] outcome [leaks N]`
struct Expectation {
  enum class Outcome : std::uint8_t { Pass, Bug, Unsupported, Timeout };

  std::optional<Model> model;  // both when absent
  std::vector<std::string> flags;
  Outcome outcome = Outcome::Pass;
  std::optional<DiagKind> kind;
  std::optional<std::uint64_t> leaks;
  int line = 0;

  bool operator==(const Expectation& o) const;
};

const char* expect_outcome_name(Expectation::Outcome o);

struct ScenarioProgram {
  TypeEnv types;
  std::vector<std::string> type_order;
  std::vector<StaticDef> statics;
  std::vector<Binding> bindings;
  std::vector<FnDef> functions;
  std::string entry = "main";
  std::vector<Expectation> expectations;
  std::vector<std::string> tags;
  std::optional<std::uint64_t> steps;

  bool operator==(const ScenarioProgram& o) const;

  const FnDef* function(const std::string& name) const;
  const Binding* binding(const std::string& name) const;
  const StaticDef* static_def(const std::string& name) const;
  std::size_t statement_count() const;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, int col, const std::string& msg);
  int line() const { return line_; }
  int col() const { return col_; }
  const std::string& detail() const { return detail_; }

 private:
  int line_;
  int col_;
  std::string detail_;
};

/// Throws ParseError; never anything else.
ScenarioProgram parse_scenario(const std::string& text);

std::string render_place(const Place& p);
std::string render_operand(const Operand& o);
std::string render_rvalue(const Rvalue& rv);
std::string render_stmt(const Stmt& s);
std::string render_program(const ScenarioProgram& p);

/// Parses a type expression such as `&mut [i32; 4]` against `env`.
TypeRef parse_type(const std::string& text, const TypeEnv& env = {});

}  // namespace duet
