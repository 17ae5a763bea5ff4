// SPDX-License-Identifier: Apache-2.0
//
// The joint abstract machine. Host and foreign code run as simulated threads
// over one Memory; a call across the boundary spawns a thread in the other
// dialect and parks the caller until it returns.

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "duet/memory.hpp"
#include "duet/program.hpp"
#include "duet/translation.hpp"

namespace duet {

struct MachineConfig {
  Model model = Model::TreeBorrows;
  bool strict_provenance = false;
  bool zero_init_foreign = false;
  bool permissive_foreign_loads = true;
  bool unique_as_mutable = true;
  bool symbolic_alignment = true;
  bool check_foreign_alignment = false;
  std::uint64_t seed = 0;
  std::uint64_t address_seed = 0;
  std::uint64_t step_budget = 1'000'000;

  /// Applies the pairing rule between the two initialization modes.
  MachineConfig normalized() const;
  bool operator==(const MachineConfig&) const = default;
};

enum class Classification : std::uint8_t { Pass, Bug, Unsupported, Timeout };

const char* classification_name(Classification c);

struct Outcome {
  Classification cls = Classification::Pass;
  std::vector<Diagnostic> diagnostics;  // at most one: runs stop at the first
  std::vector<Diagnostic> leaks;
  std::uint64_t steps = 0;

  std::optional<DiagKind> kind() const {
    if (diagnostics.empty()) return std::nullopt;
    return diagnostics.front().kind;
  }
};

class Machine {
 public:
  Machine(const ScenarioProgram& prog, MachineConfig cfg);
  ~Machine();
  Machine(const Machine&) = delete;
  Machine& operator=(const Machine&) = delete;

  /// Executes one statement of one runnable thread. Returns false once the
  /// run has an outcome.
  bool step();
  Outcome run();

  bool finished() const { return outcome_.has_value(); }
  const std::optional<Outcome>& outcome() const { return outcome_; }
  const Memory& memory() const { return mem_; }
  const MachineConfig& config() const { return cfg_; }
  /// Thread id picked at every step.
  const std::vector<int>& schedule() const { return schedule_; }
  /// Threads created so far.
  std::size_t thread_count() const;
  /// Largest number of simultaneously runnable foreign threads seen.
  std::size_t max_runnable_foreign() const { return max_runnable_foreign_; }
  /// Protectors created and released so far.
  std::size_t protectors_created() const { return protectors_created_; }
  std::size_t protectors_released() const { return protectors_released_; }

  struct Thread;
  struct Frame;

 private:
  struct Local;
  struct PlaceRef;

  // Scheduling and threads.
  std::vector<int> runnable() const;
  int new_thread(Dialect d, std::optional<int> caller);
  void finish_thread(Thread& t, TypedValue result, const Site& site);
  void deliver(Thread& t, TypedValue v);
  void fail(int tid, UbError& e, const Site& site);
  std::vector<TraceFrame> trace(int tid) const;

  // Frames.
  void enter_host(Thread& t, const FnDef& fn, std::vector<ByteVec> args,
                  const Site& site);
  void enter_foreign(Thread& t, const FnDef& fn,
                     const std::vector<AbiValue>& args);
  void leave_frame(Thread& t, TypedValue result, const Site& site);

  // Host dialect.
  void exec_host(Thread& t, const Stmt& s, const Site& site);
  PlaceRef eval_place(Frame& f, const Place& p, const Site& site);
  TypedValue eval_operand(Frame& f, const Operand& op,
                          const TypeRef& expected, const Site& site);
  TypedValue eval_rvalue(Frame& f, const Rvalue& rv, const TypeRef& expected,
                         const std::string& label, const Site& site);
  ByteVec coerce(const TypedValue& v, const TypeRef& target,
                 const std::string& label, const Site& site);
  void declare_local(Frame& f, const std::string& name, const TypeRef& type,
                     const ByteVec* init, const Site& site);
  void start_call(Thread& t, const Rvalue& rv, const Site& site);

  // Foreign dialect.
  void exec_foreign(Thread& t, const Stmt& s, const Site& site);
  TypedValue eval_reg(Frame& f, const Operand& op, const TypeRef& expected,
                      const Site& site);
  PointerValue reg_pointer(Frame& f, const Operand& op, const Site& site);
  std::uint64_t reg_uint(Frame& f, const Operand& op, const Site& site);

  BoundaryHooks hooks(const Site& site);
  PointerValue decode_ptr(const ByteVec& bytes, const Site& site) const;
  bool compare(const TypedValue& a, const TypedValue& b, CmpOp op) const;

  const ScenarioProgram& prog_;
  MachineConfig cfg_;
  Memory mem_;
  std::mt19937_64 rng_;
  std::vector<std::unique_ptr<Thread>> threads_;
  std::map<std::string, PointerValue> statics_;
  std::optional<Outcome> outcome_;
  std::uint64_t steps_ = 0;
  std::vector<int> schedule_;
  std::size_t max_runnable_foreign_ = 0;
  std::size_t protectors_created_ = 0;
  std::size_t protectors_released_ = 0;
};

}  // namespace duet
