// SPDX-License-Identifier: Apache-2.0

#include "duet/machine.hpp"

#include <algorithm>
#include <deque>

#include <fmt/format.h>

namespace duet {

MachineConfig MachineConfig::normalized() const {
  MachineConfig c = *this;
  if (c.zero_init_foreign) c.permissive_foreign_loads = false;
  return c;
}

const char* classification_name(Classification c) {
  switch (c) {
    case Classification::Pass: return "pass";
    case Classification::Bug: return "bug";
    case Classification::Unsupported: return "unsupported";
    case Classification::Timeout: return "timeout";
  }
  return "?";
}

struct Machine::Local {
  std::string name;
  TypeRef type;
  PointerValue ptr;
  bool owns_box = false;
};

struct Machine::PlaceRef {
  PointerValue ptr;
  TypeRef type;
  Local* local = nullptr;  // set when the place is a whole local
};

namespace {

struct Pending {
  enum class Kind : std::uint8_t { None, Let, Assign, Discard };
  Kind kind = Kind::None;
  std::string name;
  TypeRef type;
  Place place;
  Site site;
};

[[noreturn]] void unsupported(const std::string& msg) {
  throw UbError(DiagKind::UnsupportedOperation, msg);
}

}  // namespace

struct Machine::Frame {
  const FnDef* fn = nullptr;
  Dialect dialect = Dialect::Host;
  std::size_t pc = 0;
  int line = 0;
  std::map<std::string, std::size_t> labels;
  // Host locals live in memory; shadowed entries stay for drop order.
  std::vector<Local> locals;
  std::map<std::string, std::size_t> names;
  // Foreign locals are registers.
  std::map<std::string, TypedValue> regs;
  std::vector<PointerValue> protectors;
  std::vector<AllocId> stack;
  Pending pending;
};

struct Machine::Thread {
  enum class Status : std::uint8_t { Runnable, Waiting, Finished };

  int id = 0;
  std::deque<Frame> frames;
  Status status = Status::Runnable;
  int waiting_on = -1;
  bool join_wait = false;
  // Set for threads created by a cross-language call.
  std::optional<int> caller;
  TypeRef def_ret;
  TypeRef caller_ret;
  Site call_site;
  TypedValue result;
};

namespace {

const TypeDesc& strip(const TypeEnv& env, const TypeRef& t) {
  const TypeDesc* d = &env.resolve(*t);
  while (const auto* c = std::get_if<CellType>(&d->node))
    d = &env.resolve(*c->inner);
  return *d;
}

bool is_scalar(const TypeEnv& env, const TypeRef& t) {
  const TypeDesc& d = strip(env, t);
  return d.is_int() || d.is_ptr();
}

std::uint64_t size_of(const TypeEnv& env, const TypeRef& t) {
  return layout_of(t, env).size;
}

TypeRef pointee_of(const TypeEnv& env, const TypeRef& t) {
  const TypeDesc& d = strip(env, t);
  if (const PtrType* p = d.as_ptr()) return p->pointee;
  return nullptr;
}

bool is_box(const TypeEnv& env, const TypeRef& t) {
  if (!t) return false;
  const TypeDesc& d = env.resolve(*t);
  return d.is_ptr() && d.as_ptr()->kind == PtrKind::Box;
}

TypeRef u64_type() { return int_type(64, false); }

}  // namespace

Machine::Machine(const ScenarioProgram& prog, MachineConfig cfg)
    : prog_(prog),
      cfg_(cfg.normalized()),
      mem_(MemoryConfig{cfg_.model, cfg_.strict_provenance,
                        cfg_.zero_init_foreign, cfg_.symbolic_alignment,
                        cfg_.check_foreign_alignment, cfg_.address_seed}),
      rng_(cfg_.seed) {
  const FnDef* entry = prog_.function(prog_.entry);
  Site site{Dialect::Host, prog_.entry, entry ? entry->line : 0,
            "fn " + prog_.entry};
  try {
    for (const StaticDef& s : prog_.statics) {
      Layout l = layout_of(s.type, prog_.types);
      Site ss{Dialect::Host, "", s.line, "static " + s.name};
      PointerValue p = mem_.allocate(l.size, l.align, Origin::Static, s.name, ss);
      ByteVec init = is_scalar(prog_.types, s.type)
                         ? encode_int(s.value, l.size)
                         : zero_bytes(l.size);
      mem_.write(p, init, 1, Dialect::Host, ss);
      statics_[s.name] = p;
    }
    if (entry == nullptr) unsupported("no entry function " + prog_.entry);
    int tid = new_thread(Dialect::Host, std::nullopt);
    enter_host(*threads_[tid], *entry, {}, site);
  } catch (UbError& e) {
    if (threads_.empty()) new_thread(Dialect::Host, std::nullopt);
    fail(0, e, site);
  } catch (LayoutError& e) {
    UbError u(DiagKind::UnsupportedOperation, e.what());
    if (threads_.empty()) new_thread(Dialect::Host, std::nullopt);
    fail(0, u, site);
  }
}

Machine::~Machine() = default;

std::size_t Machine::thread_count() const { return threads_.size(); }

int Machine::new_thread(Dialect d, std::optional<int> caller) {
  (void)d;
  auto t = std::make_unique<Thread>();
  t->id = static_cast<int>(threads_.size());
  t->caller = caller;
  threads_.push_back(std::move(t));
  return static_cast<int>(threads_.size()) - 1;
}

std::vector<int> Machine::runnable() const {
  std::vector<int> out;
  bool foreign_taken = false;
  for (const auto& t : threads_) {
    if (t->status != Thread::Status::Runnable || t->frames.empty()) continue;
    if (t->frames.back().dialect == Dialect::Foreign) {
      // One foreign thread at a time: foreign code is single-threaded.
      if (foreign_taken) continue;
      foreign_taken = true;
    }
    out.push_back(t->id);
  }
  return out;
}

std::vector<TraceFrame> Machine::trace(int tid) const {
  std::vector<TraceFrame> out;
  std::optional<int> cur = tid;
  while (cur) {
    const Thread& t = *threads_[*cur];
    for (auto it = t.frames.rbegin(); it != t.frames.rend(); ++it)
      out.push_back({it->dialect, it->fn->name, it->line});
    cur = t.caller;
  }
  return out;
}

void Machine::fail(int tid, UbError& e, const Site& site) {
  Diagnostic d = e.diagnostic();
  if (d.site.line == 0 && d.site.function.empty()) d.site = site;
  d.stack = trace(tid);
  for (const TraceFrame& f : d.stack)
    (f.dialect == Dialect::Host ? d.host_trace : d.foreign_trace).push_back(f);
  Outcome o;
  o.cls = d.kind == DiagKind::UnsupportedOperation ? Classification::Unsupported
                                                   : Classification::Bug;
  o.diagnostics.push_back(std::move(d));
  o.steps = steps_;
  outcome_ = std::move(o);
}

bool Machine::step() {
  if (outcome_) return false;
  if (steps_ >= cfg_.step_budget) {
    Outcome o;
    o.cls = Classification::Timeout;
    o.steps = steps_;
    outcome_ = std::move(o);
    return false;
  }
  std::vector<int> r = runnable();
  if (r.empty()) {
    UbError e(DiagKind::UnsupportedOperation,
              "every thread is blocked; the program cannot make progress");
    Site site;
    if (!threads_.front()->frames.empty()) {
      const Frame& f = threads_.front()->frames.back();
      site = Site{f.dialect, f.fn->name, f.line, ""};
      for (const Stmt& s : f.fn->body)
        if (s.line == f.line) site.text = s.text;
    }
    fail(0, e, site);
    return false;
  }
  std::size_t foreign = 0;
  for (int id : r)
    if (threads_[id]->frames.back().dialect == Dialect::Foreign) ++foreign;
  max_runnable_foreign_ = std::max(max_runnable_foreign_, foreign);

  const int tid = r[rng_() % r.size()];
  schedule_.push_back(tid);
  ++steps_;
  Thread& t = *threads_[tid];
  Frame& f = t.frames.back();
  Site site{f.dialect, f.fn->name, f.fn->line, ""};
  try {
    if (f.pc >= f.fn->body.size()) {
      // Falling off the end returns unit.
      if (!f.fn->body.empty()) site.line = f.fn->body.back().line;
      leave_frame(t, TypedValue{unit_type(), {}}, site);
    } else {
      const Stmt& s = f.fn->body[f.pc];
      site.line = s.line;
      site.text = s.text;
      f.line = s.line;
      if (f.dialect == Dialect::Host)
        exec_host(t, s, site);
      else
        exec_foreign(t, s, site);
    }
  } catch (UbError& e) {
    fail(tid, e, site);
  } catch (LayoutError& e) {
    UbError u(DiagKind::UnsupportedOperation, e.what());
    fail(tid, u, site);
  }
  return !outcome_;
}

Outcome Machine::run() {
  while (step()) {
  }
  return *outcome_;
}

BoundaryHooks Machine::hooks(const Site& site) {
  BoundaryHooks h;
  h.expose = [this](const ByteVec& b) { mem_.expose(mem_.decode(b)); };
  h.from_int = [this, site](const ByteVec& b) {
    return mem_.encode(mem_.from_exposed(decode_uint(b), site));
  };
  return h;
}

PointerValue Machine::decode_ptr(const ByteVec& bytes, const Site& site) const {
  (void)site;
  return mem_.decode(bytes);
}

// Frames ---------------------------------------------------------------------

void Machine::enter_host(Thread& t, const FnDef& fn, std::vector<ByteVec> args,
                         const Site& site) {
  (void)site;
  t.frames.emplace_back();
  Frame& f = t.frames.back();
  f.fn = &fn;
  f.dialect = Dialect::Host;
  f.line = fn.line;
  f.labels = fn.labels();
  const TypeEnv& env = prog_.types;
  Site entry{Dialect::Host, fn.name, fn.line, "fn " + fn.name};
  for (std::size_t i = 0; i < fn.params.size(); ++i) {
    const Param& p = fn.params[i];
    ByteVec bytes = i < args.size() ? args[i] : uninit_bytes(size_of(env, p.type));
    const TypeDesc& d = env.resolve(*p.type);
    if (d.is_ptr() && is_reference(d.as_ptr()->kind) && all_init(bytes)) {
      PointerValue q = mem_.decode(bytes);
      if (q.alloc) {
        Layout l = layout_of(d.as_ptr()->pointee, env);
        RetagKind k = d.as_ptr()->kind == PtrKind::MutRef ? RetagKind::MutableRef
                                                           : RetagKind::SharedRef;
        PointerValue q2 =
            mem_.retag(q, l.size, k, l.cell_ranges, true, p.name, entry);
        if (q2.prov != q.prov) {
          f.protectors.push_back(q2);
          ++protectors_created_;
        }
        if (cfg_.model == Model::TreeBorrows && l.size > 0)
          mem_.read(q2, l.size, 1, Dialect::Host, entry);
        bytes = mem_.encode(q2);
      }
    }
    declare_local(f, p.name, p.type, &bytes, entry);
  }
}

void Machine::enter_foreign(Thread& t, const FnDef& fn,
                            const std::vector<AbiValue>& args) {
  t.frames.emplace_back();
  Frame& f = t.frames.back();
  f.fn = &fn;
  f.dialect = Dialect::Foreign;
  f.line = fn.line;
  f.labels = fn.labels();
  for (std::size_t i = 0; i < fn.params.size() && i < args.size(); ++i)
    f.regs[fn.params[i].name] = TypedValue{fn.params[i].type, args[i].bytes};
}

void Machine::leave_frame(Thread& t, TypedValue result, const Site& site) {
  Frame& f = t.frames.back();
  if (f.dialect == Dialect::Host) {
    for (auto it = f.locals.rbegin(); it != f.locals.rend(); ++it) {
      if (!it->owns_box) continue;
      it->owns_box = false;
      ByteVec b = mem_.read(it->ptr, kPointerSize, 1, Dialect::Host, site);
      if (!all_init(b)) continue;
      mem_.deallocate(mem_.decode(b), Allocator::Host, site);
    }
  }
  for (const PointerValue& p : f.protectors) {
    mem_.protector_end(p);
    ++protectors_released_;
  }
  f.protectors.clear();
  for (AllocId id : f.stack) mem_.release(id);
  t.frames.pop_back();
  if (t.frames.empty())
    finish_thread(t, std::move(result), site);
  else
    deliver(t, std::move(result));
}

void Machine::finish_thread(Thread& t, TypedValue result, const Site& site) {
  (void)site;
  t.status = Thread::Status::Finished;
  t.result = result;
  for (auto& w : threads_) {
    if (w->status == Thread::Status::Waiting && w->join_wait &&
        w->waiting_on == t.id) {
      w->status = Thread::Status::Runnable;
      w->join_wait = false;
      w->waiting_on = -1;
    }
  }
  if (t.caller) {
    Thread& c = *threads_[*t.caller];
    try {
      AbiValue v = to_abi(t.def_ret ? t.def_ret : unit_type(), result.bytes,
                          prog_.types);
      TypedValue raised = raise_return(v, t.def_ret, t.caller_ret, prog_.types,
                                       hooks(t.call_site));
      c.status = Thread::Status::Runnable;
      c.waiting_on = -1;
      deliver(c, std::move(raised));
    } catch (UbError& e) {
      fail(c.id, e, t.call_site);
    }
    return;
  }
  if (t.id == 0 && !outcome_) {
    Outcome o;
    o.cls = Classification::Pass;
    o.leaks = mem_.leak_report();
    o.steps = steps_;
    outcome_ = std::move(o);
  }
}

void Machine::deliver(Thread& t, TypedValue v) {
  Frame& f = t.frames.back();
  Pending p = std::move(f.pending);
  f.pending = Pending{};
  const TypeEnv& env = prog_.types;
  switch (p.kind) {
    case Pending::Kind::None:
    case Pending::Kind::Discard:
      return;
    case Pending::Kind::Let:
      if (f.dialect == Dialect::Foreign) {
        if (v.bytes.size() != size_of(env, p.type))
          unsupported(fmt::format("call result of {} bytes assigned to {}",
                                  v.bytes.size(), render_type(p.type)));
        f.regs[p.name] = TypedValue{p.type, std::move(v.bytes)};
        return;
      } else {
        ByteVec bytes = coerce(v, p.type, p.name, p.site);
        if (is_scalar(env, p.type) && !all_init(bytes))
          throw UbError(DiagKind::UninitializedRead,
                        fmt::format("call result of type {} is uninitialized",
                                    render_type(p.type)));
        declare_local(f, p.name, p.type, &bytes, p.site);
        return;
      }
    case Pending::Kind::Assign: {
      PlaceRef pr = eval_place(f, p.place, p.site);
      ByteVec bytes = coerce(v, pr.type, render_place(p.place), p.site);
      mem_.write_typed(pr.ptr, pr.type, env, bytes, Dialect::Host, p.site);
      if (pr.local && is_box(env, pr.type)) pr.local->owns_box = true;
      return;
    }
  }
}

// Host dialect ---------------------------------------------------------------

void Machine::declare_local(Frame& f, const std::string& name,
                            const TypeRef& type, const ByteVec* init,
                            const Site& site) {
  Layout l = layout_of(type, prog_.types);
  PointerValue p =
      mem_.allocate(l.size, l.align, Origin::HostStack, name, site);
  f.stack.push_back(*p.alloc);
  if (init != nullptr)
    mem_.write_typed(p, type, prog_.types, *init, Dialect::Host, site);
  Local loc{name, type, p, false};
  if (init != nullptr && is_box(prog_.types, type) && all_init(*init))
    loc.owns_box = true;
  f.names[name] = f.locals.size();
  f.locals.push_back(std::move(loc));
}

Machine::PlaceRef Machine::eval_place(Frame& f, const Place& place,
                                      const Site& site) {
  const TypeEnv& env = prog_.types;
  PlaceRef out;
  if (auto it = f.names.find(place.root); it != f.names.end()) {
    Local& l = f.locals[it->second];
    out.ptr = l.ptr;
    out.type = l.type;
    if (place.projs.empty()) out.local = &l;
  } else if (auto st = statics_.find(place.root); st != statics_.end()) {
    out.ptr = st->second;
    out.type = prog_.static_def(place.root)->type;
  } else {
    unsupported("unknown place " + place.root);
  }
  for (const Proj& pj : place.projs) {
    const TypeDesc& d = env.resolve(*out.type);
    switch (pj.kind) {
      case Proj::Kind::Deref: {
        const PtrType* pt = d.as_ptr();
        if (pt == nullptr)
          unsupported("dereferencing non-pointer " + render_type(out.type));
        ByteVec b = mem_.read_typed(out.ptr, out.type, env, Dialect::Host,
                                    true, site);
        PointerValue q = decode_ptr(b, site);
        out.type = pt->pointee ? pt->pointee : type_opaque_pointer(q, mem_);
        out.ptr = q;
        break;
      }
      case Proj::Kind::Field: {
        const auto* st = std::get_if<StructType>(&d.node);
        if (st == nullptr)
          unsupported("field access on " + render_type(out.type));
        Layout l = layout_of(d, env);
        std::size_t k = 0;
        while (k < st->fields.size() && st->fields[k].name != pj.field) ++k;
        if (k == st->fields.size())
          unsupported(fmt::format("{} has no field {}", st->name, pj.field));
        out.ptr.offset += static_cast<std::int64_t>(l.field_offsets[k]);
        out.type = st->fields[k].type;
        break;
      }
      case Proj::Kind::Index: {
        const auto* at = std::get_if<ArrayType>(&d.node);
        if (at == nullptr)
          unsupported("indexing non-array " + render_type(out.type));
        if (pj.index >= at->count)
          throw UbError(DiagKind::AccessOutOfBounds,
                        fmt::format("index {} is out of bounds of {}",
                                    pj.index, render_type(out.type)));
        out.ptr.offset +=
            static_cast<std::int64_t>(pj.index * size_of(env, at->elem));
        out.type = at->elem;
        break;
      }
    }
  }
  return out;
}

TypedValue Machine::eval_operand(Frame& f, const Operand& op,
                                 const TypeRef& expected, const Site& site) {
  const TypeEnv& env = prog_.types;
  if (op.kind == Operand::Kind::Int) {
    if (expected) {
      const TypeDesc& d = strip(env, expected);
      if (d.is_ptr() || d.is_int())
        return TypedValue{expected,
                          encode_int(op.value, size_of(env, expected))};
    }
    return TypedValue{int_type(64), encode_int(op.value, 8)};
  }
  PlaceRef pr = eval_place(f, op.place, site);
  ByteVec b = mem_.read_typed(pr.ptr, pr.type, env, Dialect::Host,
                              is_scalar(env, pr.type), site);
  if (pr.local && is_box(env, pr.type)) pr.local->owns_box = false;
  return TypedValue{pr.type, std::move(b)};
}

ByteVec Machine::coerce(const TypedValue& v, const TypeRef& target,
                        const std::string& label, const Site& site) {
  const TypeEnv& env = prog_.types;
  if (!target || !v.type || type_eq(v.type, target)) return v.bytes;
  const TypeDesc& from = strip(env, v.type);
  const TypeDesc& to = strip(env, target);
  // Pointer casts keep the tag; only borrows and function entry retag.
  (void)label;
  if (from.is_ptr() && to.is_ptr()) return v.bytes;
  if (from.is_ptr() && to.is_int() && size_of(env, target) == kPointerSize) {
    std::uint64_t addr = mem_.expose(decode_ptr(v.bytes, site));
    return encode_int(addr, kPointerSize);
  }
  if (from.is_int() && to.is_ptr() && v.bytes.size() == kPointerSize) {
    if (!all_init(v.bytes)) return v.bytes;
    return mem_.encode(mem_.from_exposed(decode_uint(v.bytes), site));
  }
  if (from.is_int() && to.is_int() && v.bytes.size() == size_of(env, target))
    return v.bytes;
  if (from.is_unit() && to.is_unit()) return {};
  if (!from.is_int() && !from.is_ptr() && !to.is_int() && !to.is_ptr() &&
      v.bytes.size() == size_of(env, target) && from == to)
    return v.bytes;
  unsupported(fmt::format("mismatched types: {} used as {}",
                          render_type(v.type), render_type(target)));
}

TypedValue Machine::eval_rvalue(Frame& f, const Rvalue& rv,
                                const TypeRef& expected,
                                const std::string& label, const Site& site) {
  const TypeEnv& env = prog_.types;
  using K = Rvalue::Kind;
  switch (rv.kind) {
    case K::Uninit:
      return TypedValue{expected, uninit_bytes(size_of(env, expected))};
    case K::Zeroed:
      return TypedValue{expected, zero_bytes(size_of(env, expected))};
    case K::Use:
      return eval_operand(f, rv.ops.at(0), expected, site);
    case K::Borrow: {
      PlaceRef pr = eval_place(f, rv.place, site);
      Layout l = layout_of(pr.type, env);
      PointerValue p = mem_.retag(
          pr.ptr, l.size, rv.is_mut ? RetagKind::MutableRef : RetagKind::SharedRef,
          l.cell_ranges, false, label, site);
      return TypedValue{
          ptr_type(rv.is_mut ? PtrKind::MutRef : PtrKind::SharedRef, pr.type),
          mem_.encode(p)};
    }
    case K::AddrOf: {
      PlaceRef pr = eval_place(f, rv.place, site);
      return TypedValue{
          ptr_type(rv.is_mut ? PtrKind::RawMut : PtrKind::RawConst, pr.type),
          mem_.encode(pr.ptr)};
    }
    case K::Cast: {
      const Operand& op = rv.ops.at(0);
      if (op.kind == Operand::Kind::Int)
        return eval_operand(f, op, rv.type, site);
      TypedValue v = eval_operand(f, op, nullptr, site);
      const TypeDesc& from = strip(env, v.type);
      const TypeDesc& to = strip(env, rv.type);
      if (from.is_int() && to.is_int()) {
        std::uint64_t x = from.as_int()->is_signed
                              ? static_cast<std::uint64_t>(decode_sint(v.bytes))
                              : decode_uint(v.bytes);
        return TypedValue{rv.type, encode_int(x, size_of(env, rv.type))};
      }
      if (from.is_ptr() && to.is_int()) {
        std::uint64_t addr = mem_.expose(decode_ptr(v.bytes, site));
        return TypedValue{rv.type, encode_int(addr, size_of(env, rv.type))};
      }
      if (from.is_int() && to.is_ptr()) {
        PointerValue p = mem_.from_exposed(decode_uint(v.bytes), site);
        return TypedValue{rv.type, mem_.encode(p)};
      }
      if (from.is_ptr() && to.is_ptr())
        return TypedValue{rv.type, coerce(v, rv.type, label, site)};
      unsupported(fmt::format("cannot cast {} to {}", render_type(v.type),
                              render_type(rv.type)));
    }
    case K::Offset: {
      TypedValue v = eval_operand(f, rv.ops.at(0), nullptr, site);
      TypedValue n = eval_operand(f, rv.ops.at(1), int_type(64), site);
      TypeRef pointee = pointee_of(env, v.type);
      if (!strip(env, v.type).is_ptr())
        unsupported("offset of non-pointer " + render_type(v.type));
      std::uint64_t el = pointee ? size_of(env, pointee) : 1;
      PointerValue p = decode_ptr(v.bytes, site);
      p.offset += decode_sint(n.bytes) * static_cast<std::int64_t>(el);
      return TypedValue{v.type, mem_.encode(p)};
    }
    case K::CellGet: {
      PlaceRef pr = eval_place(f, rv.place, site);
      const auto* c = std::get_if<CellType>(&env.resolve(*pr.type).node);
      if (c == nullptr) unsupported("cell_get on " + render_type(pr.type));
      return TypedValue{ptr_type(PtrKind::RawMut, c->inner),
                        mem_.encode(pr.ptr)};
    }
    case K::BoxNew: {
      if (!is_box(env, expected))
        unsupported("box_new needs a declared box type");
      TypeRef inner = env.resolve(*expected).as_ptr()->pointee;
      Layout l = layout_of(inner, env);
      PointerValue p =
          mem_.allocate(l.size, l.align, Origin::HostHeap, "box", site);
      if (cfg_.unique_as_mutable)
        p = mem_.retag(p, l.size, RetagKind::MutableRef, l.cell_ranges, false,
                       label, site);
      if (rv.init == K::Zeroed) {
        mem_.write(p, zero_bytes(l.size), l.align, Dialect::Host, site);
      } else if (rv.init == K::Use) {
        TypedValue v = eval_operand(f, rv.ops.at(0), inner, site);
        mem_.write_typed(p, inner, env, coerce(v, inner, label, site),
                         Dialect::Host, site);
      }
      return TypedValue{expected, mem_.encode(p)};
    }
    case K::IntoRaw: {
      TypedValue v = eval_operand(f, rv.ops.at(0), nullptr, site);
      TypeRef t = expected ? expected
                           : ptr_type(PtrKind::RawMut, pointee_of(env, v.type));
      return TypedValue{t, v.bytes};
    }
    case K::FromRaw: {
      TypedValue v = eval_operand(f, rv.ops.at(0), nullptr, site);
      TypeRef t = is_box(env, expected)
                      ? expected
                      : ptr_type(PtrKind::Box, pointee_of(env, v.type));
      return TypedValue{t, v.bytes};
    }
    case K::Alloc: {
      TypedValue n = eval_operand(f, rv.ops.at(0), u64_type(), site);
      TypedValue a = eval_operand(f, rv.ops.at(1), u64_type(), site);
      PointerValue p = mem_.allocate(decode_uint(n.bytes), decode_uint(a.bytes),
                                     Origin::HostHeap, label, site);
      TypeRef t = expected ? expected : ptr_type(PtrKind::RawMut, int_type(8, false));
      return TypedValue{t, mem_.encode(p)};
    }
    case K::Expose: {
      TypedValue v = eval_operand(f, rv.ops.at(0), nullptr, site);
      std::uint64_t addr = mem_.expose(decode_ptr(v.bytes, site));
      TypeRef t = expected ? expected : u64_type();
      return TypedValue{t, encode_int(addr, size_of(env, t))};
    }
    case K::FromExposed: {
      TypedValue v = eval_operand(f, rv.ops.at(0), u64_type(), site);
      PointerValue p = mem_.from_exposed(decode_uint(v.bytes), site);
      TypeRef t = expected ? expected : ptr_type(PtrKind::RawMut, int_type(8, false));
      return TypedValue{t, mem_.encode(p)};
    }
    case K::Binary: {
      TypedValue a = eval_operand(f, rv.ops.at(0), expected, site);
      const bool ptr = strip(env, a.type).is_ptr();
      TypedValue b = eval_operand(f, rv.ops.at(1), ptr ? int_type(64) : a.type,
                                  site);
      std::int64_t delta = decode_sint(b.bytes);
      if (rv.binop == BinOp::Sub) delta = -delta;
      if (ptr) {
        PointerValue p = decode_ptr(a.bytes, site);
        p.offset += delta;
        return TypedValue{a.type, mem_.encode(p)};
      }
      std::uint64_t x = decode_uint(a.bytes) + static_cast<std::uint64_t>(delta);
      return TypedValue{a.type, encode_int(x, a.bytes.size())};
    }
    case K::Global: {
      auto it = statics_.find(rv.name);
      if (it == statics_.end()) unsupported("unknown static " + rv.name);
      return TypedValue{
          ptr_type(PtrKind::RawMut, prog_.static_def(rv.name)->type),
          mem_.encode(it->second)};
    }
    default:
      break;
  }
  unsupported("rvalue not allowed in host code: " + render_rvalue(rv));
}

bool Machine::compare(const TypedValue& a, const TypedValue& b,
                      CmpOp op) const {
  const TypeDesc& d = strip(prog_.types, a.type);
  int c = 0;
  if (d.is_int() && d.as_int()->is_signed) {
    std::int64_t x = decode_sint(a.bytes);
    std::int64_t y = decode_sint(b.bytes);
    c = x < y ? -1 : (x > y ? 1 : 0);
  } else {
    std::uint64_t x = decode_uint(a.bytes);
    std::uint64_t y = decode_uint(b.bytes);
    c = x < y ? -1 : (x > y ? 1 : 0);
  }
  switch (op) {
    case CmpOp::Eq: return c == 0;
    case CmpOp::Ne: return c != 0;
    case CmpOp::Lt: return c < 0;
    case CmpOp::Le: return c <= 0;
    case CmpOp::Gt: return c > 0;
    case CmpOp::Ge: return c >= 0;
  }
  return false;
}

namespace {

bool is_call(const std::optional<Rvalue>& rv) {
  return rv && (rv->kind == Rvalue::Kind::Call ||
                rv->kind == Rvalue::Kind::Spawn ||
                rv->kind == Rvalue::Kind::Join);
}

}  // namespace

void Machine::exec_host(Thread& t, const Stmt& s, const Site& site) {
  Frame& f = t.frames.back();
  const TypeEnv& env = prog_.types;
  ++f.pc;
  using K = Stmt::Kind;
  auto pair = [&](const Operand& x, const Operand& y) {
    if (x.kind == Operand::Kind::Place) {
      TypedValue a = eval_operand(f, x, nullptr, site);
      TypedValue b = eval_operand(f, y, a.type, site);
      return std::pair{a, b};
    }
    TypedValue b = eval_operand(f, y, nullptr, site);
    TypedValue a = eval_operand(f, x, b.type, site);
    return std::pair{a, b};
  };
  switch (s.kind) {
    case K::Let: {
      if (is_call(s.rv)) {
        f.pending = Pending{Pending::Kind::Let, s.name, s.type, {}, site};
        start_call(t, *s.rv, site);
        return;
      }
      if (!s.rv || s.rv->kind == Rvalue::Kind::Uninit) {
        declare_local(f, s.name, s.type, nullptr, site);
        return;
      }
      TypedValue v = eval_rvalue(f, *s.rv, s.type, s.name, site);
      ByteVec bytes = coerce(v, s.type, s.name, site);
      declare_local(f, s.name, s.type, &bytes, site);
      return;
    }
    case K::Assign: {
      if (is_call(s.rv)) {
        f.pending = Pending{Pending::Kind::Assign, "", nullptr, s.place, site};
        start_call(t, *s.rv, site);
        return;
      }
      PlaceRef pr = eval_place(f, s.place, site);
      const std::string label = render_place(s.place);
      TypedValue v = eval_rvalue(f, *s.rv, pr.type, label, site);
      ByteVec bytes = coerce(v, pr.type, label, site);
      mem_.write_typed(pr.ptr, pr.type, env, bytes, Dialect::Host, site);
      if (pr.local && is_box(env, pr.type)) pr.local->owns_box = true;
      return;
    }
    case K::Eval:
      f.pending = Pending{Pending::Kind::Discard, "", nullptr, {}, site};
      start_call(t, *s.rv, site);
      return;
    case K::Dealloc: {
      TypedValue v = eval_operand(f, s.ops.at(0), nullptr, site);
      mem_.deallocate(decode_ptr(v.bytes, site), Allocator::Host, site);
      return;
    }
    case K::Drop: {
      PlaceRef pr = eval_place(f, s.place, site);
      if (!is_box(env, pr.type)) unsupported("drop of non-box " + render_type(pr.type));
      ByteVec b = mem_.read_typed(pr.ptr, pr.type, env, Dialect::Host, true, site);
      if (pr.local) pr.local->owns_box = false;
      mem_.deallocate(decode_ptr(b, site), Allocator::Host, site);
      return;
    }
    case K::Leak: {
      TypedValue v = eval_operand(f, s.ops.at(0), nullptr, site);
      mem_.mark_leak_ok(decode_ptr(v.bytes, site));
      return;
    }
    case K::AssumeInit: {
      PlaceRef pr = eval_place(f, s.place, site);
      mem_.read_typed(pr.ptr, pr.type, env, Dialect::Host, true, site);
      return;
    }
    case K::Return: {
      TypeRef ret = f.fn->ret ? f.fn->ret : unit_type();
      TypedValue v{unit_type(), {}};
      if (!s.ops.empty()) {
        v = eval_operand(f, s.ops[0], ret, site);
        v.bytes = coerce(v, ret, "return", site);
        v.type = ret;
      }
      leave_frame(t, std::move(v), site);
      return;
    }
    case K::AssertEq: {
      auto [a, b] = pair(s.ops.at(0), s.ops.at(1));
      if (!compare(a, b, CmpOp::Eq))
        throw UbError(DiagKind::AssertionFailed,
                      fmt::format("assertion failed: {} != {}",
                                  decode_sint(a.bytes), decode_sint(b.bytes)));
      return;
    }
    case K::Label:
      return;
    case K::Goto:
      f.pc = f.labels.at(s.name);
      return;
    case K::If: {
      auto [a, b] = pair(s.ops.at(0), s.ops.at(1));
      if (compare(a, b, s.cmp)) f.pc = f.labels.at(s.name);
      return;
    }
    default:
      break;
  }
  unsupported("statement not allowed in host code: " + render_stmt(s));
}

void Machine::start_call(Thread& t, const Rvalue& rv, const Site& site) {
  Frame& f = t.frames.back();
  const TypeEnv& env = prog_.types;
  const bool host = f.dialect == Dialect::Host;

  if (rv.kind == Rvalue::Kind::Join) {
    std::uint64_t id = host ? decode_uint(eval_operand(f, rv.ops.at(0),
                                                       u64_type(), site).bytes)
                            : reg_uint(f, rv.ops.at(0), site);
    if (id >= threads_.size() || static_cast<int>(id) == t.id)
      unsupported(fmt::format("join of unknown thread {}", id));
    Thread& other = *threads_[id];
    if (other.status == Thread::Status::Finished) {
      deliver(t, other.result);
      return;
    }
    --f.pc;  // retry once the thread finishes
    t.status = Thread::Status::Waiting;
    t.join_wait = true;
    t.waiting_on = static_cast<int>(id);
    return;
  }

  const FnDef* fn = prog_.function(rv.name);
  const Binding* b = host ? prog_.binding(rv.name) : nullptr;
  if (fn == nullptr && b == nullptr) unsupported("unknown function " + rv.name);

  if (host && fn != nullptr && fn->dialect == Dialect::Host) {
    std::vector<ByteVec> args;
    for (std::size_t i = 0; i < rv.ops.size(); ++i) {
      const TypeRef& pt = fn->params.at(i).type;
      TypedValue v = eval_operand(f, rv.ops[i], pt, site);
      args.push_back(coerce(v, pt, fn->params[i].name, site));
    }
    if (rv.kind == Rvalue::Kind::Spawn) {
      int nt = new_thread(Dialect::Host, std::nullopt);
      enter_host(*threads_[nt], *fn, std::move(args), site);
      deliver(t, TypedValue{u64_type(), encode_int(nt, 8)});
      return;
    }
    enter_host(t, *fn, std::move(args), site);
    return;
  }
  if (rv.kind == Rvalue::Kind::Spawn)
    unsupported("spawning threads in foreign code is not modeled");

  if (host) {
    if (b == nullptr) unsupported(rv.name + " has no binding");
    const FnDef* def = prog_.function(b->target);
    if (def == nullptr) unsupported("binding target " + b->target + " is undefined");
    std::vector<TypedValue> args;
    for (std::size_t i = 0; i < rv.ops.size(); ++i) {
      TypeRef pt = i < b->params.size() ? b->params[i] : nullptr;
      TypedValue v = eval_operand(f, rv.ops[i], pt, site);
      if (pt) v = TypedValue{pt, coerce(v, pt, def->params.size() > i
                                                   ? def->params[i].name
                                                   : "arg",
                                        site)};
      args.push_back(std::move(v));
    }
    std::vector<TypeRef> ptypes;
    for (const Param& p : def->params) ptypes.push_back(p.type);
    std::vector<AbiValue> abi =
        lower_call(args, Signature{ptypes, def->ret, def->variadic}, env,
                   hooks(site));
    int nt = new_thread(Dialect::Foreign, t.id);
    Thread& callee = *threads_[nt];
    callee.def_ret = def->ret;
    callee.caller_ret = b->ret;
    callee.call_site = site;
    enter_foreign(callee, *def, abi);
    t.status = Thread::Status::Waiting;
    t.waiting_on = nt;
    t.join_wait = false;
    return;
  }

  // Foreign caller.
  std::vector<TypedValue> args;
  for (std::size_t i = 0; i < rv.ops.size(); ++i) {
    TypeRef pt = i < fn->params.size() ? fn->params[i].type : nullptr;
    TypedValue v = eval_reg(f, rv.ops[i], nullptr, site);
    if (rv.ops[i].kind == Operand::Kind::Int && pt) v = eval_reg(f, rv.ops[i], pt, site);
    args.push_back(std::move(v));
  }
  std::vector<TypeRef> ptypes;
  for (const Param& p : fn->params) ptypes.push_back(p.type);
  std::vector<AbiValue> abi = lower_call(
      args, Signature{ptypes, fn->ret, fn->variadic}, env, hooks(site));
  if (fn->dialect == Dialect::Foreign) {
    enter_foreign(t, *fn, abi);
    return;
  }
  // Callback into host code.
  int nt = new_thread(Dialect::Host, t.id);
  Thread& callee = *threads_[nt];
  callee.def_ret = fn->ret;
  callee.caller_ret =
      f.pending.kind == Pending::Kind::Let ? f.pending.type : fn->ret;
  callee.call_site = site;
  std::vector<ByteVec> bytes;
  for (const AbiValue& a : abi) bytes.push_back(a.bytes);
  t.status = Thread::Status::Waiting;
  t.waiting_on = nt;
  t.join_wait = false;
  enter_host(callee, *fn, std::move(bytes), site);
}

// Foreign dialect ------------------------------------------------------------

TypedValue Machine::eval_reg(Frame& f, const Operand& op,
                             const TypeRef& expected, const Site& site) {
  (void)site;
  const TypeEnv& env = prog_.types;
  if (op.kind == Operand::Kind::Int) {
    TypeRef t = expected ? expected : int_type(64);
    return TypedValue{t, encode_int(op.value, size_of(env, t))};
  }
  if (!op.place.projs.empty())
    unsupported("foreign operands must be locals: " + render_operand(op));
  auto it = f.regs.find(op.place.root);
  if (it == f.regs.end()) {
    if (auto st = statics_.find(op.place.root); st != statics_.end())
      return TypedValue{opaque_ptr(), mem_.encode(st->second)};
    unsupported("unknown local " + op.place.root);
  }
  if (expected && it->second.bytes.size() != size_of(env, expected))
    unsupported(fmt::format("{} has type {} but {} is required",
                            op.place.root, render_type(it->second.type),
                            render_type(expected)));
  return TypedValue{expected ? expected : it->second.type, it->second.bytes};
}

PointerValue Machine::reg_pointer(Frame& f, const Operand& op,
                                  const Site& site) {
  TypedValue v = eval_reg(f, op, nullptr, site);
  if (v.bytes.size() != kPointerSize)
    unsupported(render_operand(op) + " is not pointer-sized");
  if (!all_init(v.bytes))
    throw UbError(DiagKind::UninitializedRead,
                  fmt::format("{} is undefined and used as a pointer",
                              render_operand(op)));
  return mem_.decode(v.bytes);
}

std::uint64_t Machine::reg_uint(Frame& f, const Operand& op,
                                const Site& site) {
  TypedValue v = eval_reg(f, op, nullptr, site);
  if (!all_init(v.bytes))
    throw UbError(DiagKind::UninitializedRead,
                  fmt::format("{} is undefined", render_operand(op)));
  return decode_uint(v.bytes);
}

void Machine::exec_foreign(Thread& t, const Stmt& s, const Site& site) {
  Frame& f = t.frames.back();
  const TypeEnv& env = prog_.types;
  ++f.pc;
  using K = Stmt::Kind;
  using R = Rvalue::Kind;
  auto defined = [&](const Operand& op, const TypeRef& expected) {
    TypedValue v = eval_reg(f, op, expected, site);
    if (!all_init(v.bytes))
      throw UbError(DiagKind::UninitializedRead,
                    fmt::format("branch on undefined value {}",
                                render_operand(op)));
    return v;
  };
  switch (s.kind) {
    case K::Let:
    case K::Assign: {
      const std::string name = s.kind == K::Let ? s.name : s.place.root;
      TypeRef type = s.type;
      if (s.kind == K::Assign) {
        auto it = f.regs.find(name);
        if (it == f.regs.end() || !s.place.projs.empty())
          unsupported("foreign assignment needs a local: " + render_place(s.place));
        type = it->second.type;
      }
      if (is_call(s.rv)) {
        f.pending = Pending{Pending::Kind::Let, name, type, {}, site};
        start_call(t, *s.rv, site);
        return;
      }
      const Rvalue& rv = *s.rv;
      const std::uint64_t sz = size_of(env, type);
      ByteVec out;
      switch (rv.kind) {
        case R::Uninit: out = uninit_bytes(sz); break;
        case R::Zeroed: out = zero_bytes(sz); break;
        case R::Use: out = eval_reg(f, rv.ops.at(0), type, site).bytes; break;
        case R::Load: {
          PointerValue p = reg_pointer(f, rv.ops.at(0), site);
          Layout l = layout_of(type, env);
          out = mem_.read(p, l.size, l.align, Dialect::Foreign, site);
          if (!cfg_.permissive_foreign_loads)
            mem_.check_init(p, type, env, site);
          break;
        }
        case R::Malloc: {
          std::uint64_t n = reg_uint(f, rv.ops.at(0), site);
          out = mem_.encode(mem_.allocate(n, 16, Origin::ForeignHeap, "malloc", site));
          break;
        }
        case R::Alloca: {
          std::uint64_t n = reg_uint(f, rv.ops.at(0), site);
          PointerValue p = mem_.allocate(n, 16, Origin::ForeignStack, name, site);
          f.stack.push_back(*p.alloc);
          out = mem_.encode(p);
          break;
        }
        case R::Gep:
        case R::Binary: {
          TypedValue a = eval_reg(f, rv.ops.at(0), nullptr, site);
          TypedValue b = eval_reg(f, rv.ops.at(1), nullptr, site);
          if (!all_init(a.bytes) || !all_init(b.bytes)) {
            out = uninit_bytes(sz);  // undef propagates
            break;
          }
          std::int64_t delta = decode_sint(b.bytes);
          if (rv.kind == R::Binary && rv.binop == BinOp::Sub) delta = -delta;
          if (rv.kind == R::Gep || strip(env, a.type).is_ptr()) {
            PointerValue p = mem_.decode(a.bytes);
            p.offset += delta;
            out = mem_.encode(p);
          } else {
            out = encode_int(decode_uint(a.bytes) + static_cast<std::uint64_t>(delta), sz);
          }
          break;
        }
        case R::Global: {
          auto it = statics_.find(rv.name);
          if (it == statics_.end()) unsupported("unknown static " + rv.name);
          out = mem_.encode(it->second);
          break;
        }
        case R::Cast: {
          TypedValue v = eval_reg(f, rv.ops.at(0), nullptr, site);
          const TypeDesc& from = strip(env, v.type);
          const TypeDesc& to = strip(env, rv.type);
          if (!all_init(v.bytes)) {
            out = uninit_bytes(sz);
          } else if (from.is_ptr() && to.is_int()) {
            out = encode_int(mem_.expose(mem_.decode(v.bytes)), sz);
          } else if (from.is_int() && to.is_ptr()) {
            out = mem_.encode(mem_.from_exposed(decode_uint(v.bytes), site));
          } else if (from.is_int() && to.is_int()) {
            std::uint64_t x = from.as_int()->is_signed
                                  ? static_cast<std::uint64_t>(decode_sint(v.bytes))
                                  : decode_uint(v.bytes);
            out = encode_int(x, sz);
          } else {
            out = v.bytes;
          }
          break;
        }
        default:
          unsupported("rvalue not allowed in foreign code: " + render_rvalue(rv));
      }
      if (out.size() != sz)
        unsupported(fmt::format("value of {} bytes assigned to {} of type {}",
                                out.size(), name, render_type(type)));
      f.regs[name] = TypedValue{type, std::move(out)};
      return;
    }
    case K::Eval:
      f.pending = Pending{Pending::Kind::Discard, "", nullptr, {}, site};
      start_call(t, *s.rv, site);
      return;
    case K::Store: {
      PointerValue p = reg_pointer(f, s.ops.at(0), site);
      Layout l = layout_of(s.type, env);
      ByteVec v = eval_reg(f, s.ops.at(1), s.type, site).bytes;
      mem_.write(p, v, l.align, Dialect::Foreign, site);
      return;
    }
    case K::Free:
      mem_.deallocate(reg_pointer(f, s.ops.at(0), site), Allocator::Foreign,
                      site);
      return;
    case K::Memset: {
      PointerValue p = reg_pointer(f, s.ops.at(0), site);
      auto byte = static_cast<std::uint8_t>(reg_uint(f, s.ops.at(1), site));
      std::uint64_t n = reg_uint(f, s.ops.at(2), site);
      mem_.write(p, ByteVec(n, AbstractByte::of(byte)), 1, Dialect::Foreign, site);
      return;
    }
    case K::Memcpy: {
      PointerValue d = reg_pointer(f, s.ops.at(0), site);
      PointerValue src = reg_pointer(f, s.ops.at(1), site);
      std::uint64_t n = reg_uint(f, s.ops.at(2), site);
      ByteVec bytes = mem_.read(src, n, 1, Dialect::Foreign, site);
      mem_.write(d, bytes, 1, Dialect::Foreign, site);
      return;
    }
    case K::Return: {
      TypeRef ret = f.fn->ret ? f.fn->ret : unit_type();
      TypedValue v{unit_type(), {}};
      if (!s.ops.empty()) v = eval_reg(f, s.ops[0], ret, site);
      leave_frame(t, std::move(v), site);
      return;
    }
    case K::AssertEq: {
      TypedValue a = defined(s.ops.at(0), nullptr);
      TypedValue b = defined(s.ops.at(1), a.type);
      if (!compare(a, b, CmpOp::Eq))
        throw UbError(DiagKind::AssertionFailed,
                      fmt::format("assertion failed: {} != {}",
                                  decode_sint(a.bytes), decode_sint(b.bytes)));
      return;
    }
    case K::Label:
      return;
    case K::Goto:
      f.pc = f.labels.at(s.name);
      return;
    case K::If: {
      const Operand& x = s.ops.at(0);
      const Operand& y = s.ops.at(1);
      TypedValue a, b;
      if (x.kind == Operand::Kind::Place) {
        a = defined(x, nullptr);
        b = defined(y, a.type);
      } else {
        b = defined(y, nullptr);
        a = defined(x, b.type);
      }
      if (compare(a, b, s.cmp)) f.pc = f.labels.at(s.name);
      return;
    }
    default:
      break;
  }
  unsupported("statement not allowed in foreign code: " + render_stmt(s));
}

}  // namespace duet
