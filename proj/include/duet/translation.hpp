// SPDX-License-Identifier: Apache-2.0
//
// Value conversion across the host/foreign boundary. Conversions never look
// at how a binding was declared beyond its types; the byte size of each value
// is the invariant that must hold.

#pragma once

#include <functional>
#include <vector>

#include "duet/diagnostic.hpp"
#include "duet/types.hpp"
#include "duet/values.hpp"

namespace duet {

struct Signature {
  std::vector<TypeRef> params;
  TypeRef ret;
  bool variadic = false;
};

/// A value as seen by the callee-side ABI.
struct AbiValue {
  enum class Kind : std::uint8_t { Scalar, Pointer, Aggregate, Blob };

  Kind kind = Kind::Scalar;
  unsigned width = 0;  // bits, scalars only
  ByteVec bytes;       // image of the whole value
  std::vector<AbiValue> fields;

  bool operator==(const AbiValue&) const = default;
};

struct TypedValue {
  TypeRef type;
  ByteVec bytes;
};

/// Side effects conversions need from the memory model.
struct BoundaryHooks {
  /// Pointer image about to become an integer; exposes its tag.
  std::function<void(const ByteVec&)> expose;
  /// Integer about to become a pointer; returns the pointer image.
  std::function<ByteVec(const ByteVec&)> from_int;
};

/// Pairs each argument (typed by the caller's view) with the callee's
/// parameter list. The result holds exactly one value per callee parameter,
/// followed by any variadic extras. Throws UbError (invalid-binding or
/// unsupported-operation).
std::vector<AbiValue> lower_call(const std::vector<TypedValue>& args,
                                 const Signature& callee,
                                 const TypeEnv& env,
                                 const BoundaryHooks& hooks = {});

/// Converts the callee's return value to the caller's declared return type.
TypedValue raise_return(const AbiValue& v, const TypeRef& definition_ret,
                        const TypeRef& binding_ret, const TypeEnv& env,
                        const BoundaryHooks& hooks = {});

/// Wraps a callee-side value of type `t`.
AbiValue to_abi(const TypeRef& t, const ByteVec& bytes, const TypeEnv& env);

/// Pointee type for a pointer produced by foreign code: u8, unless the target
/// is a stack or static allocation of a primitive size.
TypeRef type_opaque_pointer(std::optional<std::uint64_t> target_size,
                            bool stack_or_static);

class Memory;
TypeRef type_opaque_pointer(const PointerValue& p, const Memory& mem);

}  // namespace duet
