// SPDX-License-Identifier: Apache-2.0

#include "duet/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace duet::kernels {

namespace {

Isa detect() {
  if (const char* env = std::getenv("DUET_FORCE_SCALAR");
      env && std::strcmp(env, "0") != 0)
    return Isa::Scalar;
  return avx2_available() ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

bool avx2_available() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
  if (isa == Isa::Avx2 && !avx2_available()) isa = Isa::Scalar;
  current().store(isa, std::memory_order_relaxed);
}

std::size_t map_states(std::span<std::uint8_t> states, const Lut16& lut) {
  return active_isa() == Isa::Avx2 ? avx2::map_states(states, lut)
                                   : scalar::map_states(states, lut);
}

std::size_t find_zero(std::span<const std::uint8_t> bytes) {
  return active_isa() == Isa::Avx2 ? avx2::find_zero(bytes)
                                   : scalar::find_zero(bytes);
}

}  // namespace duet::kernels
