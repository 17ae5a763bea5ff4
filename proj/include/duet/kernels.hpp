// SPDX-License-Identifier: Apache-2.0
//
// Byte-parallel inner loops of the shadow state: per-location permission
// transitions and initialization-mask scans. Each kernel has a portable scalar
// reference and an AVX2 variant; the variant is picked once at runtime.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

namespace duet::kernels {

inline constexpr std::size_t npos = static_cast<std::size_t>(-1);

/// 16-entry translation table. Entries with the high bit set mark errors.
using Lut16 = std::array<std::uint8_t, 16>;

enum class Isa { Scalar, Avx2 };

/// Replaces every state `s` (low nibble only) by `lut[s]`. If any result has
/// its high bit set, `states` is left untouched and the index of the first such
/// location is returned; otherwise returns npos.
std::size_t map_states(std::span<std::uint8_t> states, const Lut16& lut);

/// Index of the first zero byte, or npos.
std::size_t find_zero(std::span<const std::uint8_t> bytes);

bool avx2_available();
Isa active_isa();
/// Overrides dispatch (tests and benchmarks). Requesting AVX2 on a machine
/// without it falls back to scalar.
void force_isa(Isa isa);

namespace scalar {
std::size_t map_states(std::span<std::uint8_t> states, const Lut16& lut);
std::size_t find_zero(std::span<const std::uint8_t> bytes);
}  // namespace scalar

namespace avx2 {
std::size_t map_states(std::span<std::uint8_t> states, const Lut16& lut);
std::size_t find_zero(std::span<const std::uint8_t> bytes);
}  // namespace avx2

}  // namespace duet::kernels
