// SPDX-License-Identifier: Apache-2.0

#include "duet/kernels.hpp"

namespace duet::kernels::scalar {

std::size_t map_states(std::span<std::uint8_t> states, const Lut16& lut) {
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (lut[states[i] & 0x0f] & 0x80) return i;
  }
  for (auto& s : states) s = lut[s & 0x0f];
  return npos;
}

std::size_t find_zero(std::span<const std::uint8_t> bytes) {
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (bytes[i] == 0) return i;
  }
  return npos;
}

}  // namespace duet::kernels::scalar
