// SPDX-License-Identifier: Apache-2.0

#include "duet/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#define DUET_HAVE_X86 1
#endif

namespace duet::kernels::avx2 {

#if DUET_HAVE_X86

namespace {

__attribute__((target("avx2"))) inline __m256i lookup(__m256i v,
                                                      __m256i table) {
  const __m256i nibble = _mm256_set1_epi8(0x0f);
  return _mm256_shuffle_epi8(table, _mm256_and_si256(v, nibble));
}

}  // namespace

__attribute__((target("avx2"))) std::size_t map_states(
    std::span<std::uint8_t> states, const Lut16& lut) {
  const __m128i t128 =
      _mm_loadu_si128(reinterpret_cast<const __m128i*>(lut.data()));
  const __m256i table = _mm256_broadcastsi128_si256(t128);
  const std::size_t n = states.size();
  std::uint8_t* data = states.data();

  // Pass 1: find the first location whose transition is an error.
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    __m256i v = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(data + i));
    auto mask = static_cast<std::uint32_t>(_mm256_movemask_epi8(lookup(v, table)));
    if (mask) return i + static_cast<std::size_t>(__builtin_ctz(mask));
  }
  for (std::size_t j = i; j < n; ++j) {
    if (lut[data[j] & 0x0f] & 0x80) return j;
  }

  // Pass 2: apply.
  for (i = 0; i + 32 <= n; i += 32) {
    __m256i v = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(data + i));
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(data + i), lookup(v, table));
  }
  for (; i < n; ++i) data[i] = lut[data[i] & 0x0f];
  return npos;
}

__attribute__((target("avx2"))) std::size_t find_zero(
    std::span<const std::uint8_t> bytes) {
  const std::size_t n = bytes.size();
  const std::uint8_t* data = bytes.data();
  const __m256i zero = _mm256_setzero_si256();
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    __m256i v = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(data + i));
    auto mask =
        static_cast<std::uint32_t>(_mm256_movemask_epi8(_mm256_cmpeq_epi8(v, zero)));
    if (mask) return i + static_cast<std::size_t>(__builtin_ctz(mask));
  }
  for (; i < n; ++i) {
    if (data[i] == 0) return i;
  }
  return npos;
}

#else

std::size_t map_states(std::span<std::uint8_t> states, const Lut16& lut) {
  return scalar::map_states(states, lut);
}

std::size_t find_zero(std::span<const std::uint8_t> bytes) {
  return scalar::find_zero(bytes);
}

#endif

}  // namespace duet::kernels::avx2
