// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>
#include <vector>

#include "duet/kernels.hpp"

using namespace duet;

namespace {

kernels::Lut16 random_lut(std::mt19937_64& rng, bool allow_errors) {
  kernels::Lut16 lut{};
  for (auto& e : lut) {
    e = static_cast<std::uint8_t>(rng() & 0x0f);
    if (allow_errors && rng() % 23 == 0) e |= 0x80;
  }
  return lut;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("scalar map_states applies the table") {
  kernels::Lut16 lut{};
  for (int i = 0; i < 16; ++i) lut[i] = static_cast<std::uint8_t>((i + 1) & 0x0f);
  std::vector<std::uint8_t> s{0, 1, 15, 7};
  CHECK(kernels::scalar::map_states(s, lut) == kernels::npos);
  CHECK(s == std::vector<std::uint8_t>{1, 2, 0, 8});
}

TEST_CASE("an error entry leaves the states untouched") {
  kernels::Lut16 lut{};
  lut[3] = 0x81;
  std::vector<std::uint8_t> s{0, 0, 3, 3};
  auto before = s;
  CHECK(kernels::scalar::map_states(s, lut) == 2);
  CHECK(s == before);
}

TEST_CASE("find_zero") {
  std::vector<std::uint8_t> b(100, 1);
  CHECK(kernels::scalar::find_zero(b) == kernels::npos);
  b[77] = 0;
  CHECK(kernels::scalar::find_zero(b) == 77);
  CHECK(kernels::find_zero(std::span<const std::uint8_t>{}) == kernels::npos);
}

TEST_CASE("avx2 and scalar variants agree") {
  if (!kernels::avx2_available()) {
    MESSAGE("AVX2 not available; dispatch stays scalar");
    return;
  }
  std::mt19937_64 rng(11);
  for (int iter = 0; iter < 2000; ++iter) {
    std::size_t n = rng() % 150;
    std::vector<std::uint8_t> a(n);
    for (auto& x : a) x = static_cast<std::uint8_t>(rng() & 0x0f);
    auto b = a;
    auto lut = random_lut(rng, true);
    REQUIRE(kernels::scalar::map_states(a, lut) ==
            kernels::avx2::map_states(b, lut));
    REQUIRE(a == b);

    std::vector<std::uint8_t> m(n);
    for (auto& x : m) x = rng() % 40 == 0 ? 0 : 1;
    REQUIRE(kernels::scalar::find_zero(m) == kernels::avx2::find_zero(m));
  }
}

TEST_CASE("forced dispatch") {
  auto prev = kernels::active_isa();
  kernels::force_isa(kernels::Isa::Scalar);
  CHECK(kernels::active_isa() == kernels::Isa::Scalar);
  kernels::force_isa(kernels::Isa::Avx2);
  CHECK(kernels::active_isa() ==
        (kernels::avx2_available() ? kernels::Isa::Avx2 : kernels::Isa::Scalar));
  kernels::force_isa(prev);
}

}
