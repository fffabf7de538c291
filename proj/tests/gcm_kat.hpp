#pragma once

#include <algorithm>
#include <array>

#include "encdp/bytes.hpp"

namespace encdp::testing {

struct KatCase {
  const char* key;
  const char* iv;
  const char* plaintext;
  const char* aad;
  const char* ciphertext;
  const char* tag;
};

inline constexpr KatCase kKat[] = {
#include "gcm_kat_vectors.inc"
};

template <std::size_t N>
std::array<std::uint8_t, N> fixed(const char* hex) {
  const Bytes b = from_hex(hex);
  std::array<std::uint8_t, N> out{};
  std::copy(b.begin(), b.end(), out.begin());
  return out;
}

}  // namespace encdp::testing
