#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace bytegen {

// FNV-1a, 64-bit. Stable across platforms; published test vectors:
//   fnv1a64("")       = 0xcbf29ce484222325
//   fnv1a64("a")      = 0xaf63dc4c8601ec8c
//   fnv1a64("foobar") = 0x85944171f73967e8
inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = kFnvOffsetBasis;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = kFnvOffsetBasis;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace bytegen
