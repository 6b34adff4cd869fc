#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace ringcast {

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::span<const std::byte> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace ringcast
