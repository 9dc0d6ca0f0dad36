#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace patternid {

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t value);
std::uint64_t from_hex(const std::string& text);

}  // namespace patternid
