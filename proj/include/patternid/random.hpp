#pragma once

#include <cstdint>
#include <random>

namespace patternid {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent, reproducible streams.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for stream `tag` / element `index` under a master seed.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag, std::uint64_t index = 0) {
  return mix64(mix64(mix64(master) ^ tag) ^ index);
}

// Stream tags.
inline constexpr std::uint64_t kStreamBatch = 0xba7c4;
inline constexpr std::uint64_t kStreamAugment = 0xa06e;
inline constexpr std::uint64_t kStreamInit = 0x1417;
inline constexpr std::uint64_t kStreamIndividual = 0x1d1d;
inline constexpr std::uint64_t kStreamView = 0x71e3;
inline constexpr std::uint64_t kStreamFolds = 0xf01d;
inline constexpr std::uint64_t kStreamProtocol = 0x9207;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline bool coin(Rng& rng, double p = 0.5) { return std::bernoulli_distribution(p)(rng); }

}  // namespace patternid
