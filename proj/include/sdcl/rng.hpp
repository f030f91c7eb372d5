#pragma once

#include <cstdint>
#include <random>

namespace sdcl {

/// SplitMix64 mixer; used to derive independent substream seeds.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Deterministic per-purpose RNG stream. Identical (seed, tags) always yields
/// the same engine, independent of call order elsewhere in the program.
inline std::mt19937_64 make_rng(uint64_t seed, uint64_t tag0 = 0,
                                uint64_t tag1 = 0, uint64_t tag2 = 0) {
  uint64_t s = mix64(seed);
  s = mix64(s ^ mix64(tag0 + 0x1));
  s = mix64(s ^ mix64(tag1 + 0x2));
  s = mix64(s ^ mix64(tag2 + 0x3));
  return std::mt19937_64(s);
}

}  // namespace sdcl
