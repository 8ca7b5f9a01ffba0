#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace flrboot {

using Engine = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Hashes a master seed and a path of indices into a child seed. Distinct paths give
// statistically independent streams, so replicate b of run r can be regenerated alone.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t h = mix64(seed);
  for (auto p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

inline Engine make_engine(std::uint64_t seed) {
  std::array<std::uint32_t, 4> words{
      static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
      static_cast<std::uint32_t>(mix64(seed)), static_cast<std::uint32_t>(mix64(seed) >> 32)};
  std::seed_seq seq(words.begin(), words.end());
  return Engine(seq);
}

inline Engine stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  return make_engine(derive_seed(seed, path));
}

}  // namespace flrboot
