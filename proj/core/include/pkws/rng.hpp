#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace pkws {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Deterministic seed for a stream identified by a master seed and a path of
/// indices, e.g. derive_seed(seed, {episode}) or derive_seed(seed, {episode, slot}).
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix_seed(master);
  for (std::uint64_t p : path) s = mix_seed(s ^ mix_seed(p + 0x632BE59BD9B4E019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(master, path));
}

}  // namespace pkws
