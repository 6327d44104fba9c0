#pragma once

#include <cstdint>
#include <random>

namespace pgv {

using Rng = std::mt19937_64;

/// SplitMix64 finaliser; decorrelates seeds derived from (master, stream ids).
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream for (master seed, a, b). Used so that per-particle and
/// per-iteration randomness does not depend on evaluation order.
inline Rng make_stream(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return Rng(mix64(mix64(mix64(master) ^ a) ^ (b * 0x632be59bd9b4e019ULL)));
}

}  // namespace pgv
