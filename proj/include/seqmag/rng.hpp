#pragma once

#include <cstdint>
#include <random>

namespace seqmag {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; mixes a counter into a well-spread 64-bit value.
[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for work item `index` of a run with `master` seed. Streams depend
/// only on (master, index), never on scheduling.
[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index)
{
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

[[nodiscard]] inline Rng make_rng(std::uint64_t master, std::uint64_t index)
{
  return Rng(derive_seed(master, index));
}

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
[[nodiscard]] inline double uniform01(Rng& rng)
{
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace seqmag
