#pragma once

#include <cstdint>
#include <random>

namespace pda {

using Rng = std::mt19937_64;

// Independent RNG streams used by one experiment. Every stream is derived from
// the experiment seed so that enabling one component never shifts the random
// sequence seen by another.
enum class RngStream : std::uint64_t {
  dataset = 1,
  encoder_init = 2,
  prototype_init = 3,
  source_batches = 4,
  target_batches = 5,
  complement_sets = 6,
};

// splitmix64 finalizer over (seed, stream, index).
constexpr std::uint64_t derive_seed(std::uint64_t seed, RngStream stream,
                                    std::uint64_t index = 0) {
  std::uint64_t x = seed ^ (static_cast<std::uint64_t>(stream) * 0x9E3779B97F4A7C15ULL) ^
                    (index * 0xD1B54A32D192ED03ULL);
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline Rng make_rng(std::uint64_t seed, RngStream stream, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, stream, index));
}

}  // namespace pda
