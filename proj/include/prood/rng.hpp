#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace prood {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Named sub-stream of a master seed ("data", "init", "attack", ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

/// Per-item stream, so that item i's randomness does not depend on how
/// many items were generated before it.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Uniform double in [0, 1) from the top 53 bits of one draw.
double uniform01(Rng& rng);
/// Uniform double in [lo, hi).
double uniform(Rng& rng, double lo, double hi);
/// Standard normal via Box-Muller; two draws per call.
double standard_normal(Rng& rng);

/// Seeded Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

}  // namespace prood
