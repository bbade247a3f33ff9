#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace psplat {

using Rng = std::mt19937_64;

// Derives an independent seed for a named stream ("trainer", "attack", ...)
// from a run seed, so each module draws from its own sequence.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

inline Rng make_rng(std::uint64_t seed, std::string_view stream) { return Rng(derive_seed(seed, stream)); }

} // namespace psplat
