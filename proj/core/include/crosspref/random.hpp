#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace crosspref {

using Rng = std::mt19937_64;

// Independent generator for (seed, key...) built through std::seed_seq.
// Substreams keyed by item index keep sampling independent of scheduling.
Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys = {});

// 64-bit FNV-1a; stable across platforms, used to key streams by strings.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace crosspref
