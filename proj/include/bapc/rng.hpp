#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace bapc {

using Rng = std::mt19937_64;

// FNV-1a over raw bytes; stable across runs and platforms.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);

// Seed for a named sub-stream ("init", "shuffle", "dropout", "mask", ...),
// so each source of randomness can be varied without disturbing the others.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index);

inline Rng make_rng(std::uint64_t seed, std::string_view stream) { return Rng(derive_seed(seed, stream)); }
inline Rng make_rng(std::uint64_t seed, std::string_view stream, std::uint64_t index) {
  return Rng(derive_seed(seed, stream, index));
}

// Uniform double in [0, 1) built from 53 raw bits, independent of the
// standard library's distribution implementations.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Standard normal via Box-Muller on uniform01.
double standard_normal(Rng& rng);

}  // namespace bapc
