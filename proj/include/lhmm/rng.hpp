#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace lhmm {

// splitmix64 step; used to derive independent child seeds from a root seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic seed splitting: stream i of a root seed. Used so that
// sectors, calibration pairs, and replicates each get an independent stream.
inline std::uint64_t split_seed(std::uint64_t root, std::uint64_t stream) {
    return splitmix64(root ^ splitmix64(stream + 1));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// Standard Normal CDF.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }

}  // namespace lhmm
