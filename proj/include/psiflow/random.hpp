#pragma once

#include <cstdint>
#include <random>

namespace psiflow {

/// Engine used everywhere. Every instance is seeded through harness::seed_stream,
/// there is no global generator.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng)
{
    // 53 random bits, never returns 1.0
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform on (0,1], safe as a log argument.
inline double uniform_open0(Rng& rng)
{
    return (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
}

} // namespace psiflow
