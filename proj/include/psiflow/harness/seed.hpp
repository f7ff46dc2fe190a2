#pragma once

#include <cstdint>

namespace psiflow::harness {

/// splitmix64 finaliser.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Per-replicate seed: deterministic, distinct for distinct (master, index).
std::uint64_t seed_stream(std::uint64_t master_seed, std::uint64_t index) noexcept;

/// Independent stream for one component (path, flow, types, ...) of a replicate.
enum class Stream : std::uint64_t
{
    Path = 1,
    Flow = 2,
    Types = 3,
    Oracle = 4,
    Paintbox = 5,
    Misc = 6
};

std::uint64_t substream(std::uint64_t replicate_seed, Stream stream) noexcept;

} // namespace psiflow::harness
