#include "psiflow/harness/seed.hpp"

namespace psiflow::harness {

std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t seed_stream(std::uint64_t master_seed, std::uint64_t index) noexcept
{
    // two rounds so that nearby masters and nearby indices decorrelate
    return mix64(mix64(master_seed) ^ (index * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL));
}

std::uint64_t substream(std::uint64_t replicate_seed, Stream stream) noexcept
{
    return mix64(replicate_seed + 0x632be59bd9b4e019ULL * static_cast<std::uint64_t>(stream));
}

} // namespace psiflow::harness
