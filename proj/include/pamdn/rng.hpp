#pragma once

#include <cstdint>

namespace pamdn {

// Independent child seed for sub-stream `stream` of `seed` (splitmix64
// finalizer). Every seeded component derives its streams through this so
// that adding a draw in one place never shifts another component's numbers.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace pamdn
