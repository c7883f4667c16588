#pragma once

#include <bit>
#include <cstdint>
#include <span>

namespace pamdn {

// FNV-1a over the raw IEEE bit patterns; distinguishes -0.0 from 0.0.
inline std::uint64_t fnv1a(std::span<const double> values, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (double v : values) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) {
            h ^= bits & 0xff;
            h *= 0x100000001b3ULL;
            bits >>= 8;
        }
    }
    return h;
}

}  // namespace pamdn
