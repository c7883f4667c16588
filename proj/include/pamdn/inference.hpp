#pragma once

#include <cstddef>

#include "pamdn/image.hpp"
#include "pamdn/model.hpp"

namespace pamdn {

// Mirror padding without repeating the edge pixel (…c b | a b c | b a…),
// out to height x width; keeps reflecting back and forth for pads longer
// than the image.
Image reflect_pad(const Image& img, std::size_t height, std::size_t width);

// Smallest multiple of 16 that is >= n.
std::size_t round_up16(std::size_t n);

// Whole image in one generator pass: reflect-pad to multiples of 16, run,
// crop back.
Image denoise_whole(const Generator& g, const Image& img);

struct TileOptions {
    std::size_t tile = 256;    // tile edge, a multiple of 16 and at least 32
    std::size_t overlap = 16;  // minimum overlap between neighbouring tiles
};

// Overlapping tiles blended with linear ramps across each overlap. An image
// that fits in one tile goes through denoise_whole unchanged. Throws
// ConfigError for a tile size that is not a multiple of 16 or an overlap
// that does not leave a positive stride.
Image denoise_tiled(const Generator& g, const Image& img, const TileOptions& opts = {});

// Start offsets of tiles of length `tile` covering [0, length) with stride
// tile - overlap; the last tile is flush with the end.
std::vector<std::size_t> tile_starts(std::size_t length, std::size_t tile, std::size_t overlap);

}  // namespace pamdn
