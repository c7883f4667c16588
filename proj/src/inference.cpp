#include "pamdn/inference.hpp"

#include <algorithm>

#include "pamdn/error.hpp"

namespace pamdn {

namespace {

std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const std::ptrdiff_t period = 2 * static_cast<std::ptrdiff_t>(n) - 2;
    i %= period;
    if (i < 0) i += period;
    return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

// Ramp weights for one axis of a tile: rises across the overlap with the
// previous tile, falls across the overlap with the next one.
std::vector<double> axis_weights(std::size_t len, std::size_t lead, std::size_t trail) {
    std::vector<double> w(len, 1.0);
    for (std::size_t i = 0; i < lead && i < len; ++i) w[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(lead);
    for (std::size_t i = 0; i < trail && i < len; ++i)
        w[len - 1 - i] = std::min(w[len - 1 - i], (static_cast<double>(i) + 0.5) / static_cast<double>(trail));
    return w;
}

}  // namespace

std::size_t round_up16(std::size_t n) { return (n + 15) / 16 * 16; }

Image reflect_pad(const Image& img, std::size_t height, std::size_t width) {
    if (img.height == 0 || img.width == 0) throw DimensionError("cannot pad an empty image");
    if (height < img.height || width < img.width) throw DimensionError("reflect_pad target is smaller than the image");
    Image out(height, width);
    for (std::size_t r = 0; r < height; ++r)
        for (std::size_t c = 0; c < width; ++c)
            out.at(r, c) = img.at(mirror(static_cast<std::ptrdiff_t>(r), img.height),
                                  mirror(static_cast<std::ptrdiff_t>(c), img.width));
    return out;
}

Image denoise_whole(const Generator& g, const Image& img) {
    const std::size_t ph = round_up16(img.height), pw = round_up16(img.width);
    const Image padded = (ph == img.height && pw == img.width) ? img : reflect_pad(img, ph, pw);
    Tape tape(false);
    const Image out = from_tensor(g.forward(tape, Var(to_tensor(padded))).value());
    return (ph == img.height && pw == img.width) ? out : out.crop(0, 0, img.height, img.width);
}

std::vector<std::size_t> tile_starts(std::size_t length, std::size_t tile, std::size_t overlap) {
    if (tile <= overlap) throw ConfigError("tile size must exceed the overlap");
    if (length <= tile) return {0};
    const std::size_t stride = tile - overlap;
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + tile < length; s += stride) starts.push_back(s);
    starts.push_back(length - tile);
    return starts;
}

Image denoise_tiled(const Generator& g, const Image& img, const TileOptions& opts) {
    if (opts.tile < 32 || opts.tile % 16 != 0)
        throw ConfigError("tile size must be a multiple of 16 and at least 32, got " + std::to_string(opts.tile));
    if (opts.overlap >= opts.tile) throw ConfigError("tile overlap must be smaller than the tile");
    if (img.height <= opts.tile && img.width <= opts.tile) return denoise_whole(g, img);

    const auto rows = tile_starts(img.height, opts.tile, opts.overlap);
    const auto cols = tile_starts(img.width, opts.tile, opts.overlap);
    const std::size_t th = std::min(opts.tile, img.height), tw = std::min(opts.tile, img.width);
    Image acc(img.height, img.width, 0.0), wsum(img.height, img.width, 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t lead_r = i > 0 ? rows[i - 1] + th - rows[i] : 0;
        const std::size_t trail_r = i + 1 < rows.size() ? rows[i] + th - rows[i + 1] : 0;
        const auto wr = axis_weights(th, lead_r, trail_r);
        for (std::size_t j = 0; j < cols.size(); ++j) {
            const std::size_t lead_c = j > 0 ? cols[j - 1] + tw - cols[j] : 0;
            const std::size_t trail_c = j + 1 < cols.size() ? cols[j] + tw - cols[j + 1] : 0;
            const auto wc = axis_weights(tw, lead_c, trail_c);
            const Image out = denoise_whole(g, img.crop(rows[i], cols[j], th, tw));
            for (std::size_t r = 0; r < th; ++r)
                for (std::size_t c = 0; c < tw; ++c) {
                    const double w = wr[r] * wc[c];
                    acc.at(rows[i] + r, cols[j] + c) += w * out.at(r, c);
                    wsum.at(rows[i] + r, cols[j] + c) += w;
                }
        }
    }
    for (std::size_t k = 0; k < acc.size(); ++k) acc.pixels[k] /= wsum.pixels[k];
    return acc;
}

}  // namespace pamdn
