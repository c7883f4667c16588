#include <cmath>
#include <random>

#include "doctest.h"
#include "pamdn/error.hpp"
#include "pamdn/inference.hpp"

using namespace pamdn;

namespace {

Image noise_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(h, w);
    for (double& v : img.pixels) v = u(rng);
    return img;
}

}  // namespace

TEST_CASE("round_up16") {
    CHECK(round_up16(1) == 16);
    CHECK(round_up16(16) == 16);
    CHECK(round_up16(17) == 32);
    CHECK(round_up16(600) == 608);
    CHECK(round_up16(1500) == 1504);
}

TEST_CASE("reflect_pad mirrors without repeating the edge") {
    Image img(1, 3);
    img.pixels = {10, 20, 30};
    const Image p = reflect_pad(img, 2, 9);
    // Column sequence a b c b a b c b a; rows mirror the same way.
    const std::vector<double> want = {10, 20, 30, 20, 10, 20, 30, 20, 10};
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 9; ++c) CHECK(p.at(r, c) == want[c]);

    const Image src = noise_image(5, 7, 3);
    const Image q = reflect_pad(src, 16, 16);
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 7; ++c) CHECK(q.at(r, c) == src.at(r, c));
    CHECK(q.at(5, 0) == src.at(3, 0));
    CHECK(q.at(0, 7) == src.at(0, 5));

    CHECK_THROWS_AS(reflect_pad(src, 4, 16), DimensionError);
}

TEST_CASE("tile_starts cover every pixel with at least the requested overlap") {
    for (std::size_t length : {32u, 100u, 256u, 257u, 600u, 1500u})
        for (std::size_t tile : {32u, 64u, 256u})
            for (std::size_t overlap : {0u, 8u, 16u}) {
                const auto s = tile_starts(length, tile, overlap);
                REQUIRE(!s.empty());
                CHECK(s.front() == 0);
                if (length <= tile) {
                    CHECK(s.size() == 1);
                    continue;
                }
                CHECK(s.back() + tile == length);
                std::vector<int> hits(length, 0);
                for (std::size_t i = 0; i < s.size(); ++i) {
                    for (std::size_t k = s[i]; k < s[i] + tile; ++k) ++hits[k];
                    if (i > 0) {
                        CHECK(s[i] > s[i - 1]);
                        CHECK(s[i - 1] + tile - s[i] >= overlap);
                    }
                }
                for (int h : hits) CHECK(h >= 1);
            }
    CHECK_THROWS_AS(tile_starts(100, 16, 16), ConfigError);
}

TEST_CASE("denoise_whole keeps the input shape") {
    const Generator g = Generator::build(7, Scale{1, 8});
    for (auto [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{{64, 64}, {50, 37}, {16, 48}}) {
        const Image out = denoise_whole(g, noise_image(h, w, h * 131 + w));
        CHECK(out.height == h);
        CHECK(out.width == w);
        for (double v : out.pixels) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("denoise_tiled: one tile is the untiled result") {
    const Generator g = Generator::build(9, Scale{1, 8});
    const Image img = noise_image(64, 64, 1);
    const Image a = denoise_tiled(g, img, {64, 16});
    const Image b = denoise_whole(g, img);
    CHECK(a.pixels == b.pixels);
}

TEST_CASE("denoise_tiled: blending across several tiles") {
    const Generator g = Generator::build(9, Scale{1, 8});
    const Image img = noise_image(80, 100, 2);
    const TileOptions opts{32, 16};
    const Image out = denoise_tiled(g, img, opts);
    REQUIRE(out.height == 80);
    REQUIRE(out.width == 100);
    for (double v : out.pixels) {
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // The top-left corner is covered by the first tile only, so the blend
    // there must reproduce that tile's own output.
    const Image first = denoise_whole(g, img.crop(0, 0, 32, 32));
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c) CHECK(out.at(r, c) == doctest::Approx(first.at(r, c)).epsilon(1e-12));
}

TEST_CASE("denoise_tiled rejects unusable tile settings") {
    const Generator g = Generator::build(9, Scale{1, 8});
    const Image img = noise_image(64, 64, 3);
    CHECK_THROWS_AS(denoise_tiled(g, img, {40, 16}), ConfigError);
    CHECK_THROWS_AS(denoise_tiled(g, img, {16, 8}), ConfigError);
    CHECK_THROWS_AS(denoise_tiled(g, img, {32, 32}), ConfigError);
}
