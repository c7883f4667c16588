#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "pamdn/tensor.hpp"

namespace pamdn {

/// Single-channel row-major image of doubles.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

    double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
    double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
    std::size_t size() const { return pixels.size(); }

    // Copy of rows [r0, r0+h) and columns [c0, c0+w).
    Image crop(std::size_t r0, std::size_t c0, std::size_t h, std::size_t w) const;

    friend bool operator==(const Image&, const Image&) = default;
};

// (1, 1, H, W) tensor view copy and back.
Tensor to_tensor(const Image& img);
// Sample `n` of an (N, 1, H, W) tensor.
Image from_tensor(const Tensor& t, std::size_t n = 0);
// Stacks equally sized images into (N, 1, H, W).
Tensor stack_images(const std::vector<const Image*>& images);

// 16-bit binary PGM, maxval 65535, big-endian samples, value = round(clamp(p)*65535).
void write_pgm(const std::filesystem::path& path, const Image& img);
// Reads 8- or 16-bit binary PGM and rescales to [0, 1] by maxval.
Image read_pgm(const std::filesystem::path& path);

}  // namespace pamdn
