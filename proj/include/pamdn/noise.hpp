#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pamdn/image.hpp"

namespace pamdn {

// ---------------------------------------------------------------- phantoms

enum class PhantomKind { kVeins, kVessels };

std::string to_string(PhantomKind kind);
PhantomKind parse_phantom_kind(const std::string& text);

/// Branching curvilinear structures on a zero background. Widths are
/// starting half-widths in pixels; `wander` is the per-step heading jitter
/// in radians.
struct PhantomSpec {
    PhantomKind kind = PhantomKind::kVeins;
    std::size_t height = 64;
    std::size_t width = 64;
    int branch_min = 2;
    int branch_max = 4;
    double wander = 0.12;
    double thickness_min = 0.8;
    double thickness_max = 1.8;
    std::uint64_t seed = 0;

    // Defaults for `kind`: veins are few thick trunks with side branches,
    // vessels are many thin, more tortuous segments.
    static PhantomSpec defaults(PhantomKind kind, std::size_t height, std::size_t width, std::uint64_t seed);
};

// Fraction of pixels strictly above 0.1.
double foreground_fraction(const Image& img);

// Throws ConfigError for sizes below 32, inverted ranges, or a result whose
// foreground is under 1% (which includes branch_max == 0).
Image gen_phantom(const PhantomSpec& spec);

// ---------------------------------------------------------------- A-lines

/// rows x cols lateral grid, `depth` axial samples per A-line.
struct AlineVolume {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t depth = 0;
    std::vector<double> data;

    AlineVolume() = default;
    AlineVolume(std::size_t r, std::size_t c, std::size_t d) : rows(r), cols(c), depth(d), data(r * c * d, 0.0) {}

    double& at(std::size_t i, std::size_t j, std::size_t z) { return data[(i * cols + j) * depth + z]; }
    double at(std::size_t i, std::size_t j, std::size_t z) const { return data[(i * cols + j) * depth + z]; }
    std::span<const double> aline(std::size_t i, std::size_t j) const { return {data.data() + (i * cols + j) * depth, depth}; }

    friend bool operator==(const AlineVolume&, const AlineVolume&) = default;
};

inline constexpr std::size_t kDefaultDepth = 32;
inline constexpr double kDefaultPulseSigma = 1.5;

// Integer peak depth per lateral pixel: a coarse uniform grid, bilinearly
// interpolated so neighbours sit at similar depths, kept 3 sigma away from
// both ends of the window. Throws ConfigError when the window is too short.
std::vector<int> pulse_depths(std::size_t rows, std::size_t cols, std::size_t depth, double pulse_sigma,
                              std::uint64_t seed);

AlineVolume lift_to_volume(const Image& img, std::size_t depth, double pulse_sigma, std::uint64_t seed);

// Absolute maximum along depth, unnormalized.
Image map_project(const AlineVolume& vol);

void save_volume(const std::filesystem::path& path, const AlineVolume& vol);
AlineVolume load_volume(const std::filesystem::path& path);

// ---------------------------------------------------------------- noise

enum class NoiseLevel { kLow, kMid, kHigh };

std::string to_string(NoiseLevel level);
NoiseLevel parse_noise_level(const std::string& text);

struct NoiseSpec {
    double gaussian_sigma = 0.0;
    double poisson_scale = 0.0;  // photon-count scaling; 0 disables
    double rayleigh_sigma = 0.0;
    NoiseLevel level = NoiseLevel::kLow;

    // Throws ConfigError for negative or non-finite parameters.
    void validate() const;
};

struct LevelRanges {
    double gaussian_lo, gaussian_hi;
    double poisson_lo, poisson_hi;
    double rayleigh_lo, rayleigh_hi;
};

LevelRanges level_ranges(NoiseLevel level);
NoiseSpec sample_noise_spec(NoiseLevel level, std::uint64_t seed);
// The spec a dataset pair with this seed uses.
NoiseSpec pair_noise_spec(NoiseLevel level, std::uint64_t pair_seed);

// Per sample: Poisson photon noise on the non-negative part (negative part
// kept as is), then additive Gaussian and additive Rayleigh. Components with
// a zero parameter are skipped entirely.
AlineVolume add_noise(const AlineVolume& vol, const NoiseSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------- pairs

struct SynthOptions {
    std::size_t depth = kDefaultDepth;
    double pulse_sigma = kDefaultPulseSigma;
};

// map_project(add_noise(lift_to_volume(clean))) without any renormalization.
Image noisy_map(const Image& clean, const NoiseSpec& spec, std::uint64_t seed, const SynthOptions& opts = {});

// (noisy, clean) where noisy = clip(noisy_map / norm, 0, 1). `norm` is the
// dataset-level divisor (see synth_dataset); 1 leaves the scale unchanged.
std::pair<Image, Image> make_pair(const Image& clean, const NoiseSpec& spec, std::uint64_t seed, double norm = 1.0,
                                  const SynthOptions& opts = {});

// Linear-interpolated percentile, q in [0, 100].
double percentile(std::span<const double> values, double q);

struct PairSample {
    Image noisy;
    Image clean;
    NoiseLevel level = NoiseLevel::kLow;
    std::uint64_t seed = 0;  // per-pair seed; phantom, spec and noise derive from it
    NoiseSpec spec;
};

struct DatasetOptions {
    std::size_t count = 32;
    std::size_t height = 64;
    std::size_t width = 64;
    PhantomKind kind = PhantomKind::kVeins;
    std::vector<NoiseLevel> levels = {NoiseLevel::kLow, NoiseLevel::kMid, NoiseLevel::kHigh};
    std::uint64_t seed = 0;
    SynthOptions synth;
    double norm_percentile = 99.9;
};

struct Dataset {
    std::vector<PairSample> pairs;
    double norm = 1.0;  // divisor applied to every raw noisy map
};

// Pair i uses level levels[i % levels.size()]. Raw noisy maps are divided by
// max(1, percentile(all raw noisy pixels)) and clipped to [0, 1].
Dataset synth_dataset(const DatasetOptions& opts);
// Pair `index` of synth_dataset before normalization (noisy holds the raw map).
PairSample synth_pair(const DatasetOptions& opts, std::size_t index);

struct FromImagesOptions {
    std::vector<NoiseLevel> levels = {NoiseLevel::kLow, NoiseLevel::kMid, NoiseLevel::kHigh};
    std::size_t pairs_per_image = 1;
    std::uint64_t seed = 0;
    SynthOptions synth;
    double norm_percentile = 99.9;
    bool zero_noise = false;  // debugging: every spec is all zeros
};

// Every clean image x every level x pairs_per_image, in that nesting order;
// pair `index` gets seed derive_seed(seed, index). Normalized like
// synth_dataset.
Dataset synth_from_images(const std::vector<Image>& cleans, const FromImagesOptions& opts);

struct ManifestEntry {
    std::string clean_path;  // relative to the manifest's directory
    std::string noisy_path;
    NoiseLevel level = NoiseLevel::kLow;
    std::uint64_t seed = 0;
};

// Writes clean_NNNN.pgm / noisy_NNNN.pgm and manifest.json into `dir`.
std::vector<ManifestEntry> save_dataset(const std::filesystem::path& dir, const Dataset& data);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
// Loads every pair listed in a manifest (paths resolved against its directory).
std::vector<PairSample> load_dataset(const std::filesystem::path& manifest);

}  // namespace pamdn
