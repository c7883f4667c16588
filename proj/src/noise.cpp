#include "pamdn/noise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"
#include "pamdn/error.hpp"
#include "pamdn/rng.hpp"
#include "pamdn/tns.hpp"

namespace pamdn {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

}  // namespace

// ================================================================ phantoms

std::string to_string(PhantomKind kind) { return kind == PhantomKind::kVeins ? "veins" : "vessels"; }

PhantomKind parse_phantom_kind(const std::string& text) {
    if (text == "veins") return PhantomKind::kVeins;
    if (text == "vessels") return PhantomKind::kVessels;
    throw ConfigError("unknown phantom kind '" + text + "' (expected veins or vessels)");
}

PhantomSpec PhantomSpec::defaults(PhantomKind kind, std::size_t height, std::size_t width, std::uint64_t seed) {
    PhantomSpec s;
    s.kind = kind;
    s.height = height;
    s.width = width;
    s.seed = seed;
    if (kind == PhantomKind::kVessels) {
        s.branch_min = 3;
        s.branch_max = 6;
        s.wander = 0.2;
        s.thickness_min = 0.6;
        s.thickness_max = 1.3;
    }
    // Bigger fields get proportionally more trunks so the density stays put.
    const double area_factor = std::max(1.0, static_cast<double>(height * width) / (64.0 * 64.0));
    const double extra = std::sqrt(area_factor);
    s.branch_min = static_cast<int>(std::lround(s.branch_min * extra));
    s.branch_max = static_cast<int>(std::lround(s.branch_max * extra));
    return s;
}

double foreground_fraction(const Image& img) {
    if (img.size() == 0) return 0.0;
    const auto n = std::count_if(img.pixels.begin(), img.pixels.end(), [](double v) { return v > 0.1; });
    return static_cast<double>(n) / static_cast<double>(img.size());
}

namespace {

struct Walker {
    double x, y, heading, radius, intensity;
    int generation;
};

class PhantomPainter {
public:
    PhantomPainter(const PhantomSpec& spec, Rng& rng) : spec_(spec), rng_(rng), img_(spec.height, spec.width) {}

    void trunk() {
        // Enter from a random edge, pointing roughly inward.
        const double h = static_cast<double>(spec_.height), w = static_cast<double>(spec_.width);
        const int edge = std::uniform_int_distribution<int>(0, 3)(rng_);
        double x = 0, y = 0, heading = 0;
        switch (edge) {
            case 0: x = uniform(rng_, 0, w); y = 0; heading = std::numbers::pi / 2; break;
            case 1: x = uniform(rng_, 0, w); y = h - 1; heading = -std::numbers::pi / 2; break;
            case 2: x = 0; y = uniform(rng_, 0, h); heading = 0; break;
            default: x = w - 1; y = uniform(rng_, 0, h); heading = std::numbers::pi; break;
        }
        heading += uniform(rng_, -0.6, 0.6);
        walk({x, y, heading, uniform(rng_, spec_.thickness_min, spec_.thickness_max), uniform(rng_, 0.55, 1.0), 0});
    }

    Image take() { return std::move(img_); }

private:
    void walk(Walker w) {
        const double h = static_cast<double>(spec_.height), wd = static_cast<double>(spec_.width);
        const int max_steps = static_cast<int>(2 * (h + wd));
        const double r0 = w.radius;
        const double branch_p = spec_.kind == PhantomKind::kVeins ? 0.015 : 0.01;
        std::normal_distribution<double> turn(0.0, spec_.wander);
        std::normal_distribution<double> jitter(0.0, 0.05);
        double level = w.intensity;
        for (int step = 0; step < max_steps; ++step) {
            if (w.x < -1 || w.y < -1 || w.x > wd || w.y > h) break;
            // Width tapers to 40% of its starting value over the walk.
            const double radius = std::max(0.5, r0 * (1.0 - 0.6 * step / max_steps));
            level = std::clamp(0.9 * level + 0.1 * w.intensity + jitter(rng_), 0.2, 1.0);
            stamp(w.x, w.y, radius, level);
            w.heading += turn(rng_);
            w.x += std::cos(w.heading);
            w.y += std::sin(w.heading);
            if (w.generation < 2 && std::uniform_real_distribution<double>(0, 1)(rng_) < branch_p) {
                const double side = std::uniform_int_distribution<int>(0, 1)(rng_) ? 1.0 : -1.0;
                Walker child{w.x, w.y, w.heading + side * uniform(rng_, 0.4, 1.0), std::max(0.5, 0.65 * radius),
                             level * uniform(rng_, 0.7, 1.0), w.generation + 1};
                walk(child);
            }
        }
    }

    // Anti-aliased disk: full value inside the radius, linear fall-off over
    // the last pixel. Overlaps keep the brighter value.
    void stamp(double cx, double cy, double radius, double value) {
        const long r0 = std::max(0L, static_cast<long>(std::floor(cy - radius - 1)));
        const long r1 = std::min(static_cast<long>(spec_.height) - 1, static_cast<long>(std::ceil(cy + radius + 1)));
        const long c0 = std::max(0L, static_cast<long>(std::floor(cx - radius - 1)));
        const long c1 = std::min(static_cast<long>(spec_.width) - 1, static_cast<long>(std::ceil(cx + radius + 1)));
        for (long r = r0; r <= r1; ++r) {
            for (long c = c0; c <= c1; ++c) {
                const double d = std::hypot(static_cast<double>(c) - cx, static_cast<double>(r) - cy);
                const double cover = std::clamp(radius + 0.5 - d, 0.0, 1.0);
                double& px = img_.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
                px = std::max(px, value * cover);
            }
        }
    }

    const PhantomSpec& spec_;
    Rng& rng_;
    Image img_;
};

}  // namespace

Image gen_phantom(const PhantomSpec& spec) {
    if (spec.height < 32 || spec.width < 32)
        throw ConfigError("phantom size must be at least 32x32, got " + std::to_string(spec.height) + "x" +
                          std::to_string(spec.width));
    if (spec.branch_min < 0 || spec.branch_min > spec.branch_max) throw ConfigError("phantom branch range is inverted or negative");
    if (!(spec.thickness_min > 0) || spec.thickness_min > spec.thickness_max)
        throw ConfigError("phantom thickness range must be positive and ordered");
    if (!(spec.wander >= 0) || !std::isfinite(spec.wander)) throw ConfigError("phantom wander must be finite and >= 0");

    Rng rng(derive_seed(spec.seed, 0));
    const int branches = std::uniform_int_distribution<int>(spec.branch_min, spec.branch_max)(rng);
    PhantomPainter painter(spec, rng);
    for (int b = 0; b < branches; ++b) painter.trunk();
    Image img = painter.take();
    const double frac = foreground_fraction(img);
    if (frac < 0.01) {
        std::ostringstream msg;
        msg << "phantom foreground is empty (" << frac * 100 << "% of pixels above 0.1, need >= 1%)";
        throw ConfigError(msg.str());
    }
    return img;
}

// ================================================================ A-lines

std::vector<int> pulse_depths(std::size_t rows, std::size_t cols, std::size_t depth, double pulse_sigma,
                              std::uint64_t seed) {
    if (depth < 4) throw ConfigError("A-line depth must be at least 4, got " + std::to_string(depth));
    if (!(pulse_sigma > 0) || !std::isfinite(pulse_sigma)) throw ConfigError("pulse sigma must be positive");
    const double lo = std::ceil(3.0 * pulse_sigma);
    const double hi = static_cast<double>(depth - 1) - lo;
    if (lo > hi) {
        std::ostringstream msg;
        msg << "pulse sigma " << pulse_sigma << " is too wide for a depth window of " << depth << " samples";
        throw ConfigError(msg.str());
    }
    constexpr std::size_t kCell = 8;
    const std::size_t gr = rows / kCell + 2, gc = cols / kCell + 2;
    Rng rng(seed);
    std::vector<double> grid(gr * gc);
    for (double& g : grid) g = uniform(rng, lo, hi);
    std::vector<int> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const double fy = static_cast<double>(i) / kCell;
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t j = 0; j < cols; ++j) {
            const double fx = static_cast<double>(j) / kCell;
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const double tx = fx - static_cast<double>(x0);
            const double v = (1 - ty) * ((1 - tx) * grid[y0 * gc + x0] + tx * grid[y0 * gc + x0 + 1]) +
                             ty * ((1 - tx) * grid[(y0 + 1) * gc + x0] + tx * grid[(y0 + 1) * gc + x0 + 1]);
            out[i * cols + j] = static_cast<int>(std::lround(v));
        }
    }
    return out;
}

AlineVolume lift_to_volume(const Image& img, std::size_t depth, double pulse_sigma, std::uint64_t seed) {
    const auto peaks = pulse_depths(img.height, img.width, depth, pulse_sigma, seed);
    AlineVolume vol(img.height, img.width, depth);
    const double inv = 1.0 / (2.0 * pulse_sigma * pulse_sigma);
    for (std::size_t i = 0; i < img.height; ++i) {
        for (std::size_t j = 0; j < img.width; ++j) {
            const double v = img.at(i, j);
            if (v == 0.0) continue;
            const double d = peaks[i * img.width + j];
            for (std::size_t z = 0; z < depth; ++z) {
                const double dz = static_cast<double>(z) - d;
                vol.at(i, j, z) = v * std::exp(-dz * dz * inv);
            }
        }
    }
    return vol;
}

Image map_project(const AlineVolume& vol) {
    Image out(vol.rows, vol.cols);
    for (std::size_t i = 0; i < vol.rows; ++i) {
        for (std::size_t j = 0; j < vol.cols; ++j) {
            double m = 0.0;
            for (double s : vol.aline(i, j)) m = std::max(m, std::abs(s));
            out.at(i, j) = m;
        }
    }
    return out;
}

void save_volume(const std::filesystem::path& path, const AlineVolume& vol) {
    write_tns(path, Tensor(Shape{vol.rows, vol.cols, vol.depth}, vol.data));
}

AlineVolume load_volume(const std::filesystem::path& path) {
    const Tensor t = read_tns(path);
    if (t.shape().rank() != 3) throw IoError(path.string() + ": expected a rank-3 volume, got " + t.shape().str());
    AlineVolume vol(t.shape()[0], t.shape()[1], t.shape()[2]);
    std::copy(t.data().begin(), t.data().end(), vol.data.begin());
    return vol;
}

// ================================================================ noise

std::string to_string(NoiseLevel level) {
    switch (level) {
        case NoiseLevel::kLow: return "low";
        case NoiseLevel::kMid: return "mid";
        case NoiseLevel::kHigh: return "high";
    }
    return "?";
}

NoiseLevel parse_noise_level(const std::string& text) {
    if (text == "low") return NoiseLevel::kLow;
    if (text == "mid") return NoiseLevel::kMid;
    if (text == "high") return NoiseLevel::kHigh;
    throw ConfigError("unknown noise level '" + text + "' (expected low, mid or high)");
}

void NoiseSpec::validate() const {
    for (double p : {gaussian_sigma, poisson_scale, rayleigh_sigma})
        if (!(p >= 0) || !std::isfinite(p)) throw ConfigError("noise parameters must be finite and >= 0");
}

LevelRanges level_ranges(NoiseLevel level) {
    switch (level) {
        case NoiseLevel::kLow: return {0.02, 0.06, 1000, 2000, 0.005, 0.015};
        case NoiseLevel::kMid: return {0.06, 0.15, 500, 1000, 0.015, 0.0375};
        case NoiseLevel::kHigh: return {0.15, 0.35, 200, 500, 0.0375, 0.0875};
    }
    throw ConfigError("bad noise level");
}

NoiseSpec sample_noise_spec(NoiseLevel level, std::uint64_t seed) {
    const LevelRanges r = level_ranges(level);
    Rng rng(seed);
    NoiseSpec s;
    s.level = level;
    s.gaussian_sigma = uniform(rng, r.gaussian_lo, r.gaussian_hi);
    s.poisson_scale = uniform(rng, r.poisson_lo, r.poisson_hi);
    s.rayleigh_sigma = uniform(rng, r.rayleigh_lo, r.rayleigh_hi);
    return s;
}

AlineVolume add_noise(const AlineVolume& vol, const NoiseSpec& spec, std::uint64_t seed) {
    spec.validate();
    AlineVolume out = vol;
    // One stream per component so turning a component off leaves the others'
    // draws unchanged.
    if (spec.poisson_scale > 0) {
        Rng rng(derive_seed(seed, 0));
        const double s = spec.poisson_scale;
        for (double& x : out.data) {
            const double pos = std::max(x, 0.0);
            const double neg = std::min(x, 0.0);
            double shot = 0.0;
            if (pos > 0) shot = static_cast<double>(std::poisson_distribution<long long>(pos * s)(rng)) / s;
            x = shot + neg;
        }
    }
    if (spec.gaussian_sigma > 0) {
        Rng rng(derive_seed(seed, 1));
        std::normal_distribution<double> g(0.0, spec.gaussian_sigma);
        for (double& x : out.data) x += g(rng);
    }
    if (spec.rayleigh_sigma > 0) {
        Rng rng(derive_seed(seed, 2));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (double& x : out.data) x += spec.rayleigh_sigma * std::sqrt(-2.0 * std::log1p(-u(rng)));
    }
    return out;
}

// ================================================================ pairs

Image noisy_map(const Image& clean, const NoiseSpec& spec, std::uint64_t seed, const SynthOptions& opts) {
    const AlineVolume vol = lift_to_volume(clean, opts.depth, opts.pulse_sigma, derive_seed(seed, 10));
    return map_project(add_noise(vol, spec, derive_seed(seed, 11)));
}

std::pair<Image, Image> make_pair(const Image& clean, const NoiseSpec& spec, std::uint64_t seed, double norm,
                                  const SynthOptions& opts) {
    if (!(norm > 0) || !std::isfinite(norm)) throw ConfigError("normalization divisor must be positive");
    for (double v : clean.pixels)
        if (!(v >= 0.0 && v <= 1.0)) throw RangeError("clean image values must lie in [0, 1]");
    Image noisy = noisy_map(clean, spec, seed, opts);
    for (double& v : noisy.pixels) v = std::clamp(v / norm, 0.0, 1.0);
    return {std::move(noisy), clean};
}

double percentile(std::span<const double> values, double q) {
    if (values.empty()) throw RangeError("percentile of an empty set");
    if (!(q >= 0 && q <= 100)) throw RangeError("percentile must be in [0, 100]");
    std::vector<double> v(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
    const double a = v[lo];
    if (frac == 0.0 || lo + 1 >= v.size()) return a;
    const double b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
    return a + frac * (b - a);
}

namespace {

}  // namespace

NoiseSpec pair_noise_spec(NoiseLevel level, std::uint64_t pair_seed) {
    return sample_noise_spec(level, derive_seed(pair_seed, 1));
}

PairSample synth_pair(const DatasetOptions& opts, std::size_t index) {
    if (opts.levels.empty()) throw ConfigError("dataset needs at least one noise level");
    PairSample p;
    p.seed = derive_seed(opts.seed, index);
    p.level = opts.levels[index % opts.levels.size()];
    p.spec = pair_noise_spec(p.level, p.seed);
    p.clean = gen_phantom(PhantomSpec::defaults(opts.kind, opts.height, opts.width, derive_seed(p.seed, 0)));
    p.noisy = noisy_map(p.clean, p.spec, derive_seed(p.seed, 2), opts.synth);
    return p;
}

Dataset synth_dataset(const DatasetOptions& opts) {
    if (opts.count == 0) throw ConfigError("dataset count must be positive");
    Dataset ds;
    std::vector<double> all;
    for (std::size_t i = 0; i < opts.count; ++i) {
        ds.pairs.push_back(synth_pair(opts, i));
        all.insert(all.end(), ds.pairs.back().noisy.pixels.begin(), ds.pairs.back().noisy.pixels.end());
    }
    ds.norm = std::max(1.0, percentile(all, opts.norm_percentile));
    for (auto& p : ds.pairs)
        for (double& v : p.noisy.pixels) v = std::clamp(v / ds.norm, 0.0, 1.0);
    return ds;
}

Dataset synth_from_images(const std::vector<Image>& cleans, const FromImagesOptions& opts) {
    if (cleans.empty()) throw ConfigError("no clean images to synthesize from");
    if (opts.levels.empty()) throw ConfigError("dataset needs at least one noise level");
    if (opts.pairs_per_image == 0) throw ConfigError("pairs_per_image must be positive");
    Dataset ds;
    std::vector<double> all;
    for (std::size_t i = 0; i < cleans.size(); ++i) {
        for (double v : cleans[i].pixels)
            if (v < 0.0 || v > 1.0) throw RangeError("clean image " + std::to_string(i) + " has values outside [0, 1]");
        for (std::size_t l = 0; l < opts.levels.size(); ++l)
            for (std::size_t k = 0; k < opts.pairs_per_image; ++k) {
                const std::size_t index = (i * opts.levels.size() + l) * opts.pairs_per_image + k;
                PairSample p;
                p.seed = derive_seed(opts.seed, index);
                p.level = opts.levels[l];
                p.spec = opts.zero_noise ? NoiseSpec{0.0, 0.0, 0.0, p.level} : pair_noise_spec(p.level, p.seed);
                p.clean = cleans[i];
                p.noisy = noisy_map(p.clean, p.spec, derive_seed(p.seed, 2), opts.synth);
                all.insert(all.end(), p.noisy.pixels.begin(), p.noisy.pixels.end());
                ds.pairs.push_back(std::move(p));
            }
    }
    ds.norm = std::max(1.0, percentile(all, opts.norm_percentile));
    for (auto& p : ds.pairs)
        for (double& v : p.noisy.pixels) v = std::clamp(v / ds.norm, 0.0, 1.0);
    return ds;
}

namespace {

std::string indexed(const std::string& stem, std::size_t i) {
    std::ostringstream s;
    s << stem << "_" << std::setw(4) << std::setfill('0') << i << ".pgm";
    return s.str();
}

}  // namespace

std::vector<ManifestEntry> save_dataset(const std::filesystem::path& dir, const Dataset& data) {
    std::filesystem::create_directories(dir);
    std::vector<ManifestEntry> entries;
    nlohmann::json list = nlohmann::json::array();
    for (std::size_t i = 0; i < data.pairs.size(); ++i) {
        const auto& p = data.pairs[i];
        ManifestEntry e{indexed("clean", i), indexed("noisy", i), p.level, p.seed};
        write_pgm(dir / e.clean_path, p.clean);
        write_pgm(dir / e.noisy_path, p.noisy);
        list.push_back({{"clean_path", e.clean_path}, {"noisy_path", e.noisy_path}, {"level", to_string(e.level)}, {"seed", e.seed}});
        entries.push_back(std::move(e));
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << list.dump(2) << "\n";
    return entries;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot open " + manifest.string());
    nlohmann::json list;
    try {
        in >> list;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(manifest.string() + ": " + e.what());
    }
    if (!list.is_array()) throw IoError(manifest.string() + ": manifest must be a JSON list");
    std::vector<ManifestEntry> entries;
    for (const auto& item : list) {
        try {
            entries.push_back({item.at("clean_path").get<std::string>(), item.at("noisy_path").get<std::string>(),
                               parse_noise_level(item.at("level").get<std::string>()), item.at("seed").get<std::uint64_t>()});
        } catch (const nlohmann::json::exception& e) {
            throw IoError(manifest.string() + ": bad entry: " + e.what());
        }
    }
    return entries;
}

std::vector<PairSample> load_dataset(const std::filesystem::path& manifest) {
    const auto dir = manifest.parent_path();
    std::vector<PairSample> out;
    for (const auto& e : read_manifest(manifest)) {
        PairSample p;
        p.clean = read_pgm(dir / e.clean_path);
        p.noisy = read_pgm(dir / e.noisy_path);
        if (p.clean.height != p.noisy.height || p.clean.width != p.noisy.width)
            throw IoError(e.noisy_path + ": size differs from " + e.clean_path);
        p.level = e.level;
        p.seed = e.seed;
        p.spec = pair_noise_spec(e.level, e.seed);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace pamdn
