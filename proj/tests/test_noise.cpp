#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "doctest.h"
#include "pamdn/error.hpp"
#include "pamdn/noise.hpp"
#include "test_util.hpp"

using namespace pamdn;
using namespace pamdn::testing;

namespace {

struct Moments {
    double mean = 0, var = 0;
};

Moments moments(const std::vector<double>& v) {
    Moments m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    for (double x : v) m.var += (x - m.mean) * (x - m.mean);
    m.var /= static_cast<double>(v.size() - 1);
    return m;
}

// Noise residual of a constant volume with n samples.
std::vector<double> residual(double level, const NoiseSpec& spec, std::size_t n, std::uint64_t seed) {
    AlineVolume vol(1, 1, n);
    std::fill(vol.data.begin(), vol.data.end(), level);
    const auto out = add_noise(vol, spec, seed);
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = out.data[i] - level;
    return r;
}

double psnr(const Image& a, const Image& b) {
    double mse = 0;
    for (std::size_t i = 0; i < a.size(); ++i) mse += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
    return 10 * std::log10(1.0 / (mse / static_cast<double>(a.size())));
}

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    Image img(h, w);
    for (double& v : img.pixels) v = u(rng) < 0.3 ? 0.0 : u(rng);
    return img;
}

}  // namespace

TEST_CASE("phantom: deterministic, bounded, foreground in range") {
    const auto spec = PhantomSpec::defaults(PhantomKind::kVeins, 64, 64, 7);
    const Image a = gen_phantom(spec);
    CHECK(a == gen_phantom(spec));
    auto other = spec;
    other.seed = 8;
    CHECK_FALSE(a == gen_phantom(other));
    for (double v : a.pixels) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    for (auto kind : {PhantomKind::kVeins, PhantomKind::kVessels}) {
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            const double f = foreground_fraction(gen_phantom(PhantomSpec::defaults(kind, 64, 64, seed)));
            CAPTURE(seed);
            CHECK(f >= 0.01);
            CHECK(f <= 0.40);
        }
    }
    CHECK(gen_phantom(PhantomSpec::defaults(PhantomKind::kVessels, 40, 96, 1)).width == 96);
}

TEST_CASE("phantom: degenerate specs are rejected") {
    auto spec = PhantomSpec::defaults(PhantomKind::kVeins, 64, 64, 1);
    spec.branch_min = spec.branch_max = 0;
    CHECK_THROWS_AS(gen_phantom(spec), ConfigError);
    CHECK_THROWS_AS(gen_phantom(PhantomSpec::defaults(PhantomKind::kVeins, 31, 64, 1)), ConfigError);
    spec = PhantomSpec::defaults(PhantomKind::kVeins, 64, 64, 1);
    spec.branch_min = 5;
    spec.branch_max = 2;
    CHECK_THROWS_AS(gen_phantom(spec), ConfigError);
    CHECK(parse_phantom_kind("vessels") == PhantomKind::kVessels);
    CHECK_THROWS_AS(parse_phantom_kind("leaves"), ConfigError);
}

TEST_CASE("lift then MAP reproduces the image") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Image img = random_image(20, 33, seed);
        const Image back = map_project(lift_to_volume(img, 32, 1.5, seed));
        for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back.pixels[i] - img.pixels[i]) <= 1e-9);
    }
    const auto phantom = gen_phantom(PhantomSpec::defaults(PhantomKind::kVessels, 64, 64, 3));
    CHECK(map_project(lift_to_volume(phantom, 16, 1.0, 9)) == phantom);
}

TEST_CASE("lift: zero image, pulse shape, depth field") {
    const auto zero_vol = lift_to_volume(Image(8, 8), 32, 1.5, 1);
    for (double v : zero_vol.data) CHECK(v == 0.0);

    const Image img = random_image(16, 16, 4);
    const double sigma = 2.0;
    const auto vol = lift_to_volume(img, 24, sigma, 5);
    const auto depths = pulse_depths(16, 16, 24, sigma, 5);
    for (std::size_t i = 0; i < 16; ++i) {
        for (std::size_t j = 0; j < 16; ++j) {
            const int d = depths[i * 16 + j];
            CHECK(d >= 6);
            CHECK(d <= 17);
            for (std::size_t z = 0; z < 24; ++z) {
                const double dz = static_cast<double>(z) - d;
                const double expect = img.at(i, j) * std::exp(-dz * dz / (2 * sigma * sigma));
                CHECK(vol.at(i, j, z) == doctest::Approx(expect).epsilon(1e-14));
            }
            // Neighbouring A-lines sit at nearby depths.
            if (j + 1 < 16) CHECK(std::abs(d - depths[i * 16 + j + 1]) <= 2);
            if (i + 1 < 16) CHECK(std::abs(d - depths[(i + 1) * 16 + j]) <= 2);
        }
    }
    CHECK_THROWS_AS(lift_to_volume(img, 8, 2.0, 1), ConfigError);
    CHECK_THROWS_AS(lift_to_volume(img, 3, 0.1, 1), ConfigError);
    CHECK_THROWS_AS(lift_to_volume(img, 32, 0.0, 1), ConfigError);
}

TEST_CASE("map_project: absolute maximum, annihilator, monotone") {
    AlineVolume v(1, 1, 3);
    v.data = {0.1, -0.9, 0.3};
    CHECK(map_project(v).pixels[0] == 0.9);
    for (double p : map_project(AlineVolume(3, 4, 5)).pixels) CHECK(p == 0.0);

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1, 1);
    AlineVolume vol(4, 4, 6);
    for (double& x : vol.data) x = u(rng);
    const Image base = map_project(vol);
    for (int trial = 0; trial < 200; ++trial) {
        AlineVolume raised = vol;
        const std::size_t k = std::uniform_int_distribution<std::size_t>(0, vol.data.size() - 1)(rng);
        double& s = raised.data[k];
        s = (s < 0 ? -1 : 1) * (std::abs(s) + std::abs(u(rng)));
        const Image after = map_project(raised);
        const std::size_t px = k / 6;
        CHECK(after.pixels[px] >= base.pixels[px]);
    }
}

TEST_CASE("add_noise: zero spec is the exact identity, draws are seeded") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-0.5, 1.0);
    AlineVolume vol(5, 6, 8);
    for (double& x : vol.data) x = u(rng);
    CHECK(add_noise(vol, NoiseSpec{}, 99) == vol);

    const NoiseSpec spec{0.1, 500, 0.02, NoiseLevel::kMid};
    CHECK(add_noise(vol, spec, 3) == add_noise(vol, spec, 3));
    CHECK_FALSE(add_noise(vol, spec, 3) == add_noise(vol, spec, 4));
    CHECK_THROWS_AS(add_noise(vol, NoiseSpec{-0.1, 0, 0, NoiseLevel::kLow}, 1), ConfigError);
}

TEST_CASE("add_noise: Gaussian component std") {
    const auto r = residual(0.3, NoiseSpec{0.1, 0, 0, NoiseLevel::kLow}, 1'000'000, 21);
    const auto m = moments(r);
    CHECK(std::abs(std::sqrt(m.var) - 0.1) / 0.1 < 0.01);
    CHECK(std::abs(m.mean) < 0.001);
}

TEST_CASE("add_noise: Rayleigh component mean and variance") {
    const double s = 0.05;
    const auto m = moments(residual(0.2, NoiseSpec{0, 0, s, NoiseLevel::kLow}, 1'000'000, 22));
    const double mean = s * std::sqrt(std::numbers::pi / 2);
    const double var = (2 - std::numbers::pi / 2) * s * s;
    CHECK(std::abs(m.mean - mean) / mean < 0.01);
    CHECK(std::abs(m.var - var) / var < 0.01);
    for (double x : residual(0.0, NoiseSpec{0, 0, s, NoiseLevel::kLow}, 10000, 23)) CHECK(x >= 0.0);
}

TEST_CASE("add_noise: Poisson component mean and variance") {
    const double x = 0.4, s = 250;
    const auto m = moments(residual(x, NoiseSpec{0, s, 0, NoiseLevel::kLow}, 1'000'000, 24));
    CHECK(std::abs(m.mean) < 0.01 * x);
    CHECK(std::abs(m.var - x / s) / (x / s) < 0.01);
    // Negative samples carry no signal-dependent noise.
    for (double r : residual(-0.3, NoiseSpec{0, s, 0, NoiseLevel::kLow}, 1000, 25)) CHECK(r == 0.0);
}

TEST_CASE("add_noise: independent across A-lines") {
    const std::size_t n = 100'000;
    AlineVolume vol(1, 2, n);
    std::fill(vol.data.begin(), vol.data.end(), 0.5);
    const auto out = add_noise(vol, NoiseSpec{0.1, 800, 0.02, NoiseLevel::kMid}, 26);
    std::vector<double> a(out.data.begin(), out.data.begin() + n), b(out.data.begin() + n, out.data.end());
    const auto ma = moments(a), mb = moments(b);
    double cov = 0;
    for (std::size_t i = 0; i < n; ++i) cov += (a[i] - ma.mean) * (b[i] - mb.mean);
    cov /= static_cast<double>(n - 1);
    CHECK(std::abs(cov / std::sqrt(ma.var * mb.var)) < 0.01);
}

TEST_CASE("sample_noise_spec: ranges, tagging, determinism") {
    const auto low = level_ranges(NoiseLevel::kLow);
    CHECK(low.gaussian_lo == 0.02);
    CHECK(low.gaussian_hi == 0.06);
    for (auto level : {NoiseLevel::kLow, NoiseLevel::kMid, NoiseLevel::kHigh}) {
        const auto r = level_ranges(level);
        // Rayleigh band is a quarter of the Gaussian band.
        CHECK(r.rayleigh_lo == doctest::Approx(r.gaussian_lo / 4));
        CHECK(r.rayleigh_hi == doctest::Approx(r.gaussian_hi / 4));
        for (std::uint64_t seed = 0; seed < 200; ++seed) {
            const auto s = sample_noise_spec(level, seed);
            CHECK(s.level == level);
            CHECK(s.gaussian_sigma >= r.gaussian_lo);
            CHECK(s.gaussian_sigma <= r.gaussian_hi);
            CHECK(s.poisson_scale >= r.poisson_lo);
            CHECK(s.poisson_scale <= r.poisson_hi);
            CHECK(s.rayleigh_sigma >= r.rayleigh_lo);
            CHECK(s.rayleigh_sigma <= r.rayleigh_hi);
        }
    }
    const auto a = sample_noise_spec(NoiseLevel::kMid, 5), b = sample_noise_spec(NoiseLevel::kMid, 5);
    CHECK(a.gaussian_sigma == b.gaussian_sigma);
    CHECK(a.poisson_scale == b.poisson_scale);
    CHECK(a.rayleigh_sigma == b.rayleigh_sigma);
    CHECK(parse_noise_level(to_string(NoiseLevel::kHigh)) == NoiseLevel::kHigh);
    CHECK_THROWS_AS(parse_noise_level("severe"), ConfigError);
}

TEST_CASE("make_pair: identity, determinism, level ordering") {
    const Image clean = gen_phantom(PhantomSpec::defaults(PhantomKind::kVeins, 64, 64, 2));
    const auto [noisy0, clean0] = make_pair(clean, NoiseSpec{}, 4);
    CHECK(clean0 == clean);
    for (std::size_t i = 0; i < clean.size(); ++i) CHECK(std::abs(noisy0.pixels[i] - clean.pixels[i]) <= 1e-9);

    const auto spec = sample_noise_spec(NoiseLevel::kMid, 1);
    CHECK(make_pair(clean, spec, 8).first == make_pair(clean, spec, 8).first);
    for (double v : make_pair(clean, spec, 8, 1.3).first.pixels) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    double mean_psnr[3] = {0, 0, 0};
    for (int level = 0; level < 3; ++level) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto s = sample_noise_spec(static_cast<NoiseLevel>(level), seed);
            mean_psnr[level] += psnr(make_pair(clean, s, seed).first, clean) / 20;
        }
    }
    CHECK(mean_psnr[0] > mean_psnr[1]);
    CHECK(mean_psnr[1] > mean_psnr[2]);

    Image bad = clean;
    bad.pixels[0] = 1.5;
    CHECK_THROWS_AS(make_pair(bad, spec, 1), RangeError);
}

TEST_CASE("percentile matches linear interpolation") {
    const std::vector<double> v = {4, 1, 3, 2};
    CHECK(percentile(v, 50) == 2.5);
    CHECK(percentile(v, 0) == 1);
    CHECK(percentile(v, 100) == 4);
    CHECK(percentile(v, 25) == doctest::Approx(1.75));
    CHECK_THROWS_AS(percentile(std::vector<double>{}, 50), RangeError);
}

TEST_CASE("synth_dataset: normalized, deterministic, levels cycle") {
    DatasetOptions opts;
    opts.count = 6;
    opts.height = opts.width = 32;
    opts.seed = 17;
    const Dataset a = synth_dataset(opts);
    const Dataset b = synth_dataset(opts);
    CHECK(a.norm >= 1.0);
    CHECK(a.norm == b.norm);
    REQUIRE(a.pairs.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(a.pairs[i].noisy == b.pairs[i].noisy);
        CHECK(a.pairs[i].level == static_cast<NoiseLevel>(i % 3));
        for (double v : a.pairs[i].noisy.pixels) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    // One pair regenerates independently of the rest of the set.
    const PairSample p4 = synth_pair(opts, 4);
    CHECK(p4.clean == a.pairs[4].clean);
}

TEST_CASE("PGM: round trip, header, errors") {
    TempDir dir("pgm");
    Image img(3, 5);
    for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<double>(i) / 14.0;
    img.pixels[0] = -0.2;  // clamps to 0
    write_pgm(dir.path() / "a.pgm", img);
    const Image back = read_pgm(dir.path() / "a.pgm");
    CHECK(back.height == 3);
    CHECK(back.width == 5);
    CHECK(back.pixels[0] == 0.0);
    for (std::size_t i = 1; i < img.size(); ++i) CHECK(std::abs(back.pixels[i] - img.pixels[i]) <= 0.5 / 65535 + 1e-15);

    std::ifstream in(dir.path() / "a.pgm", std::ios::binary);
    std::string header((std::istreambuf_iterator<char>(in)), {});
    CHECK(header.rfind("P5\n5 3\n65535\n", 0) == 0);
    CHECK(header.size() == 13 + 30);
    // Last sample is 1.0 -> 0xffff, big-endian.
    CHECK(static_cast<unsigned char>(header[header.size() - 2]) == 0xff);

    {
        std::ofstream out(dir.path() / "b.pgm", std::ios::binary);
        out << "P5\n# comment\n2 1\n255\n";
        out.put(static_cast<char>(0));
        out.put(static_cast<char>(255));
    }
    const Image eight = read_pgm(dir.path() / "b.pgm");
    CHECK(eight.pixels == std::vector<double>{0.0, 1.0});

    {
        std::ofstream out(dir.path() / "c.pgm", std::ios::binary);
        out << "P2\n2 1\n255\n0 1\n";
    }
    CHECK_THROWS_AS(read_pgm(dir.path() / "c.pgm"), IoError);
    {
        std::ofstream out(dir.path() / "d.pgm", std::ios::binary);
        out << "P5\n4 4\n65535\n";
        out.put('x');
    }
    CHECK_THROWS_AS(read_pgm(dir.path() / "d.pgm"), IoError);
    CHECK_THROWS_AS(read_pgm(dir.path() / "missing.pgm"), IoError);
}

TEST_CASE("dataset files and volumes round trip") {
    TempDir dir("ds");
    DatasetOptions opts;
    opts.count = 3;
    opts.height = opts.width = 32;
    opts.seed = 2;
    const Dataset ds = synth_dataset(opts);
    const auto entries = save_dataset(dir.path(), ds);
    const auto read = read_manifest(dir.path() / "manifest.json");
    REQUIRE(read.size() == 3);
    CHECK(read[1].clean_path == "clean_0001.pgm");
    CHECK(read[1].noisy_path == "noisy_0001.pgm");
    CHECK(read[1].level == NoiseLevel::kMid);
    CHECK(read[1].seed == entries[1].seed);
    const auto loaded = load_dataset(dir.path() / "manifest.json");
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t k = 0; k < loaded[i].clean.size(); ++k)
            CHECK(std::abs(loaded[i].clean.pixels[k] - ds.pairs[i].clean.pixels[k]) <= 0.5 / 65535 + 1e-15);
        CHECK(loaded[i].spec.gaussian_sigma == ds.pairs[i].spec.gaussian_sigma);
    }

    AlineVolume vol(2, 3, 4);
    for (std::size_t i = 0; i < vol.data.size(); ++i) vol.data[i] = std::sin(static_cast<double>(i));
    save_volume(dir.path() / "v.tns", vol);
    CHECK(load_volume(dir.path() / "v.tns") == vol);

    {
        std::ofstream out(dir.path() / "bad.json");
        out << "{\"not\": \"a list\"}";
    }
    CHECK_THROWS_AS(read_manifest(dir.path() / "bad.json"), IoError);
}

TEST_CASE("image helpers") {
    Image img(4, 5);
    for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<double>(i);
    const Image c = img.crop(1, 2, 2, 3);
    CHECK(c.pixels == std::vector<double>{7, 8, 9, 12, 13, 14});
    CHECK_THROWS_AS(img.crop(3, 0, 2, 1), DimensionError);
    CHECK(from_tensor(to_tensor(img)) == img);
    const Tensor st = stack_images({&img, &img});
    CHECK(st.shape() == Shape{2, 1, 4, 5});
    CHECK(from_tensor(st, 1) == img);
    Image other(2, 2);
    CHECK_THROWS_AS(stack_images({&img, &other}), DimensionError);
}
