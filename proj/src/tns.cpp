#include "pamdn/tns.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "pamdn/error.hpp"

namespace pamdn {
namespace {

static_assert(std::endian::native == std::endian::little, ".tns I/O assumes a little-endian host");

constexpr std::array<char, 4> kMagic = {'T', 'N', 'S', '1'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError(path.string() + ": truncated .tns file");
    return v;
}

}  // namespace

void write_tns(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape().rank()));
    for (std::size_t d : t.shape().dims()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!os) throw IoError("failed writing " + path.string());
}

Tensor read_tns(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
        throw IoError(path.string() + ": bad magic bytes, not a .tns file");
    }
    const auto rank = get<std::uint32_t>(is, path);
    if (rank > Shape::kMaxRank) throw IoError(path.string() + ": rank " + std::to_string(rank) + " exceeds 4");
    std::array<std::size_t, Shape::kMaxRank> dims{};
    for (std::uint32_t i = 0; i < rank; ++i) {
        const auto d = get<std::uint64_t>(is, path);
        if (d == 0) throw IoError(path.string() + ": zero extent on axis " + std::to_string(i));
        dims[i] = d;
    }
    const Shape shape(std::span<const std::size_t>(dims.data(), rank));
    std::vector<double> data(shape.numel());
    if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)))) {
        throw IoError(path.string() + ": payload shorter than shape " + shape.str());
    }
    if (is.peek() != std::char_traits<char>::eof()) {
        throw IoError(path.string() + ": trailing bytes after payload of shape " + shape.str());
    }
    return Tensor(shape, std::move(data));
}

}  // namespace pamdn
