#include "pamdn/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "pamdn/error.hpp"

namespace pamdn {

Image Image::crop(std::size_t r0, std::size_t c0, std::size_t h, std::size_t w) const {
    if (r0 + h > height || c0 + w > width || h == 0 || w == 0) {
        std::ostringstream msg;
        msg << "crop " << h << "x" << w << " at (" << r0 << "," << c0 << ") outside " << height << "x" << width;
        throw DimensionError(msg.str());
    }
    Image out(h, w);
    for (std::size_t r = 0; r < h; ++r)
        std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>((r0 + r) * width + c0), w,
                    out.pixels.begin() + static_cast<std::ptrdiff_t>(r * w));
    return out;
}

Tensor to_tensor(const Image& img) { return Tensor(Shape{1, 1, img.height, img.width}, img.pixels); }

Image from_tensor(const Tensor& t, std::size_t n) {
    const auto& s = t.shape();
    if (s.rank() != 4 || s[1] != 1 || n >= s[0])
        throw DimensionError("expected an (N,1,H,W) tensor with sample " + std::to_string(n) + ", got " + s.str());
    Image img(s[2], s[3]);
    const auto src = t.data().subspan(n * img.size(), img.size());
    std::copy(src.begin(), src.end(), img.pixels.begin());
    return img;
}

Tensor stack_images(const std::vector<const Image*>& images) {
    if (images.empty()) throw DimensionError("cannot stack an empty image list");
    const std::size_t h = images[0]->height, w = images[0]->width;
    Tensor out(Shape{images.size(), 1, h, w});
    auto dst = out.data();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->height != h || images[i]->width != w) throw DimensionError("stacked images differ in size");
        std::copy(images[i]->pixels.begin(), images[i]->pixels.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * h * w));
    }
    return out;
}

void write_pgm(const std::filesystem::path& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "P5\n" << img.width << " " << img.height << "\n65535\n";
    std::vector<unsigned char> buf(img.size() * 2);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = std::clamp(std::isfinite(img.pixels[i]) ? img.pixels[i] : 0.0, 0.0, 1.0);
        const auto q = static_cast<unsigned>(std::lround(v * 65535.0));
        buf[2 * i] = static_cast<unsigned char>(q >> 8);
        buf[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            if (!tok.empty()) break;
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path) {
    const std::string tok = header_token(in);
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; }))
        throw IoError(path.string() + ": malformed PGM header");
    return std::stoul(tok);
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    if (header_token(in) != "P5") throw IoError(path.string() + ": not a binary PGM (P5)");
    const std::size_t w = header_number(in, path);
    const std::size_t h = header_number(in, path);
    const std::size_t maxval = header_number(in, path);
    if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw IoError(path.string() + ": bad PGM dimensions or maxval");
    const std::size_t bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(w * h * bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw IoError(path.string() + ": truncated PGM data");
    Image img(h, w);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const unsigned q = bytes == 2 ? (unsigned(buf[2 * i]) << 8) | buf[2 * i + 1] : buf[i];
        if (q > maxval) throw IoError(path.string() + ": sample exceeds maxval");
        img.pixels[i] = static_cast<double>(q) / static_cast<double>(maxval);
    }
    return img;
}

}  // namespace pamdn
