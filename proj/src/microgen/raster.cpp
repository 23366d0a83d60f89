#include "microforge/microgen/raster.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mf::microgen {

double RasterImage::inclusion_fraction() const noexcept {
    if (pixels.empty()) return 0.0;
    std::size_t on = 0;
    for (auto p : pixels) on += p >= 128;
    return static_cast<double>(on) / static_cast<double>(pixels.size());
}

RasterImage rasterize(const Rve& rve, int resolution) {
    if (resolution < 16) throw std::invalid_argument("rasterize: resolution must be at least 16");
    RasterImage img;
    img.height = img.width = resolution;
    img.pixels.assign(static_cast<std::size_t>(resolution) * resolution, kMatrixPixel);
    const double r = resolution;
    for (const auto& e : rve.inclusions) {
        const double c = std::cos(e.theta), s = std::sin(e.theta);
        const double ex = std::sqrt(e.a * e.a * c * c + e.b * e.b * s * s);
        const double ey = std::sqrt(e.a * e.a * s * s + e.b * e.b * c * c);
        // Unwrapped index ranges; wrapping happens on store.
        const int j0 = static_cast<int>(std::floor((e.x - ex) * r - 0.5));
        const int j1 = static_cast<int>(std::ceil((e.x + ex) * r - 0.5));
        const int i0 = static_cast<int>(std::floor((e.y - ey) * r - 0.5));
        const int i1 = static_cast<int>(std::ceil((e.y + ey) * r - 0.5));
        for (int i = i0; i <= i1; ++i) {
            const double py = (i + 0.5) / r;
            const int row = ((i % resolution) + resolution) % resolution;
            for (int j = j0; j <= j1; ++j) {
                const double px = (j + 0.5) / r;
                if (e.contains_offset(px - e.x, py - e.y)) {
                    const int col = ((j % resolution) + resolution) % resolution;
                    img.pixels[static_cast<std::size_t>(row) * resolution + col] = kInclusionPixel;
                }
            }
        }
    }
    return img;
}

void write_pgm(const std::filesystem::path& path, const RasterImage& image) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm: cannot open " + path.string());
    os << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!os) throw std::runtime_error("write_pgm: write failed for " + path.string());
}

namespace {

// Reads the next whitespace-delimited header token, skipping # comments.
std::string header_token(std::istream& is) {
    std::string tok;
    char ch;
    while (is.get(ch)) {
        if (ch == '#') {
            std::string rest;
            std::getline(is, rest);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(ch);
    }
    return tok;
}

}  // namespace

RasterImage read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_pgm: cannot open " + path.string());
    if (header_token(is) != "P5") throw std::runtime_error("read_pgm: " + path.string() + " is not a binary PGM");
    RasterImage img;
    try {
        img.width = std::stoi(header_token(is));
        img.height = std::stoi(header_token(is));
        if (std::stoi(header_token(is)) != 255) throw std::runtime_error("maxval");
    } catch (const std::exception&) {
        throw std::runtime_error("read_pgm: malformed header in " + path.string());
    }
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (is.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
        throw std::runtime_error("read_pgm: truncated pixel data in " + path.string());
    }
    return img;
}

}  // namespace mf::microgen
