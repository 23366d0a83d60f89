#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "microforge/microgen/geometry.hpp"

namespace mf::microgen {

inline constexpr std::uint8_t kMatrixPixel = 0;
inline constexpr std::uint8_t kInclusionPixel = 255;

/// 8-bit grayscale image, row-major. Row index runs along y, column along x.
struct RasterImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
    /// Fraction of pixels at or above the 128 threshold.
    double inclusion_fraction() const noexcept;
    bool operator==(const RasterImage&) const = default;
};

/// Pixel is 255 iff its centre lies inside a (periodically wrapped) inclusion.
RasterImage rasterize(const Rve& rve, int resolution);

/// Binary PGM (P5), maxval 255.
void write_pgm(const std::filesystem::path& path, const RasterImage& image);
RasterImage read_pgm(const std::filesystem::path& path);

}  // namespace mf::microgen
