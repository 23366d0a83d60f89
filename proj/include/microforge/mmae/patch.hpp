#pragma once

#include <cstdint>
#include <vector>

#include "microforge/microgen/raster.hpp"

namespace mf::mmae {

/// Row-major token matrix: n_patches rows of patch_size^2 values.
struct TokenMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Row i is the row-major flattening of patch i; patches are ordered row-major
/// over the grid. Pixel values are mapped to [0, 1].
TokenMatrix patchify(const microgen::RasterImage& image, int patch_size);
/// Inverse of patchify; values are mapped back to 0..255 with rounding.
microgen::RasterImage unpatchify(const TokenMatrix& tokens, int image_size, int patch_size);

struct MaskPlan {
    std::size_t n_patches = 0;
    std::vector<std::size_t> visible;  // sorted
    std::vector<std::size_t> masked;   // sorted complement
    std::uint64_t seed = 0;
};

/// floor((1 - ratio) * n), guarded against representation error in the ratio.
std::size_t visible_count(std::size_t n_patches, double mask_ratio);

/// Uniformly random subset of visible patches. Throws std::invalid_argument
/// unless 0 < ratio < 1 and both sets end up non-empty.
MaskPlan sample_mask(std::size_t n_patches, double mask_ratio, std::uint64_t seed);

/// Every patch visible; used when encoding for downstream tasks.
MaskPlan full_plan(std::size_t n_patches);

}  // namespace mf::mmae
