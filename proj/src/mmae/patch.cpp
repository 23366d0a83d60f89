#include "microforge/mmae/patch.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "microforge/common/rng.hpp"

namespace mf::mmae {

TokenMatrix patchify(const microgen::RasterImage& image, int patch_size) {
    if (patch_size < 1 || image.width != image.height || image.width % patch_size != 0) {
        throw std::invalid_argument("patchify: " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                                    " image does not tile into " + std::to_string(patch_size) + "px patches");
    }
    const int g = image.width / patch_size;
    const auto p = static_cast<std::size_t>(patch_size);
    TokenMatrix t{static_cast<std::size_t>(g) * static_cast<std::size_t>(g), p * p, {}};
    t.values.resize(t.rows * t.cols);
    for (int gr = 0; gr < g; ++gr) {
        for (int gc = 0; gc < g; ++gc) {
            double* row = &t.values[(static_cast<std::size_t>(gr * g + gc)) * t.cols];
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x)
                    row[static_cast<std::size_t>(y * patch_size + x)] =
                        image.at(gr * patch_size + y, gc * patch_size + x) / 255.0;
        }
    }
    return t;
}

microgen::RasterImage unpatchify(const TokenMatrix& tokens, int image_size, int patch_size) {
    const int g = image_size / patch_size;
    if (patch_size < 1 || image_size % patch_size != 0 || tokens.rows != static_cast<std::size_t>(g * g) ||
        tokens.cols != static_cast<std::size_t>(patch_size * patch_size)) {
        throw std::invalid_argument("unpatchify: token matrix does not match the image geometry");
    }
    microgen::RasterImage img;
    img.height = img.width = image_size;
    img.pixels.resize(static_cast<std::size_t>(image_size) * static_cast<std::size_t>(image_size));
    for (int gr = 0; gr < g; ++gr)
        for (int gc = 0; gc < g; ++gc)
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x) {
                    const double v = tokens.at(static_cast<std::size_t>(gr * g + gc),
                                               static_cast<std::size_t>(y * patch_size + x));
                    img.pixels[static_cast<std::size_t>((gr * patch_size + y) * image_size + gc * patch_size + x)] =
                        static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
                }
    return img;
}

std::size_t visible_count(std::size_t n_patches, double mask_ratio) {
    return static_cast<std::size_t>(std::floor((1.0 - mask_ratio) * static_cast<double>(n_patches) + 1e-9));
}

MaskPlan sample_mask(std::size_t n_patches, double mask_ratio, std::uint64_t seed) {
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw std::invalid_argument("sample_mask: ratio must lie in (0, 1)");
    const std::size_t nv = visible_count(n_patches, mask_ratio);
    if (nv == 0 || nv == n_patches) {
        throw std::invalid_argument("sample_mask: ratio " + std::to_string(mask_ratio) + " over " +
                                    std::to_string(n_patches) + " patches leaves an empty visible or masked set");
    }
    std::vector<std::size_t> perm(n_patches);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(perm));
    MaskPlan plan{n_patches, {perm.begin(), perm.begin() + static_cast<long>(nv)},
                  {perm.begin() + static_cast<long>(nv), perm.end()}, seed};
    std::sort(plan.visible.begin(), plan.visible.end());
    std::sort(plan.masked.begin(), plan.masked.end());
    return plan;
}

MaskPlan full_plan(std::size_t n_patches) {
    MaskPlan plan;
    plan.n_patches = n_patches;
    plan.visible.resize(n_patches);
    std::iota(plan.visible.begin(), plan.visible.end(), std::size_t{0});
    return plan;
}

}  // namespace mf::mmae
