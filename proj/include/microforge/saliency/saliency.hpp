#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "microforge/transfer/regressor.hpp"

namespace mf::saliency {

/// |dMSE/dX| over the input pixels, X in [0, 1].
struct SaliencyMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // row-major, all >= 0
    int component = 0;
    std::string checkpoint_id;
    std::string image_id;
    bool standardized = true;  // loss on z-scored targets rather than GPa

    double at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
};

/// Maps a 1 x (H*W) row of row-major pixels in [0, 1] to a 1 x 3 prediction.
using PixelModel = std::function<ad::Tensor(const ad::Tensor& pixels)>;

/// Signed gradient of (prediction[component] - label)^2 with respect to
/// each pixel, row-major.
std::vector<double> loss_gradient(const PixelModel& model, const microgen::RasterImage& image, int component,
                                  double label);
double prediction_loss(const PixelModel& model, const microgen::RasterImage& image, int component, double label);

SaliencyMap compute(const PixelModel& model, const microgen::RasterImage& image, int component, double label);

/// Pixel model of a regressor: patchify, encode with all patches visible, head.
/// `reg` must outlive the returned function.
PixelModel pixel_model(const transfer::Regressor& reg);

/// Saliency of a fine-tuned model for one image. `label_gpa` is the ground
/// truth of the chosen component; with `standardized` the loss compares
/// z-scores (the training scale), otherwise GPa.
SaliencyMap saliency_map(const transfer::Regressor& reg, const microgen::RasterImage& image, int component,
                     double label_gpa, bool standardized = true);

struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // row-major RGB triples

    std::array<std::uint8_t, 3> at(int row, int col) const;
};

/// Cool-warm ramp: blue (59, 76, 192) at 0, gray (221, 221, 221) at 0.5,
/// red (180, 4, 38) at 1, linear in RGB between the stops.
std::array<double, 3> ramp(double t);

inline constexpr double kOverlayAlpha = 0.6;

/// Per-image min-max normalized map through the ramp, alpha-blended over the
/// grayscale image. A constant map renders at the ramp midpoint.
RgbImage render_overlay(const SaliencyMap& map, const microgen::RasterImage& image, double alpha = kOverlayAlpha);

void write_png(const std::filesystem::path& path, const RgbImage& image);
/// One line per image row, comma separated.
void write_map_csv(const std::filesystem::path& path, const SaliencyMap& map);

}  // namespace mf::saliency
