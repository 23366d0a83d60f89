#include "microforge/saliency/saliency.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

namespace mf::saliency {

namespace {

ad::Tensor pixel_tensor(const microgen::RasterImage& image) {
    std::vector<double> v(image.pixels.size());
    std::transform(image.pixels.begin(), image.pixels.end(), v.begin(), [](std::uint8_t p) { return p / 255.0; });
    const std::size_t n = v.size();
    return ad::Tensor::from({1, n}, std::move(v), true);
}

ad::Tensor component_loss(const ad::Tensor& pred, int component, double label) {
    if (pred.rank() != 2 || pred.rows() != 1 || pred.cols() != 3) {
        throw ad::ShapeError("saliency: model must return a 1 x 3 prediction, got " + ad::shape_str(pred.shape()));
    }
    const std::size_t c = static_cast<std::size_t>(component);
    const ad::Tensor y = ad::gather_rows(ad::transpose(pred), std::span<const std::size_t>(&c, 1));
    return ad::mse(y, ad::Tensor::from({1, 1}, {label}));
}

void check_component(int component) {
    if (component < 0 || component > 2) {
        throw std::invalid_argument("saliency: component must be c1111, c2222 or c1212 (index 0..2), got " +
                                    std::to_string(component));
    }
}

}  // namespace

std::vector<double> loss_gradient(const PixelModel& model, const microgen::RasterImage& image, int component,
                                  double label) {
    check_component(component);
    ad::Tensor x = pixel_tensor(image);
    ad::backward(component_loss(model(x), component, label));
    if (!x.has_grad()) return std::vector<double>(x.size(), 0.0);
    return {x.grad().begin(), x.grad().end()};
}

double prediction_loss(const PixelModel& model, const microgen::RasterImage& image, int component, double label) {
    check_component(component);
    ad::NoGradGuard guard;
    return component_loss(model(pixel_tensor(image)), component, label).item();
}

SaliencyMap compute(const PixelModel& model, const microgen::RasterImage& image, int component, double label) {
    SaliencyMap m;
    m.height = image.height;
    m.width = image.width;
    m.component = component;
    m.values = loss_gradient(model, image, component, label);
    for (double& v : m.values) v = std::abs(v);
    return m;
}

PixelModel pixel_model(const transfer::Regressor& reg) {
    const mmae::MmaeConfig& cfg = reg.encoder.config();
    const std::size_t size = static_cast<std::size_t>(cfg.image_size), p = static_cast<std::size_t>(cfg.patch_size);
    const std::size_t g = size / p;
    // Token (patch, offset) <- pixel (row, col).
    std::vector<std::size_t> order;
    order.reserve(size * size);
    for (std::size_t patch = 0; patch < g * g; ++patch)
        for (std::size_t off = 0; off < p * p; ++off)
            order.push_back(((patch / g) * p + off / p) * size + (patch % g) * p + off % p);
    return [&reg, order, size, p](const ad::Tensor& pixels) {
        if (pixels.size() != size * size) throw ad::ShapeError("saliency: image does not match the model size");
        const ad::Tensor col = ad::reshape(pixels, {size * size, 1});
        const ad::Tensor tokens = ad::reshape(ad::gather_rows(col, order), {size * size / (p * p), p * p});
        return reg.forward(tokens, 1);
    };
}

SaliencyMap saliency_map(const transfer::Regressor& reg, const microgen::RasterImage& image, int component,
                     double label_gpa, bool standardized) {
    check_component(component);
    const std::size_t c = static_cast<std::size_t>(component);
    const double mean = reg.scaler.mean[c], scale = reg.scaler.scale[c];
    const PixelModel base = pixel_model(reg);
    SaliencyMap m;
    if (standardized) {
        m = compute(base, image, component, (label_gpa - mean) / scale);
    } else {
        const ad::Tensor shift = ad::Tensor::from({1, 3}, {reg.scaler.mean[0], reg.scaler.mean[1], reg.scaler.mean[2]});
        const ad::Tensor gain = ad::Tensor::from({1, 3}, {reg.scaler.scale[0], reg.scaler.scale[1], reg.scaler.scale[2]});
        m = compute([&](const ad::Tensor& x) { return ad::add(ad::mul(base(x), gain), shift); }, image, component,
                    label_gpa);
    }
    m.standardized = standardized;
    return m;
}

std::array<std::uint8_t, 3> RgbImage::at(int row, int col) const {
    const std::size_t i = 3 * (static_cast<std::size_t>(row) * width + col);
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

std::array<double, 3> ramp(double t) {
    static constexpr std::array<double, 3> cool{59, 76, 192}, mid{221, 221, 221}, warm{180, 4, 38};
    t = std::clamp(t, 0.0, 1.0);
    const auto& a = t < 0.5 ? cool : mid;
    const auto& b = t < 0.5 ? mid : warm;
    const double s = t < 0.5 ? 2.0 * t : 2.0 * t - 1.0;
    return {a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2])};
}

RgbImage render_overlay(const SaliencyMap& map, const microgen::RasterImage& image, double alpha) {
    if (map.height != image.height || map.width != image.width) {
        throw std::invalid_argument("render_overlay: map and image sizes differ");
    }
    const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
    const double min = map.values.empty() ? 0.0 : *lo, range = map.values.empty() ? 0.0 : *hi - *lo;
    RgbImage out{image.height, image.width, std::vector<std::uint8_t>(3 * image.pixels.size())};
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        const double t = range > 0.0 ? (map.values[i] - min) / range : 0.5;
        const auto rgb = ramp(t);
        for (std::size_t ch = 0; ch < 3; ++ch) {
            const double v = (1.0 - alpha) * image.pixels[i] + alpha * rgb[ch];
            out.pixels[3 * i + ch] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
        }
    }
    return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw std::runtime_error("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png: out of memory");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < image.height; ++r) {
        png_write_row(png, image.pixels.data() + 3 * static_cast<std::size_t>(r) * static_cast<std::size_t>(image.width));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void write_map_csv(const std::filesystem::path& path, const SaliencyMap& map) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    char buf[40];
    for (int r = 0; r < map.height; ++r) {
        for (int c = 0; c < map.width; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", map.at(r, c));
            os << (c ? "," : "") << buf;
        }
        os << '\n';
    }
}

}  // namespace mf::saliency
