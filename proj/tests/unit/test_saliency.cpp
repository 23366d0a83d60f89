#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "microforge/common/rng.hpp"
#include "microforge/saliency/saliency.hpp"

using namespace mf;
using namespace mf::saliency;

namespace {

microgen::RasterImage random_image(int size, std::uint64_t seed) {
    Rng rng(seed);
    microgen::RasterImage img{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size))};
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    return img;
}

struct LinearPixelModel {
    ad::Tensor w;  // (H*W) x 3
    ad::Tensor b;  // 1 x 3

    static LinearPixelModel random(std::size_t n, std::uint64_t seed) {
        Rng rng(seed);
        std::vector<double> w(n * 3), b(3);
        for (double& x : w) x = rng.normal() / std::sqrt(static_cast<double>(n));
        for (double& x : b) x = rng.normal();
        return {ad::Tensor::from({n, 3}, std::move(w)), ad::Tensor::from({1, 3}, std::move(b))};
    }
    PixelModel fn() const {
        return [this](const ad::Tensor& x) { return ad::linear(x, w, b); };
    }
    double predict(const microgen::RasterImage& img, int c) const {
        double s = b.values()[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < img.pixels.size(); ++i) s += img.pixels[i] / 255.0 * w.at(i, static_cast<std::size_t>(c));
        return s;
    }
};

transfer::Regressor tiny_regressor(std::uint64_t seed) {
    mmae::MmaeConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.embed_dim = 16;
    c.encoder_depth = 2;
    c.encoder_heads = 2;
    c.decoder_dim = 8;
    c.decoder_depth = 1;
    c.decoder_heads = 2;
    c.mlp_ratio = 2;
    auto enc = mmae::Mmae::init(c, seed);
    Rng rng(seed + 1);
    for (auto p : enc.parameters()) {
        auto v = p.tensor.mutable_values();
        for (double& x : v) x += 0.1 * rng.normal();
    }
    transfer::Standardizer sc;
    sc.mean = {150, 140, 50};
    sc.scale = {20, 18, 6};
    return {enc, transfer::Head::init(transfer::HeadKind::feedforward, 16, 8, seed + 2), sc};
}

}  // namespace

TEST_CASE("linear model saliency equals |2 (y_hat - y) w|") {
    const auto img = random_image(12, 1);
    const auto lin = LinearPixelModel::random(144, 2);
    for (int c = 0; c < 3; ++c) {
        const double yhat = lin.predict(img, c), y = yhat + 0.37 * (c + 1);
        const SaliencyMap m = compute(lin.fn(), img, c, y);
        REQUIRE(m.values.size() == 144);
        CHECK(m.height == 12);
        CHECK(m.width == 12);
        for (std::size_t i = 0; i < 144; ++i) {
            const double expect = std::abs(2.0 * (yhat - y) * lin.w.at(i, static_cast<std::size_t>(c)));
            CHECK(std::abs(m.values[i] - expect) <= 1e-10);
        }
    }
}

TEST_CASE("zero residual gives a zero map and the map is linear in the residual") {
    const auto img = random_image(10, 3);
    const auto lin = LinearPixelModel::random(100, 4);
    const double yhat = lin.predict(img, 1);
    const SaliencyMap zero = compute(lin.fn(), img, 1, yhat);
    CHECK(std::all_of(zero.values.begin(), zero.values.end(), [](double v) { return std::abs(v) < 1e-13; }));

    const SaliencyMap one = compute(lin.fn(), img, 1, yhat - 0.5);
    const SaliencyMap two = compute(lin.fn(), img, 1, yhat - 1.0);
    for (std::size_t i = 0; i < one.values.size(); ++i) CHECK(std::abs(two.values[i] - 2.0 * one.values[i]) <= 1e-12);
}

TEST_CASE("regressor maps are non-negative, image shaped and pass the directional check") {
    const auto reg = tiny_regressor(5);
    const auto img = random_image(16, 6);
    for (int c = 0; c < 3; ++c) {
        const SaliencyMap m = saliency_map(reg, img, c, 140.0);
        CHECK(m.values.size() == 256);
        CHECK(m.height == 16);
        CHECK(std::all_of(m.values.begin(), m.values.end(), [](double v) { return v >= 0.0; }));
        CHECK(m.standardized);
        CHECK(*std::max_element(m.values.begin(), m.values.end()) > 0.0);
    }

    // Sum of signed pixel gradients vs the derivative along the all-ones direction.
    const PixelModel f = pixel_model(reg);
    const double label = 0.3;
    const auto g = loss_gradient(f, img, 0, label);
    double analytic = 0.0;
    for (double v : g) analytic += v;
    const double h = 1e-5;
    auto shifted = [&](double eps) {
        ad::NoGradGuard guard;
        std::vector<double> v(img.pixels.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = img.pixels[i] / 255.0 + eps;
        const ad::Tensor y = f(ad::Tensor::from({1, v.size()}, v));
        return (y.at(0, 0) - label) * (y.at(0, 0) - label);
    };
    const double numeric = (shifted(h) - shifted(-h)) / (2 * h);
    INFO(analytic << " vs " << numeric);
    CHECK(std::abs(analytic - numeric) <= 1e-6 * std::abs(numeric));

    // Pixel order: the model sees the same image as the patchified path.
    ad::NoGradGuard guard;
    const ad::Tensor direct = reg.forward(ad::Tensor::from({16, 16}, mmae::patchify(img, 4).values), 1);
    std::vector<double> px(img.pixels.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = img.pixels[i] / 255.0;
    const ad::Tensor via = f(ad::Tensor::from({1, px.size()}, px));
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(direct.values()[k] - via.values()[k]) < 1e-13);
}

TEST_CASE("GPa-scale maps are the standardized maps times the component scale squared") {
    const auto reg = tiny_regressor(7);
    const auto img = random_image(16, 8);
    const SaliencyMap z = saliency_map(reg, img, 2, 55.0, true);
    const SaliencyMap g = saliency_map(reg, img, 2, 55.0, false);
    CHECK_FALSE(g.standardized);
    for (std::size_t i = 0; i < z.values.size(); ++i) CHECK(g.values[i] == doctest::Approx(36.0 * z.values[i]).epsilon(1e-9));
}

TEST_CASE("invalid component is rejected") {
    const auto lin = LinearPixelModel::random(16, 9);
    CHECK_THROWS_AS(compute(lin.fn(), random_image(4, 1), 3, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(compute(lin.fn(), random_image(4, 1), -1, 0.0), std::invalid_argument);
}

TEST_CASE("overlay rendering") {
    const auto img = random_image(8, 10);
    SaliencyMap m{8, 8, std::vector<double>(64, 0.0)};
    const RgbImage zero = render_overlay(m, img);
    CHECK(zero.height == 8);
    CHECK(zero.width == 8);
    CHECK(zero.pixels.size() == 3 * 64);
    const auto mid = ramp(0.5);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c)
            for (std::size_t ch = 0; ch < 3; ++ch)
                CHECK(zero.at(r, c)[ch] == std::lround((1 - kOverlayAlpha) * img.at(r, c) + kOverlayAlpha * mid[ch]));

    Rng rng(11);
    for (double& v : m.values) v = rng.uniform();
    SaliencyMap scaled = m;
    for (double& v : scaled.values) v *= 10.0;
    CHECK(render_overlay(m, img).pixels == render_overlay(scaled, img).pixels);

    CHECK(ramp(0.0) == std::array<double, 3>{59, 76, 192});
    CHECK(ramp(1.0) == std::array<double, 3>{180, 4, 38});
    SaliencyMap wrong{4, 4, std::vector<double>(16)};
    CHECK_THROWS_AS(render_overlay(wrong, img), std::invalid_argument);
}

TEST_CASE("png and csv writers") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mf_test_saliency";
    fs::create_directories(dir);
    const auto img = random_image(8, 12);
    SaliencyMap m{8, 8, std::vector<double>(64)};
    for (std::size_t i = 0; i < 64; ++i) m.values[i] = 0.125 * static_cast<double>(i);
    write_png(dir / "o.png", render_overlay(m, img));
    std::ifstream png(dir / "o.png", std::ios::binary);
    char sig[8];
    png.read(sig, 8);
    CHECK(std::string(sig + 1, 3) == "PNG");

    write_map_csv(dir / "m.csv", m);
    std::ifstream csv(dir / "m.csv");
    std::string line;
    int rows = 0;
    std::getline(csv, line);
    CHECK(line.substr(0, 12) == "0,0.125,0.25");
    for (++rows; std::getline(csv, line);) ++rows;
    CHECK(rows == 8);
    fs::remove_all(dir);
}
