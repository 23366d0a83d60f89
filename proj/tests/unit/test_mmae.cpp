#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "gradcheck.hpp"
#include "microforge/mmae/train.hpp"

using namespace mf;
using namespace mf::mmae;
using mf::testing::grad_check;

namespace {

MmaeConfig tiny_config() {
    MmaeConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.embed_dim = 16;
    c.encoder_depth = 2;
    c.encoder_heads = 2;
    c.decoder_dim = 12;
    c.decoder_depth = 1;
    c.decoder_heads = 2;
    c.mlp_ratio = 2;
    c.mask_ratio = 0.75;
    return c;
}

TokenMatrix random_tokens(const MmaeConfig& c, Rng& rng) {
    TokenMatrix t{c.n_patches(), c.patch_dim(), std::vector<double>(c.n_patches() * c.patch_dim())};
    for (double& v : t.values) v = rng.uniform();
    return t;
}

microgen::RasterImage random_binary_image(int size, Rng& rng) {
    microgen::RasterImage img{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size))};
    for (auto& p : img.pixels) p = rng.uniform() < 0.3 ? 255 : 0;
    return img;
}

// Replaces every parameter by N(0, s).
void jitter(Mmae& m, double s, std::uint64_t seed) {
    Rng rng(seed);
    for (auto p : m.parameters()) {
        auto v = p.tensor.mutable_values();
        for (double& x : v) x += s * rng.normal();
    }
}

std::vector<double> row(const ad::Tensor& t, std::size_t r) {
    const auto v = t.values();
    return {v.begin() + static_cast<long>(r * t.cols()), v.begin() + static_cast<long>((r + 1) * t.cols())};
}

}  // namespace

TEST_CASE("patchify of a 224 image with patch 16 gives 196 tokens of 256 values") {
    microgen::RasterImage img{224, 224, std::vector<std::uint8_t>(224 * 224, 0)};
    for (int y = 0; y < 224; ++y)
        for (int x = 0; x < 224; ++x) img.pixels[static_cast<std::size_t>(y * 224 + x)] = static_cast<std::uint8_t>((x * 7 + y * 3) % 256);
    const TokenMatrix t = patchify(img, 16);
    CHECK(t.rows == 196);
    CHECK(t.cols == 256);
    // Patch (gy, gx) = (2, 5), pixel offset (3, 11).
    CHECK(t.at(2 * 14 + 5, 3 * 16 + 11) == img.at(2 * 16 + 3, 5 * 16 + 11) / 255.0);
    CHECK(unpatchify(t, 224, 16) == img);
}

TEST_CASE("constant image gives constant tokens") {
    microgen::RasterImage img{64, 64, std::vector<std::uint8_t>(64 * 64, 255)};
    const TokenMatrix t = patchify(img, 8);
    CHECK(t.rows == 64);
    CHECK(std::all_of(t.values.begin(), t.values.end(), [](double v) { return v == 1.0; }));
    CHECK_THROWS_AS(patchify(img, 7), std::invalid_argument);
}

TEST_CASE("mask sampling partitions patches with the floor rule") {
    const MaskPlan p = sample_mask(196, 0.85, 3);
    CHECK(p.visible.size() == 29);
    CHECK(p.masked.size() == 167);
    std::set<std::size_t> all(p.visible.begin(), p.visible.end());
    all.insert(p.masked.begin(), p.masked.end());
    CHECK(all.size() == 196);
    CHECK(*all.rbegin() == 195);
    CHECK(std::is_sorted(p.visible.begin(), p.visible.end()));
    CHECK(std::is_sorted(p.masked.begin(), p.masked.end()));

    CHECK(sample_mask(64, 0.75, 1).visible.size() == 16);
    CHECK(visible_count(64, 0.85) == 9);
    CHECK(visible_count(196, 0.15) == 166);
    CHECK(sample_mask(196, 0.85, 3).visible == p.visible);
    CHECK(sample_mask(196, 0.85, 4).visible != p.visible);
    CHECK_THROWS_AS(sample_mask(64, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(sample_mask(64, 1.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(sample_mask(4, 0.9, 1), std::invalid_argument);
}

TEST_CASE("every patch is visible with probability visible/n") {
    const std::size_t n = 196, draws = 10000;
    std::vector<int> hits(n, 0);
    for (std::size_t s = 0; s < draws; ++s)
        for (std::size_t v : sample_mask(n, 0.85, derive_seed(77, s)).visible) ++hits[v];
    const double p = 29.0 / 196.0;
    const double mean = p * draws, sd = std::sqrt(draws * p * (1 - p));
    for (int h : hits) CHECK(std::abs(h - mean) < 4.0 * sd);
}

TEST_CASE("sine-cosine table encodes column then row") {
    const auto pe = sincos_pos_embed(8, 3);
    REQUIRE(pe.size() == 9 * 8);
    // Position 0: sin terms 0, cos terms 1 in both halves.
    for (int k = 0; k < 8; ++k) CHECK(pe[static_cast<std::size_t>(k)] == (k % 4 < 2 ? 0.0 : 1.0));
    // Positions in the same column share the first half.
    for (int k = 0; k < 4; ++k) CHECK(pe[1 * 8 + k] == pe[4 * 8 + k]);
    for (int k = 4; k < 8; ++k) CHECK(pe[3 * 8 + k] == pe[4 * 8 + k]);
    CHECK_THROWS_AS(sincos_pos_embed(6, 3), std::invalid_argument);
}

TEST_CASE("cls latent does not depend on the order visible tokens are supplied") {
    const MmaeConfig c = tiny_config();
    Mmae m = Mmae::init(c, 1);
    jitter(m, 0.2, 2);
    Rng rng(3);
    const TokenMatrix tok = random_tokens(c, rng);
    const MaskPlan plan = sample_mask(c.n_patches(), 0.5, 4);
    MaskPlan shuffled = plan;
    rng.shuffle(std::span<std::size_t>(shuffled.visible));
    REQUIRE(shuffled.visible != plan.visible);
    const auto a = row(m.encode(tok, plan), 0);
    const auto b = row(m.encode(tok, shuffled), 0);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) <= 1e-10);
}

TEST_CASE("with zero block weights the cls latent is the normalized cls token") {
    const MmaeConfig c = tiny_config();
    Mmae m = Mmae::init(c, 5);
    for (auto p : m.parameters()) {
        if (p.name.starts_with("enc.blocks.")) {
            auto v = p.tensor.mutable_values();
            std::fill(v.begin(), v.end(), 0.0);
        }
    }
    Rng rng(6);
    const auto cls = m.parameters()[2].tensor;
    REQUIRE(m.parameters()[2].name == "enc.cls");
    const auto out = row(m.encode(random_tokens(c, rng), sample_mask(c.n_patches(), 0.75, 7)), 0);
    const auto v = cls.values();
    const double mu = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mu) * (x - mu);
    var /= static_cast<double>(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) CHECK(std::abs(out[k] - (v[k] - mu) / std::sqrt(var + ad::kLayerNormEps)) < 1e-12);
}

TEST_CASE("depth-0 decoder reproduces head(token + position) by hand") {
    MmaeConfig c = tiny_config();
    c.decoder_depth = 0;
    Mmae m = Mmae::init(c, 8);
    jitter(m, 0.3, 9);
    Rng rng(10);
    const TokenMatrix tok = random_tokens(c, rng);
    const MaskPlan plan = sample_mask(c.n_patches(), 0.75, 11);
    const ad::Tensor lat = m.encode(tok, plan);
    const ad::Tensor rec = m.decode(lat, plan);
    REQUIRE(rec.rows() == c.n_patches());

    auto get = [&](const std::string& n) {
        for (const auto& p : m.parameters())
            if (p.name == n) return p.tensor;
        throw std::out_of_range(n);
    };
    const ad::Tensor ew = get("dec.embed.w"), eb = get("dec.embed.b"), mt = get("dec.mask_token");
    const ad::Tensor hw = get("dec.head.w"), hb = get("dec.head.b");
    const auto pos = sincos_pos_embed(c.decoder_dim, c.grid());
    const std::size_t dd = static_cast<std::size_t>(c.decoder_dim), de = static_cast<std::size_t>(c.embed_dim);
    for (std::size_t p = 0; p < c.n_patches(); ++p) {
        std::vector<double> h(dd);
        const auto it = std::find(plan.visible.begin(), plan.visible.end(), p);
        for (std::size_t k = 0; k < dd; ++k) {
            if (it == plan.visible.end()) {
                h[k] = mt.values()[k];
            } else {
                const std::size_t r = 1 + static_cast<std::size_t>(it - plan.visible.begin());
                double s = eb.values()[k];
                for (std::size_t q = 0; q < de; ++q) s += lat.at(r, q) * ew.at(q, k);
                h[k] = s;
            }
            h[k] += pos[p * dd + k];
        }
        for (std::size_t j = 0; j < c.patch_dim(); ++j) {
            double s = hb.values()[j];
            for (std::size_t k = 0; k < dd; ++k) s += h[k] * hw.at(k, j);
            CHECK(std::abs(rec.at(p, j) - s) < 1e-12);
        }
    }
}

TEST_CASE("masked loss ignores visible patches") {
    const MmaeConfig c = tiny_config();
    Rng rng(12);
    const TokenMatrix tok = random_tokens(c, rng);
    const MaskPlan plan = sample_mask(c.n_patches(), 0.75, 13);
    const ad::Tensor exact = ad::Tensor::from({tok.rows, tok.cols}, tok.values, true);
    CHECK(masked_mse(exact, tok, plan).item() == 0.0);

    std::vector<double> v(tok.values.size());
    for (double& x : v) x = rng.normal();
    const ad::Tensor rec = ad::Tensor::from({tok.rows, tok.cols}, v, true);
    const ad::Tensor loss = masked_mse(rec, tok, plan);
    ad::backward(loss);
    for (std::size_t p : plan.visible)
        for (std::size_t k = 0; k < tok.cols; ++k) CHECK(rec.grad()[p * tok.cols + k] == 0.0);
    double masked_grad = 0.0;
    for (std::size_t p : plan.masked)
        for (std::size_t k = 0; k < tok.cols; ++k) masked_grad += std::abs(rec.grad()[p * tok.cols + k]);
    CHECK(masked_grad > 0.0);

    for (std::size_t p : plan.visible) v[p * tok.cols] += 5.0;
    CHECK(masked_mse(ad::Tensor::from({tok.rows, tok.cols}, v), tok, plan).item() == loss.item());
}

TEST_CASE("zero reconstruction of binary tokens scores the fraction of masked ones") {
    const MmaeConfig c = tiny_config();
    Rng rng(14);
    const TokenMatrix tok = patchify(random_binary_image(c.image_size, rng), c.patch_size);
    const MaskPlan plan = sample_mask(c.n_patches(), 0.75, 15);
    double ones = 0.0;
    for (std::size_t p : plan.masked)
        for (std::size_t k = 0; k < tok.cols; ++k) ones += tok.at(p, k);
    const double expect = ones / static_cast<double>(plan.masked.size() * tok.cols);
    const double got = masked_mse(ad::Tensor::zeros({tok.rows, tok.cols}), tok, plan).item();
    CHECK(std::abs(got - expect) < 1e-15);
}

TEST_CASE("composed model gradients match central differences") {
    const MmaeConfig c = tiny_config();
    Mmae m = Mmae::init(c, 16);
    jitter(m, 0.15, 17);
    Rng rng(18);
    const TokenMatrix t0 = random_tokens(c, rng), t1 = random_tokens(c, rng);
    const TokenMatrix* batch[] = {&t0, &t1};
    const ad::Tensor tokens = stack_tokens(batch);
    const std::vector<MaskPlan> plans{sample_mask(c.n_patches(), 0.75, 19), sample_mask(c.n_patches(), 0.75, 20)};
    std::vector<ad::Tensor> inputs;
    for (const auto& p : m.parameters()) inputs.push_back(p.tensor);
    auto r = grad_check([&] { return masked_mse(m.decode(m.encode(tokens, plans), plans), tokens, plans); }, inputs,
                        120, 1e-3, 21);
    INFO("worst rel " << r.worst_rel);
    CHECK(r.failures == 0);
}

TEST_CASE("batched forward equals per-image forward") {
    const MmaeConfig c = tiny_config();
    Mmae m = Mmae::init(c, 22);
    jitter(m, 0.1, 23);
    Rng rng(24);
    const TokenMatrix t0 = random_tokens(c, rng), t1 = random_tokens(c, rng);
    const TokenMatrix* batch[] = {&t0, &t1};
    const std::vector<MaskPlan> plans{sample_mask(c.n_patches(), 0.75, 25), sample_mask(c.n_patches(), 0.75, 26)};
    const ad::Tensor both = m.decode(m.encode(stack_tokens(batch), plans), plans);
    const ad::Tensor a = m.decode(m.encode(t0, plans[0]), plans[0]);
    const ad::Tensor b = m.decode(m.encode(t1, plans[1]), plans[1]);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::abs(both.values()[i] - a.values()[i]) < 1e-12);
        CHECK(std::abs(both.values()[a.size() + i] - b.values()[i]) < 1e-12);
    }
}

TEST_CASE("checkpoint save, load, save is byte identical") {
    const MmaeConfig c = tiny_config();
    Mmae m = Mmae::init(c, 27);
    jitter(m, 0.1, 28);
    const std::string bytes = ad::serialize_checkpoint(m.to_checkpoint({{"note", "x"}}));
    const Mmae back = Mmae::from_checkpoint(ad::parse_checkpoint(bytes));
    CHECK(ad::serialize_checkpoint(back.to_checkpoint({{"note", "x"}})) == bytes);
    CHECK(ad::parameter_hash(back.parameters()) == ad::parameter_hash(m.parameters()));

    Rng rng(29);
    const TokenMatrix tok = random_tokens(c, rng);
    const MaskPlan plan = sample_mask(c.n_patches(), 0.75, 30);
    const ad::Tensor x = m.decode(m.encode(tok, plan), plan);
    const ad::Tensor y = back.decode(back.encode(tok, plan), plan);
    CHECK(std::equal(x.values().begin(), x.values().end(), y.values().begin()));

    MmaeConfig other = c;
    other.embed_dim = 8;
    other.encoder_heads = 1;
    auto ck = Mmae::init(other, 1).to_checkpoint();
    ck.config = to_json(c);
    CHECK_THROWS(Mmae::from_checkpoint(ck));
}

TEST_CASE("clone is independent of the source") {
    Mmae m = Mmae::init(tiny_config(), 31);
    Mmae k = m.clone();
    jitter(k, 0.1, 32);
    CHECK(ad::parameter_hash(m.parameters()) != ad::parameter_hash(k.parameters()));
    CHECK(ad::parameter_hash(m.parameters()) == ad::parameter_hash(Mmae::init(tiny_config(), 31).parameters()));
}

TEST_CASE("config round-trips through json and rejects unknown keys") {
    MmaeConfig c = tiny_config();
    c.norm_pix_loss = true;
    const MmaeConfig back = config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    auto j = to_json(c);
    j["dropout"] = 0.1;
    CHECK_THROWS_AS(config_from_json(j), std::invalid_argument);

    MmaeConfig bad = c;
    bad.patch_size = 5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.encoder_heads = 3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_NOTHROW(MmaeConfig::vit_base().validate());
    CHECK(MmaeConfig::vit_base().n_patches() == 196);

    CHECK_THROWS_AS(train_config_from_json({{"epoch", 3}}), std::invalid_argument);
    CHECK(train_config_from_json(to_json(TrainConfig{})).epochs == 30);
}

TEST_CASE("learning rate warms up linearly then decays to the floor") {
    TrainConfig t;
    t.epochs = 10;
    t.warmup_epochs = 2;
    t.lr = 1e-3;
    t.min_lr = 1e-5;
    CHECK(learning_rate(t, 0, 5) == doctest::Approx(1e-4));
    CHECK(learning_rate(t, 9, 5) == doctest::Approx(1e-3));
    CHECK(learning_rate(t, 10, 5) == doctest::Approx(1e-3));
    CHECK(learning_rate(t, 49, 5) > 1e-5);
    CHECK(learning_rate(t, 49, 5) < 2e-5);
    for (std::size_t s = 10; s < 49; ++s) CHECK(learning_rate(t, s + 1, 5) <= learning_rate(t, s, 5));
}

TEST_CASE("pre-training is deterministic and reduces the loss") {
    const MmaeConfig c = tiny_config();
    Rng rng(33);
    std::vector<TokenMatrix> images;
    for (int i = 0; i < 24; ++i) images.push_back(patchify(random_binary_image(c.image_size, rng), c.patch_size));
    TrainConfig t;
    t.epochs = 3;
    t.batch_size = 8;
    t.warmup_epochs = 1;
    t.lr = 3e-3;
    const auto a = pretrain(images, c, t, 34);
    const auto b = pretrain(images, c, t, 34);
    REQUIRE(a.curve.size() == 4);
    CHECK(a.steps == 9);
    CHECK(a.curve[1].masked_mse < a.curve[0].masked_mse);
    CHECK(ad::serialize_checkpoint(pretrain_checkpoint(a, t, 34, images.size())) ==
          ad::serialize_checkpoint(pretrain_checkpoint(b, t, 34, images.size())));
    const auto other = pretrain(images, c, t, 35);
    CHECK(ad::parameter_hash(other.model.parameters()) != ad::parameter_hash(a.model.parameters()));

    const auto ck = pretrain_checkpoint(a, t, 34, images.size());
    CHECK(ck.metadata.at("steps") == 9);
    CHECK(ck.metadata.at("mask_ratio") == 0.75);

    std::vector<TokenMatrix> wrong{TokenMatrix{3, 3, std::vector<double>(9)}};
    CHECK_THROWS_AS(pretrain(wrong, c, t, 1), std::invalid_argument);
}

TEST_CASE("evaluation helpers agree with the loss") {
    const MmaeConfig c = tiny_config();
    Mmae m = Mmae::init(c, 36);
    Rng rng(37);
    std::vector<TokenMatrix> images;
    for (int i = 0; i < 5; ++i) images.push_back(random_tokens(c, rng));
    const auto per = masked_mse_per_image(m, images, 0.75, 38, 2);
    REQUIRE(per.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        const MaskPlan plan = eval_plan(c, 0.75, 38, i);
        CHECK(per[i] == doctest::Approx(masked_mse(m.decode(m.encode(images[i], plan), plan), images[i], plan).item())
                            .epsilon(1e-12));
        const auto zero = constant_mse_per_image(0.0, images, c, 0.75, 38);
        CHECK(zero[i] == doctest::Approx(masked_mse(ad::Tensor::zeros({images[i].rows, images[i].cols}), images[i], plan).item())
                             .epsilon(1e-12));
    }
    const double mp = mean_pixel(images);
    CHECK(mp > 0.4);
    CHECK(mp < 0.6);
}

TEST_CASE("reconstruction triptych keeps visible pixels and grays masked ones") {
    const MmaeConfig c = tiny_config();
    Mmae m = Mmae::init(c, 39);
    Rng rng(40);
    const auto img = random_binary_image(c.image_size, rng);
    const Triptych t = reconstruct(m, img, 0.75, 41);
    const MaskPlan plan = sample_mask(c.n_patches(), 0.75, 41);
    for (const auto* panel : {&t.original, &t.masked, &t.reconstruction, &t.raw_output}) {
        CHECK(panel->width == img.width);
        CHECK(panel->height == img.height);
    }
    CHECK(t.original == img);
    const int g = c.grid(), p = c.patch_size;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const std::size_t patch = static_cast<std::size_t>((y / p) * g + x / p);
            const bool vis = std::binary_search(plan.visible.begin(), plan.visible.end(), patch);
            if (vis) {
                CHECK(t.reconstruction.at(y, x) == img.at(y, x));
                CHECK(t.masked.at(y, x) == img.at(y, x));
            } else {
                CHECK(t.masked.at(y, x) == kMaskGray);
                CHECK(t.reconstruction.at(y, x) == t.raw_output.at(y, x));
            }
        }
    const auto strip = triptych_strip(t);
    CHECK(strip.width == 3 * img.width + 4);
    CHECK(strip.at(3, 2 * (img.width + 2) + 5) == t.reconstruction.at(3, 5));

    microgen::RasterImage big{32, 32, std::vector<std::uint8_t>(32 * 32)};
    CHECK_THROWS_AS(reconstruct(m, big, 0.75, 1), std::invalid_argument);
}
