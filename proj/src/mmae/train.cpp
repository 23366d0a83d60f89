#include "microforge/mmae/train.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "microforge/autodiff/adam.hpp"
#include "microforge/common/rng.hpp"

namespace mf::mmae {

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kOrderStream = 1;
constexpr std::uint64_t kMaskStream = 2;

std::vector<double> per_image_mse(const ad::Tensor& recon, const ad::Tensor& tokens, std::span<const MaskPlan> plans,
                                  bool norm_pix) {
    std::vector<double> out;
    const std::size_t np = plans[0].n_patches, c = tokens.cols();
    for (std::size_t b = 0; b < plans.size(); ++b) {
        const ad::Tensor r = ad::Tensor::from(
            {np, c}, std::vector<double>(recon.values().begin() + static_cast<long>(b * np * c),
                                         recon.values().begin() + static_cast<long>((b + 1) * np * c)));
        const ad::Tensor t = ad::Tensor::from(
            {np, c}, std::vector<double>(tokens.values().begin() + static_cast<long>(b * np * c),
                                         tokens.values().begin() + static_cast<long>((b + 1) * np * c)));
        out.push_back(masked_mse(r, t, plans.subspan(b, 1), norm_pix).item());
    }
    return out;
}

}  // namespace

nlohmann::ordered_json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr},
            {"min_lr", c.min_lr}, {"warmup_epochs", c.warmup_epochs}, {"beta1", c.beta1},
            {"beta2", c.beta2},   {"weight_decay", c.weight_decay}};
}

TrainConfig train_config_from_json(const nlohmann::ordered_json& j) {
    if (!j.is_object()) throw std::invalid_argument("train config: expected an object");
    TrainConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "epochs") c.epochs = v.get<int>();
        else if (key == "batch_size") c.batch_size = v.get<int>();
        else if (key == "lr") c.lr = v.get<double>();
        else if (key == "min_lr") c.min_lr = v.get<double>();
        else if (key == "warmup_epochs") c.warmup_epochs = v.get<int>();
        else if (key == "beta1") c.beta1 = v.get<double>();
        else if (key == "beta2") c.beta2 = v.get<double>();
        else if (key == "weight_decay") c.weight_decay = v.get<double>();
        else throw std::invalid_argument("train config: unknown key '" + key + "'");
    }
    if (c.epochs < 0 || c.batch_size < 1 || !(c.lr > 0.0) || c.min_lr < 0.0 || c.warmup_epochs < 0) {
        throw std::invalid_argument("train config: out-of-range value");
    }
    return c;
}

double learning_rate(const TrainConfig& c, std::size_t step, std::size_t steps_per_epoch) {
    const double warm = static_cast<double>(c.warmup_epochs) * static_cast<double>(steps_per_epoch);
    const double total = static_cast<double>(c.epochs) * static_cast<double>(steps_per_epoch);
    const double s = static_cast<double>(step);
    if (s < warm) return c.lr * (s + 1.0) / warm;
    if (total <= warm) return c.lr;
    const double progress = (s - warm) / (total - warm);
    return c.min_lr + 0.5 * (c.lr - c.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<TokenMatrix> load_tokens(const microgen::DatasetManifest& manifest, const MmaeConfig& cfg) {
    std::vector<TokenMatrix> out;
    out.reserve(manifest.records.size());
    for (const auto& r : manifest.records) {
        const auto img = microgen::read_pgm(manifest.resolve(r));
        if (img.width != cfg.image_size || img.height != cfg.image_size) {
            throw std::invalid_argument("image " + r.id + " is " + std::to_string(img.width) + "x" +
                                        std::to_string(img.height) + ", model expects " +
                                        std::to_string(cfg.image_size));
        }
        out.push_back(patchify(img, cfg.patch_size));
    }
    return out;
}

MaskPlan eval_plan(const MmaeConfig& cfg, double mask_ratio, std::uint64_t seed, std::size_t i) {
    return sample_mask(cfg.n_patches(), mask_ratio, derive_seed(seed, i));
}

std::vector<double> masked_mse_per_image(const Mmae& model, const std::vector<TokenMatrix>& images,
                                         double mask_ratio, std::uint64_t seed, std::size_t batch_size) {
    ad::NoGradGuard guard;
    std::vector<double> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += batch_size) {
        const std::size_t end = std::min(images.size(), start + batch_size);
        std::vector<const TokenMatrix*> batch;
        std::vector<MaskPlan> plans;
        for (std::size_t i = start; i < end; ++i) {
            batch.push_back(&images[i]);
            plans.push_back(eval_plan(model.config(), mask_ratio, seed, i));
        }
        const ad::Tensor tokens = stack_tokens(batch);
        const ad::Tensor recon = model.decode(model.encode(tokens, plans), plans);
        const auto part = per_image_mse(recon, tokens, plans, model.config().norm_pix_loss);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

std::vector<double> constant_mse_per_image(double value, const std::vector<TokenMatrix>& images,
                                           const MmaeConfig& cfg, double mask_ratio, std::uint64_t seed) {
    std::vector<double> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        const MaskPlan plan = eval_plan(cfg, mask_ratio, seed, i);
        double s = 0.0;
        for (std::size_t m : plan.masked)
            for (std::size_t k = 0; k < images[i].cols; ++k) {
                const double d = images[i].at(m, k) - value;
                s += d * d;
            }
        out.push_back(s / static_cast<double>(plan.masked.size() * images[i].cols));
    }
    return out;
}

double mean_pixel(const std::vector<TokenMatrix>& images) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& t : images) {
        s = std::accumulate(t.values.begin(), t.values.end(), s);
        n += t.values.size();
    }
    return n ? s / static_cast<double>(n) : 0.0;
}

PretrainResult pretrain(const std::vector<TokenMatrix>& images, const MmaeConfig& cfg, const TrainConfig& train,
                        std::uint64_t seed, const EpochLogger& log) {
    cfg.validate();
    if (images.empty()) throw std::invalid_argument("pretrain: no images");
    for (const auto& t : images) {
        if (t.rows != cfg.n_patches() || t.cols != cfg.patch_dim()) {
            throw std::invalid_argument("pretrain: image tokens do not match the model geometry");
        }
    }
    PretrainResult res{Mmae::init(cfg, derive_seed(seed, kInitStream)), {}, 0};
    std::vector<ad::Tensor> params;
    for (const auto& p : res.model.parameters()) params.push_back(p.tensor);
    ad::Adam adam(params, {train.lr, train.beta1, train.beta2, 1e-8, train.weight_decay});

    const std::size_t n = images.size();
    const auto bs = static_cast<std::size_t>(train.batch_size);
    const std::size_t steps_per_epoch = (n + bs - 1) / bs;

    const auto initial = masked_mse_per_image(res.model, images, cfg.mask_ratio, derive_seed(seed, kMaskStream));
    res.curve.push_back({0, std::accumulate(initial.begin(), initial.end(), 0.0) / static_cast<double>(n)});
    if (log) log(res.curve.back());

    std::vector<std::size_t> order(n);
    for (int epoch = 1; epoch <= train.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(derive_seed(seed, kOrderStream), static_cast<std::uint64_t>(epoch)));
        rng.shuffle(std::span<std::size_t>(order));
        const std::uint64_t mask_base = derive_seed(derive_seed(seed, kMaskStream), static_cast<std::uint64_t>(epoch));

        double total = 0.0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t end = std::min(n, start + bs);
            std::vector<const TokenMatrix*> batch;
            std::vector<MaskPlan> plans;
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(&images[order[i]]);
                plans.push_back(sample_mask(cfg.n_patches(), cfg.mask_ratio, derive_seed(mask_base, order[i])));
            }
            const ad::Tensor tokens = stack_tokens(batch);
            adam.set_lr(learning_rate(train, res.steps, steps_per_epoch));
            const ad::Tensor loss =
                masked_mse(res.model.decode(res.model.encode(tokens, plans), plans), tokens, plans, cfg.norm_pix_loss);
            total += loss.item() * static_cast<double>(end - start);
            ad::backward(loss);
            adam.step();
            ++res.steps;
        }
        res.curve.push_back({epoch, total / static_cast<double>(n)});
        if (log) log(res.curve.back());
    }
    return res;
}

ad::Checkpoint pretrain_checkpoint(const PretrainResult& r, const TrainConfig& train, std::uint64_t seed,
                                   std::size_t n_images) {
    nlohmann::ordered_json meta;
    meta["kind"] = "mmae";
    meta["mask_ratio"] = r.model.config().mask_ratio;
    meta["seed"] = seed;
    meta["steps"] = r.steps;
    meta["epochs"] = train.epochs;
    meta["n_images"] = n_images;
    meta["final_loss"] = r.curve.empty() ? 0.0 : r.curve.back().masked_mse;
    meta["train"] = to_json(train);
    return r.model.to_checkpoint(std::move(meta));
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<EpochStat>& curve) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "epoch,masked_mse\n";
    char buf[64];
    for (const auto& e : curve) {
        std::snprintf(buf, sizeof buf, "%d,%.17g\n", e.epoch, e.masked_mse);
        os << buf;
    }
}

Triptych reconstruct(const Mmae& model, const microgen::RasterImage& image, double mask_ratio, std::uint64_t seed) {
    const MmaeConfig& cfg = model.config();
    const TokenMatrix tokens = patchify(image, cfg.patch_size);
    if (tokens.rows != cfg.n_patches()) throw std::invalid_argument("reconstruct: image size does not match model");
    const MaskPlan plan = sample_mask(cfg.n_patches(), mask_ratio, seed);

    TokenMatrix out = tokens;
    {
        ad::NoGradGuard guard;
        const ad::Tensor recon = model.decode(model.encode(tokens, plan), plan);
        std::copy(recon.values().begin(), recon.values().end(), out.values.begin());
    }
    if (cfg.norm_pix_loss) {
        // Undo per-patch standardization with the original patch statistics.
        for (std::size_t r = 0; r < out.rows; ++r) {
            double mu = 0.0, var = 0.0;
            for (std::size_t k = 0; k < out.cols; ++k) mu += tokens.at(r, k);
            mu /= static_cast<double>(out.cols);
            for (std::size_t k = 0; k < out.cols; ++k) var += (tokens.at(r, k) - mu) * (tokens.at(r, k) - mu);
            const double sd = std::sqrt(var / static_cast<double>(out.cols) + 1e-6);
            for (std::size_t k = 0; k < out.cols; ++k) out.values[r * out.cols + k] = out.values[r * out.cols + k] * sd + mu;
        }
    }
    TokenMatrix masked = tokens, composite = out;
    for (std::size_t m : plan.masked)
        for (std::size_t k = 0; k < tokens.cols; ++k) masked.values[m * tokens.cols + k] = kMaskGray / 255.0;
    for (std::size_t v : plan.visible)
        for (std::size_t k = 0; k < tokens.cols; ++k) composite.values[v * tokens.cols + k] = tokens.at(v, k);

    Triptych t;
    t.original = image;
    t.masked = unpatchify(masked, cfg.image_size, cfg.patch_size);
    t.reconstruction = unpatchify(composite, cfg.image_size, cfg.patch_size);
    t.raw_output = unpatchify(out, cfg.image_size, cfg.patch_size);
    return t;
}

microgen::RasterImage triptych_strip(const Triptych& t) {
    constexpr int gap = 2;
    const int w = t.original.width, h = t.original.height;
    microgen::RasterImage s;
    s.height = h;
    s.width = 3 * w + 2 * gap;
    s.pixels.assign(static_cast<std::size_t>(s.width) * static_cast<std::size_t>(h), 255);
    const microgen::RasterImage* panels[] = {&t.original, &t.masked, &t.reconstruction};
    for (int p = 0; p < 3; ++p)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                s.pixels[static_cast<std::size_t>(y * s.width + p * (w + gap) + x)] = panels[p]->at(y, x);
    return s;
}

}  // namespace mf::mmae
