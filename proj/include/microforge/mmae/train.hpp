#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "microforge/microgen/dataset.hpp"
#include "microforge/mmae/model.hpp"

namespace mf::mmae {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    double lr = 5e-4;  // peak, after linear warmup
    double min_lr = 1e-5;
    int warmup_epochs = 2;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.0;
};

nlohmann::ordered_json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);

/// Linear warmup then cosine decay to min_lr, evaluated per optimizer step.
double learning_rate(const TrainConfig& c, std::size_t step, std::size_t steps_per_epoch);

struct EpochStat {
    int epoch = 0;  // 0 is the untrained model
    double masked_mse = 0.0;
};

struct PretrainResult {
    Mmae model;
    std::vector<EpochStat> curve;
    std::size_t steps = 0;
};

using EpochLogger = std::function<void(const EpochStat&)>;

/// Token matrices for every record, in manifest order.
std::vector<TokenMatrix> load_tokens(const microgen::DatasetManifest& manifest, const MmaeConfig& cfg);

/// Adam pre-training with a fresh mask per image per step. The curve holds the
/// untrained loss (epoch 0) followed by the mean training loss of each epoch.
PretrainResult pretrain(const std::vector<TokenMatrix>& images, const MmaeConfig& cfg, const TrainConfig& train,
                        std::uint64_t seed, const EpochLogger& log = {});

ad::Checkpoint pretrain_checkpoint(const PretrainResult& r, const TrainConfig& train, std::uint64_t seed,
                                   std::size_t n_images);

void write_curve_csv(const std::filesystem::path& path, const std::vector<EpochStat>& curve);

/// Mask for evaluation image i under a base seed.
MaskPlan eval_plan(const MmaeConfig& cfg, double mask_ratio, std::uint64_t seed, std::size_t i);

/// Per-image masked MSE of the model, masks from eval_plan.
std::vector<double> masked_mse_per_image(const Mmae& model, const std::vector<TokenMatrix>& images,
                                         double mask_ratio, std::uint64_t seed, std::size_t batch_size = 64);

/// Per-image masked MSE of predicting `value` everywhere, same masks.
std::vector<double> constant_mse_per_image(double value, const std::vector<TokenMatrix>& images,
                                           const MmaeConfig& cfg, double mask_ratio, std::uint64_t seed);

double mean_pixel(const std::vector<TokenMatrix>& images);

struct Triptych {
    microgen::RasterImage original;
    microgen::RasterImage masked;          // masked patches filled with mid gray
    microgen::RasterImage reconstruction;  // visible patches pasted from the original
    microgen::RasterImage raw_output;      // model output everywhere
};

inline constexpr std::uint8_t kMaskGray = 128;

Triptych reconstruct(const Mmae& model, const microgen::RasterImage& image, double mask_ratio, std::uint64_t seed);
/// Side-by-side strip (original | masked | reconstruction) with a 2 px gap.
microgen::RasterImage triptych_strip(const Triptych& t);

}  // namespace mf::mmae
