#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "microforge/homogenize/label.hpp"
#include "microforge/mmae/train.hpp"
#include "microforge/transfer/finetune.hpp"

namespace mf::pipeline {

struct DatasetSpec {
    microgen::CompositeKind kind = microgen::CompositeKind::fiber;
    std::size_t n = 0;  // 0 disables the dataset
    int resolution = 64;
    std::size_t max_attempts = microgen::kDefaultMaxAttempts;
    double circle_radius = microgen::kDefaultCircleRadius;
};

struct TransferSpec {
    transfer::ProbeConfig probe = transfer::ProbeConfig::linear();
    transfer::ProbeConfig finetune = transfer::ProbeConfig::full();
    std::vector<int> blocks;               // partial(k) sweep on the primary checkpoint
    std::vector<std::size_t> data_sizes;   // dataset-size sweep on the primary checkpoint
    std::string data_mode = "full";
    bool cross_composite = true;           // probe the circle dataset when present
};

struct SaliencySpec {
    std::size_t n_images = 4;  // validation images, 0 disables
    std::vector<std::string> components{"c1111", "c2222", "c1212"};
    std::string mode = "full";
    bool standardized = true;
};

/// Whole-experiment configuration. Every section is optional in JSON and
/// unknown keys are rejected at every level.
struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_root = "runs";
    unsigned threads = 1;

    DatasetSpec pretrain_data{microgen::CompositeKind::fiber, 2000};
    DatasetSpec labeled_data{microgen::CompositeKind::fiber, 1000};
    DatasetSpec circle_data{microgen::CompositeKind::circle, 0};
    homog::LabelOptions labeling;

    mmae::MmaeConfig model;
    mmae::TrainConfig training;
    std::vector<double> mask_ratios{0.85};
    double primary_mask_ratio = 0.85;  // checkpoint used by the block, size and saliency stages

    TransferSpec transfer;
    SaliencySpec saliency;
    std::size_t reconstructions = 4;  // held-out triptychs per checkpoint
};

RunConfig run_config_from_json(const nlohmann::ordered_json& j);
RunConfig read_run_config(const std::filesystem::path& file);
/// Fully resolved configuration, defaults included.
nlohmann::ordered_json to_json(const RunConfig& c);

/// 16 hex digits of FNV-1a over the resolved configuration, excluding
/// output_root and threads (neither changes results).
std::string config_hash(const RunConfig& c);

void validate(const RunConfig& c);

}  // namespace mf::pipeline
