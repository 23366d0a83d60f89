#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "microforge/microgen/dataset.hpp"
#include "microforge/mmae/model.hpp"
#include "microforge/transfer/metrics.hpp"

namespace mf::transfer {

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

/// Seeded shuffle of 0..n-1, then the first floor(0.8 n) go to training.
Split split_indices(std::size_t n, std::uint64_t seed);
/// Indices into manifest.records. Requires at least 5 records, all labeled.
Split split_80_20(const microgen::DatasetManifest& manifest, std::uint64_t seed);

/// Per-component z-score. Fit on the training split only.
struct Standardizer {
    Target mean{};
    Target scale{1.0, 1.0, 1.0};

    static Standardizer fit(std::span<const Target> targets);
    Target apply(const Target& t) const;
    Target invert(const Target& z) const;
};

nlohmann::ordered_json to_json(const Standardizer& s);
Standardizer standardizer_from_json(const nlohmann::ordered_json& j);

struct LabeledSet {
    std::vector<std::string> ids;
    std::vector<mmae::TokenMatrix> images;
    std::vector<Target> targets;

    std::size_t size() const { return ids.size(); }
};

/// Loads the given records; every one must carry a stiffness label.
LabeledSet load_labeled(const microgen::DatasetManifest& manifest, std::span<const std::size_t> indices,
                        const mmae::MmaeConfig& cfg);
/// Every labeled record in manifest order.
LabeledSet load_labeled(const microgen::DatasetManifest& manifest, const mmae::MmaeConfig& cfg);
LabeledSet subset(const LabeledSet& set, std::span<const std::size_t> indices);

/// [cls] latent with every patch visible.
std::vector<double> extract_cls(const mmae::Mmae& model, const mmae::TokenMatrix& image);
/// N x embed_dim, one [cls] latent per image.
ad::Tensor extract_embeddings(const mmae::Mmae& model, const std::vector<mmae::TokenMatrix>& images,
                              std::size_t batch_size = 64);

}  // namespace mf::transfer
