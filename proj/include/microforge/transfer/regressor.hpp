#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "microforge/transfer/data.hpp"

namespace mf::transfer {

enum class HeadKind { linear, feedforward };

std::string to_string(HeadKind k);
HeadKind parse_head(const std::string& s);

inline constexpr int kHeadHidden = 64;

/// Regression head on the [cls] latent. The feedforward form is
/// fc2(gelu(fc1 x)); the linear form uses fc1 only.
struct Head {
    HeadKind kind = HeadKind::linear;
    mmae::Linear fc1;
    mmae::Linear fc2;

    /// LeCun-normal weights, zero biases.
    static Head init(HeadKind kind, std::size_t in, std::size_t hidden, std::uint64_t seed);
    ad::Tensor operator()(const ad::Tensor& x) const;
    /// Names "head.fc1.w", ...
    std::vector<ad::NamedTensor> parameters() const;
    Head clone() const;
};

/// Encoder plus head, predicting standardized targets.
struct Regressor {
    mmae::Mmae encoder;
    Head head;
    Standardizer scaler;

    /// B x 3 standardized predictions for B stacked images, all patches visible.
    ad::Tensor forward(const ad::Tensor& tokens, std::size_t batch) const;
    /// Predictions in GPa.
    std::vector<Target> predict(const std::vector<mmae::TokenMatrix>& images, std::size_t batch_size = 64) const;

    ad::Checkpoint to_checkpoint(nlohmann::ordered_json metadata = nlohmann::ordered_json::object()) const;
    static Regressor from_checkpoint(const ad::Checkpoint& ckpt);
};

}  // namespace mf::transfer
