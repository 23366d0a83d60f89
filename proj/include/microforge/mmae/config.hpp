#pragma once

#include <cstddef>

#include "json.hpp"

namespace mf::mmae {

struct MmaeConfig {
    int image_size = 64;
    int patch_size = 8;
    int embed_dim = 64;
    int encoder_depth = 4;
    int encoder_heads = 4;
    int decoder_dim = 48;
    int decoder_depth = 2;
    int decoder_heads = 4;
    int mlp_ratio = 4;
    double mask_ratio = 0.85;
    /// Per-patch standardized reconstruction targets. Off: raw [0, 1] pixels.
    bool norm_pix_loss = false;

    static MmaeConfig desk() { return {}; }
    static MmaeConfig vit_base();

    int grid() const { return image_size / patch_size; }
    std::size_t n_patches() const { return static_cast<std::size_t>(grid()) * static_cast<std::size_t>(grid()); }
    std::size_t patch_dim() const { return static_cast<std::size_t>(patch_size) * static_cast<std::size_t>(patch_size); }

    /// Throws std::invalid_argument on inconsistent hyperparameters.
    void validate() const;
};

inline MmaeConfig MmaeConfig::vit_base() {
    MmaeConfig c;
    c.image_size = 224;
    c.patch_size = 16;
    c.embed_dim = 768;
    c.encoder_depth = 12;
    c.encoder_heads = 12;
    c.decoder_dim = 512;
    c.decoder_depth = 8;
    c.decoder_heads = 16;
    return c;
}

nlohmann::ordered_json to_json(const MmaeConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
MmaeConfig config_from_json(const nlohmann::ordered_json& j);

}  // namespace mf::mmae
