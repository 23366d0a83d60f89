#include "microforge/mmae/config.hpp"

#include <stdexcept>
#include <string>

namespace mf::mmae {

void MmaeConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("mmae config: " + m); };
    if (patch_size < 1 || image_size < patch_size) fail("patch_size must be in [1, image_size]");
    if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
    if (embed_dim < 4 || embed_dim % 4 != 0) fail("embed_dim must be a positive multiple of 4");
    if (decoder_dim < 4 || decoder_dim % 4 != 0) fail("decoder_dim must be a positive multiple of 4");
    if (encoder_heads < 1 || embed_dim % encoder_heads != 0) fail("encoder_heads must divide embed_dim");
    if (decoder_heads < 1 || decoder_dim % decoder_heads != 0) fail("decoder_heads must divide decoder_dim");
    if (encoder_depth < 0 || decoder_depth < 0) fail("depths must be non-negative");
    if (mlp_ratio < 1) fail("mlp_ratio must be at least 1");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in (0, 1)");
}

nlohmann::ordered_json to_json(const MmaeConfig& c) {
    return {{"image_size", c.image_size},       {"patch_size", c.patch_size},
            {"embed_dim", c.embed_dim},         {"encoder_depth", c.encoder_depth},
            {"encoder_heads", c.encoder_heads}, {"decoder_dim", c.decoder_dim},
            {"decoder_depth", c.decoder_depth}, {"decoder_heads", c.decoder_heads},
            {"mlp_ratio", c.mlp_ratio},         {"mask_ratio", c.mask_ratio},
            {"norm_pix_loss", c.norm_pix_loss}};
}

MmaeConfig config_from_json(const nlohmann::ordered_json& j) {
    if (!j.is_object()) throw std::invalid_argument("mmae config: expected an object");
    MmaeConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "image_size") c.image_size = v.get<int>();
        else if (key == "patch_size") c.patch_size = v.get<int>();
        else if (key == "embed_dim") c.embed_dim = v.get<int>();
        else if (key == "encoder_depth") c.encoder_depth = v.get<int>();
        else if (key == "encoder_heads") c.encoder_heads = v.get<int>();
        else if (key == "decoder_dim") c.decoder_dim = v.get<int>();
        else if (key == "decoder_depth") c.decoder_depth = v.get<int>();
        else if (key == "decoder_heads") c.decoder_heads = v.get<int>();
        else if (key == "mlp_ratio") c.mlp_ratio = v.get<int>();
        else if (key == "mask_ratio") c.mask_ratio = v.get<double>();
        else if (key == "norm_pix_loss") c.norm_pix_loss = v.get<bool>();
        else throw std::invalid_argument("mmae config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

}  // namespace mf::mmae
