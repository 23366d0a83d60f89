#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "microforge/autodiff/checkpoint.hpp"
#include "microforge/autodiff/ops.hpp"
#include "microforge/mmae/config.hpp"
#include "microforge/mmae/patch.hpp"

namespace mf::mmae {

inline constexpr double kInitStddev = 0.02;

struct Linear {
    ad::Tensor w;  // in x out
    ad::Tensor b;  // 1 x out
    ad::Tensor operator()(const ad::Tensor& x) const { return ad::linear(x, w, b); }
};

struct Norm {
    ad::Tensor g;
    ad::Tensor b;
    ad::Tensor operator()(const ad::Tensor& x) const { return ad::layer_norm(x, g, b); }
};

/// Pre-norm transformer block: x + attn(ln1 x), then x + mlp(ln2 x).
struct Block {
    Norm ln1;
    Linear qkv;
    Linear proj;
    Norm ln2;
    Linear fc1;
    Linear fc2;
    std::size_t heads = 1;

    ad::Tensor operator()(const ad::Tensor& x, std::size_t seq_len) const;
};

/// Fixed 2D sine-cosine table, one row per grid position in row-major order.
/// The first half of each row encodes the column, the second half the row.
std::vector<double> sincos_pos_embed(int dim, int grid);

/// Stacks token matrices of equal geometry into one (sum rows) x cols tensor.
ad::Tensor stack_tokens(std::span<const TokenMatrix* const> images, bool requires_grad = false);

/// Masked autoencoder with a [cls] token.
///
/// Batched entry points take B images stacked row-wise (B * n_patches rows)
/// and one MaskPlan per image; all plans must share the visible count. The
/// encoder output holds B sequences of 1 + |visible| rows, [cls] first, with
/// visible tokens in the order the plan lists them.
///
/// Tensors are shared handles: copying an Mmae aliases its parameters. Use
/// clone() for an independent copy.
class Mmae {
public:
    static Mmae init(const MmaeConfig& cfg, std::uint64_t seed);
    static Mmae from_checkpoint(const ad::Checkpoint& ckpt);

    const MmaeConfig& config() const { return cfg_; }
    Mmae clone() const;

    /// Projection, positional embedding and [cls] prepend, before any block.
    ad::Tensor embed(const ad::Tensor& tokens, std::span<const MaskPlan> plans) const;
    /// Encoder blocks [first, last) on B sequences of seq_len rows.
    ad::Tensor encoder_blocks(const ad::Tensor& x, std::size_t seq_len, std::size_t first, std::size_t last) const;
    ad::Tensor encoder_norm(const ad::Tensor& x) const { return enc_norm_(x); }
    /// embed, all blocks, final norm.
    ad::Tensor encode(const ad::Tensor& tokens, std::span<const MaskPlan> plans) const;
    /// (B * n_patches) x patch_dim reconstruction, [cls] dropped.
    ad::Tensor decode(const ad::Tensor& latents, std::span<const MaskPlan> plans) const;

    ad::Tensor encode(const TokenMatrix& tokens, const MaskPlan& plan) const;
    ad::Tensor decode(const ad::Tensor& latents, const MaskPlan& plan) const;

    /// All parameters, encoder first, in a fixed order.
    const std::vector<ad::NamedTensor>& parameters() const { return params_; }
    std::vector<ad::NamedTensor> encoder_parameters() const;
    /// Parameters of encoder block i (names "enc.blocks.<i>.").
    std::vector<ad::NamedTensor> encoder_block_parameters(std::size_t i) const;
    const Block& encoder_block(std::size_t i) const { return enc_blocks_.at(i); }

    ad::Checkpoint to_checkpoint(nlohmann::ordered_json metadata = nlohmann::ordered_json::object()) const;

private:
    void bind();
    const ad::Tensor& param(const std::string& name) const;

    MmaeConfig cfg_;
    std::vector<ad::NamedTensor> params_;
    ad::Tensor enc_pos_;  // n_patches x embed_dim, constant
    ad::Tensor dec_pos_;  // (1 + n_patches) x decoder_dim, constant, row 0 zero

    Linear patch_embed_;
    ad::Tensor cls_;
    std::vector<Block> enc_blocks_;
    Norm enc_norm_;
    Linear dec_embed_;
    ad::Tensor mask_token_;
    std::vector<Block> dec_blocks_;
    Linear head_;
};

/// [cls] rows (row b * seq_len) of a batched encoder output.
ad::Tensor cls_rows(const ad::Tensor& latents, std::size_t batch, std::size_t seq_len);

/// Mean squared error over masked patches only. With norm_pix the targets are
/// standardized per patch.
ad::Tensor masked_mse(const ad::Tensor& recon, const ad::Tensor& tokens, std::span<const MaskPlan> plans,
                      bool norm_pix = false);
ad::Tensor masked_mse(const ad::Tensor& recon, const TokenMatrix& tokens, const MaskPlan& plan,
                      bool norm_pix = false);

/// Parameter names and shapes for a configuration, in storage order.
std::vector<std::pair<std::string, ad::Shape>> parameter_layout(const MmaeConfig& cfg);

}  // namespace mf::mmae
