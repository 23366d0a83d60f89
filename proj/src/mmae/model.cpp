#include "microforge/mmae/model.hpp"

#include <cmath>
#include <stdexcept>

#include "microforge/common/rng.hpp"

namespace mf::mmae {

namespace {

void add_block_layout(std::vector<std::pair<std::string, ad::Shape>>& out, const std::string& prefix, std::size_t d,
                      std::size_t hidden) {
    out.push_back({prefix + "ln1.g", {1, d}});
    out.push_back({prefix + "ln1.b", {1, d}});
    out.push_back({prefix + "attn.qkv.w", {d, 3 * d}});
    out.push_back({prefix + "attn.qkv.b", {1, 3 * d}});
    out.push_back({prefix + "attn.proj.w", {d, d}});
    out.push_back({prefix + "attn.proj.b", {1, d}});
    out.push_back({prefix + "ln2.g", {1, d}});
    out.push_back({prefix + "ln2.b", {1, d}});
    out.push_back({prefix + "mlp.fc1.w", {d, hidden}});
    out.push_back({prefix + "mlp.fc1.b", {1, hidden}});
    out.push_back({prefix + "mlp.fc2.w", {hidden, d}});
    out.push_back({prefix + "mlp.fc2.b", {1, d}});
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

void check_plans(std::span<const MaskPlan> plans, std::size_t n_patches) {
    if (plans.empty()) throw std::invalid_argument("mmae: empty batch");
    const std::size_t nv = plans[0].visible.size();
    for (const auto& p : plans) {
        if (p.n_patches != n_patches) {
            throw std::invalid_argument("mmae: mask plan over " + std::to_string(p.n_patches) +
                                        " patches, model has " + std::to_string(n_patches));
        }
        if (p.visible.size() != nv) throw std::invalid_argument("mmae: plans in a batch differ in visible count");
        if (p.visible.size() + p.masked.size() != n_patches) {
            throw std::invalid_argument("mmae: mask plan does not partition the patches");
        }
        for (std::size_t v : p.visible)
            if (v >= n_patches) throw std::invalid_argument("mmae: visible index out of range");
    }
    if (nv == 0) throw std::invalid_argument("mmae: no visible patches");
}

void check_tokens(const ad::Tensor& tokens, std::size_t batch, const MmaeConfig& cfg) {
    if (tokens.rank() != 2 || tokens.rows() != batch * cfg.n_patches() || tokens.cols() != cfg.patch_dim()) {
        throw ad::ShapeError("mmae: tokens " + ad::shape_str(tokens.shape()) + " do not match " +
                             std::to_string(batch) + " images of " + std::to_string(cfg.n_patches()) + "x" +
                             std::to_string(cfg.patch_dim()));
    }
}

}  // namespace

ad::Tensor Block::operator()(const ad::Tensor& x, std::size_t seq_len) const {
    const ad::Tensor a = ad::self_attention(qkv(ln1(x)), seq_len, heads);
    const ad::Tensor h = ad::add(x, proj(a));
    return ad::add(h, fc2(ad::gelu(fc1(ln2(h)))));
}

std::vector<double> sincos_pos_embed(int dim, int grid) {
    if (dim <= 0 || dim % 4 != 0) throw std::invalid_argument("sincos_pos_embed: dim must be a positive multiple of 4");
    const int quarter = dim / 4;
    std::vector<double> out(static_cast<std::size_t>(grid * grid * dim));
    for (int r = 0; r < grid; ++r) {
        for (int c = 0; c < grid; ++c) {
            double* row = &out[static_cast<std::size_t>((r * grid + c) * dim)];
            for (int i = 0; i < quarter; ++i) {
                const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
                row[i] = std::sin(c * omega);
                row[quarter + i] = std::cos(c * omega);
                row[2 * quarter + i] = std::sin(r * omega);
                row[3 * quarter + i] = std::cos(r * omega);
            }
        }
    }
    return out;
}

ad::Tensor stack_tokens(std::span<const TokenMatrix* const> images, bool requires_grad) {
    if (images.empty()) throw std::invalid_argument("stack_tokens: empty batch");
    const std::size_t rows = images[0]->rows, cols = images[0]->cols;
    std::vector<double> v;
    v.reserve(images.size() * rows * cols);
    for (const TokenMatrix* t : images) {
        if (t->rows != rows || t->cols != cols) throw ad::ShapeError("stack_tokens: images differ in geometry");
        v.insert(v.end(), t->values.begin(), t->values.end());
    }
    return ad::Tensor::from({images.size() * rows, cols}, std::move(v), requires_grad);
}

std::vector<std::pair<std::string, ad::Shape>> parameter_layout(const MmaeConfig& cfg) {
    cfg.validate();
    const auto d = static_cast<std::size_t>(cfg.embed_dim);
    const auto dd = static_cast<std::size_t>(cfg.decoder_dim);
    const auto p = cfg.patch_dim();
    const auto mlp = static_cast<std::size_t>(cfg.mlp_ratio);
    std::vector<std::pair<std::string, ad::Shape>> out;
    out.push_back({"enc.patch_embed.w", {p, d}});
    out.push_back({"enc.patch_embed.b", {1, d}});
    out.push_back({"enc.cls", {1, d}});
    for (int i = 0; i < cfg.encoder_depth; ++i)
        add_block_layout(out, "enc.blocks." + std::to_string(i) + ".", d, mlp * d);
    out.push_back({"enc.norm.g", {1, d}});
    out.push_back({"enc.norm.b", {1, d}});
    out.push_back({"dec.embed.w", {d, dd}});
    out.push_back({"dec.embed.b", {1, dd}});
    out.push_back({"dec.mask_token", {1, dd}});
    for (int i = 0; i < cfg.decoder_depth; ++i)
        add_block_layout(out, "dec.blocks." + std::to_string(i) + ".", dd, mlp * dd);
    out.push_back({"dec.head.w", {dd, p}});
    out.push_back({"dec.head.b", {1, p}});
    return out;
}

Mmae Mmae::init(const MmaeConfig& cfg, std::uint64_t seed) {
    Mmae m;
    m.cfg_ = cfg;
    Rng rng(seed);
    for (auto& [name, shape] : parameter_layout(cfg)) {
        std::vector<double> v(ad::shape_size(shape), 0.0);
        if (ends_with(name, ".g")) {
            std::fill(v.begin(), v.end(), 1.0);
        } else if (ends_with(name, ".w") || ends_with(name, "cls") || ends_with(name, "mask_token")) {
            for (double& x : v) x = rng.truncated_normal(kInitStddev);
        }
        m.params_.push_back({name, ad::Tensor::from(shape, std::move(v), true)});
    }
    m.bind();
    return m;
}

Mmae Mmae::from_checkpoint(const ad::Checkpoint& ckpt) {
    Mmae m;
    m.cfg_ = config_from_json(ckpt.config);
    const auto layout = parameter_layout(m.cfg_);
    for (const auto& [name, shape] : layout) {
        const ad::Tensor& t = ckpt.get(name);
        if (t.shape() != shape) {
            throw ad::ShapeError("checkpoint: " + name + " has shape " + ad::shape_str(t.shape()) + ", config implies " +
                                 ad::shape_str(shape));
        }
        std::vector<double> v(t.values().begin(), t.values().end());
        m.params_.push_back({name, ad::Tensor::from(shape, std::move(v), true)});
    }
    m.bind();
    return m;
}

Mmae Mmae::clone() const {
    Mmae m;
    m.cfg_ = cfg_;
    for (const auto& p : params_) {
        std::vector<double> v(p.tensor.values().begin(), p.tensor.values().end());
        m.params_.push_back({p.name, ad::Tensor::from(p.tensor.shape(), std::move(v), p.tensor.requires_grad())});
    }
    m.bind();
    return m;
}

const ad::Tensor& Mmae::param(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p.tensor;
    throw std::out_of_range("mmae: no parameter '" + name + "'");
}

void Mmae::bind() {
    auto block = [this](const std::string& pre, int heads) {
        Block b;
        b.ln1 = {param(pre + "ln1.g"), param(pre + "ln1.b")};
        b.qkv = {param(pre + "attn.qkv.w"), param(pre + "attn.qkv.b")};
        b.proj = {param(pre + "attn.proj.w"), param(pre + "attn.proj.b")};
        b.ln2 = {param(pre + "ln2.g"), param(pre + "ln2.b")};
        b.fc1 = {param(pre + "mlp.fc1.w"), param(pre + "mlp.fc1.b")};
        b.fc2 = {param(pre + "mlp.fc2.w"), param(pre + "mlp.fc2.b")};
        b.heads = static_cast<std::size_t>(heads);
        return b;
    };
    patch_embed_ = {param("enc.patch_embed.w"), param("enc.patch_embed.b")};
    cls_ = param("enc.cls");
    enc_blocks_.clear();
    for (int i = 0; i < cfg_.encoder_depth; ++i)
        enc_blocks_.push_back(block("enc.blocks." + std::to_string(i) + ".", cfg_.encoder_heads));
    enc_norm_ = {param("enc.norm.g"), param("enc.norm.b")};
    dec_embed_ = {param("dec.embed.w"), param("dec.embed.b")};
    mask_token_ = param("dec.mask_token");
    dec_blocks_.clear();
    for (int i = 0; i < cfg_.decoder_depth; ++i)
        dec_blocks_.push_back(block("dec.blocks." + std::to_string(i) + ".", cfg_.decoder_heads));
    head_ = {param("dec.head.w"), param("dec.head.b")};

    const std::size_t np = cfg_.n_patches();
    enc_pos_ = ad::Tensor::from({np, static_cast<std::size_t>(cfg_.embed_dim)},
                                sincos_pos_embed(cfg_.embed_dim, cfg_.grid()));
    std::vector<double> dp(static_cast<std::size_t>(cfg_.decoder_dim), 0.0);
    const auto grid = sincos_pos_embed(cfg_.decoder_dim, cfg_.grid());
    dp.insert(dp.end(), grid.begin(), grid.end());
    dec_pos_ = ad::Tensor::from({np + 1, static_cast<std::size_t>(cfg_.decoder_dim)}, std::move(dp));
}

ad::Tensor Mmae::embed(const ad::Tensor& tokens, std::span<const MaskPlan> plans) const {
    const std::size_t np = cfg_.n_patches();
    check_plans(plans, np);
    check_tokens(tokens, plans.size(), cfg_);
    const std::size_t nv = plans[0].visible.size();

    std::vector<std::size_t> rows, pos, order;
    rows.reserve(plans.size() * nv);
    pos.reserve(plans.size() * nv);
    order.reserve(plans.size() * (nv + 1));
    for (std::size_t b = 0; b < plans.size(); ++b) {
        order.push_back(0);
        for (std::size_t j = 0; j < nv; ++j) {
            rows.push_back(b * np + plans[b].visible[j]);
            pos.push_back(plans[b].visible[j]);
            order.push_back(1 + b * nv + j);
        }
    }
    ad::Tensor e = patch_embed_(ad::gather_rows(tokens, rows));
    e = ad::add(e, ad::gather_rows(enc_pos_, pos));
    return ad::gather_rows(ad::concat_rows({cls_, e}), order);
}

ad::Tensor Mmae::encoder_blocks(const ad::Tensor& x, std::size_t seq_len, std::size_t first, std::size_t last) const {
    if (first > last || last > enc_blocks_.size()) throw std::out_of_range("mmae: encoder block range");
    ad::Tensor h = x;
    for (std::size_t i = first; i < last; ++i) h = enc_blocks_[i](h, seq_len);
    return h;
}

ad::Tensor Mmae::encode(const ad::Tensor& tokens, std::span<const MaskPlan> plans) const {
    const ad::Tensor x = embed(tokens, plans);
    const std::size_t seq = 1 + plans[0].visible.size();
    return enc_norm_(encoder_blocks(x, seq, 0, enc_blocks_.size()));
}

ad::Tensor Mmae::decode(const ad::Tensor& latents, std::span<const MaskPlan> plans) const {
    const std::size_t np = cfg_.n_patches();
    check_plans(plans, np);
    const std::size_t nv = plans[0].visible.size();
    const std::size_t seq = 1 + nv, batch = plans.size();
    if (latents.rank() != 2 || latents.rows() != batch * seq ||
        latents.cols() != static_cast<std::size_t>(cfg_.embed_dim)) {
        throw ad::ShapeError("mmae decode: latents " + ad::shape_str(latents.shape()) + " do not match " +
                             std::to_string(batch) + " sequences of " + std::to_string(seq));
    }
    const std::size_t mask_row = batch * seq;
    std::vector<std::size_t> idx, pos, out_rows;
    idx.reserve(batch * (np + 1));
    pos.reserve(batch * (np + 1));
    out_rows.reserve(batch * np);
    std::vector<std::size_t> slot(np);
    for (std::size_t b = 0; b < batch; ++b) {
        std::fill(slot.begin(), slot.end(), mask_row);
        for (std::size_t j = 0; j < nv; ++j) slot[plans[b].visible[j]] = b * seq + 1 + j;
        idx.push_back(b * seq);
        pos.push_back(0);
        for (std::size_t p = 0; p < np; ++p) {
            idx.push_back(slot[p]);
            pos.push_back(p + 1);
            out_rows.push_back(b * (np + 1) + 1 + p);
        }
    }
    ad::Tensor y = ad::gather_rows(ad::concat_rows({dec_embed_(latents), mask_token_}), idx);
    y = ad::add(y, ad::gather_rows(dec_pos_, pos));
    for (const Block& blk : dec_blocks_) y = blk(y, np + 1);
    return head_(ad::gather_rows(y, out_rows));
}

ad::Tensor Mmae::encode(const TokenMatrix& tokens, const MaskPlan& plan) const {
    const TokenMatrix* one[] = {&tokens};
    return encode(stack_tokens(one), std::span<const MaskPlan>(&plan, 1));
}

ad::Tensor Mmae::decode(const ad::Tensor& latents, const MaskPlan& plan) const {
    return decode(latents, std::span<const MaskPlan>(&plan, 1));
}

std::vector<ad::NamedTensor> Mmae::encoder_parameters() const {
    std::vector<ad::NamedTensor> out;
    for (const auto& p : params_)
        if (starts_with(p.name, "enc.")) out.push_back(p);
    return out;
}

std::vector<ad::NamedTensor> Mmae::encoder_block_parameters(std::size_t i) const {
    const std::string prefix = "enc.blocks." + std::to_string(i) + ".";
    std::vector<ad::NamedTensor> out;
    for (const auto& p : params_)
        if (starts_with(p.name, prefix)) out.push_back(p);
    return out;
}

ad::Checkpoint Mmae::to_checkpoint(nlohmann::ordered_json metadata) const {
    ad::Checkpoint ck;
    ck.config = to_json(cfg_);
    ck.params = params_;
    if (!metadata.contains("init")) {
        metadata["init"] = {{"weights", "truncated_normal"},
                            {"stddev", kInitStddev},
                            {"biases", "zeros"},
                            {"norm_scales", "ones"}};
    }
    ck.metadata = std::move(metadata);
    return ck;
}

ad::Tensor cls_rows(const ad::Tensor& latents, std::size_t batch, std::size_t seq_len) {
    std::vector<std::size_t> idx(batch);
    for (std::size_t b = 0; b < batch; ++b) idx[b] = b * seq_len;
    return ad::gather_rows(latents, idx);
}

ad::Tensor masked_mse(const ad::Tensor& recon, const ad::Tensor& tokens, std::span<const MaskPlan> plans,
                      bool norm_pix) {
    if (plans.empty()) throw std::invalid_argument("masked_mse: empty batch");
    const std::size_t np = plans[0].n_patches;
    if (recon.shape() != tokens.shape() || recon.rank() != 2 || recon.rows() != plans.size() * np) {
        throw ad::ShapeError("masked_mse: recon " + ad::shape_str(recon.shape()) + " vs tokens " +
                             ad::shape_str(tokens.shape()));
    }
    std::vector<std::size_t> rows;
    for (std::size_t b = 0; b < plans.size(); ++b)
        for (std::size_t m : plans[b].masked) rows.push_back(b * np + m);
    if (rows.empty()) throw std::invalid_argument("masked_mse: no masked patches");

    const std::size_t c = tokens.cols();
    std::vector<double> target(rows.size() * c);
    const auto tv = tokens.values();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* src = &tv[rows[i] * c];
        double* dst = &target[i * c];
        std::copy(src, src + c, dst);
        if (norm_pix) {
            double mu = 0.0, var = 0.0;
            for (std::size_t k = 0; k < c; ++k) mu += src[k];
            mu /= static_cast<double>(c);
            for (std::size_t k = 0; k < c; ++k) var += (src[k] - mu) * (src[k] - mu);
            var /= static_cast<double>(c);
            const double inv = 1.0 / std::sqrt(var + 1e-6);
            for (std::size_t k = 0; k < c; ++k) dst[k] = (src[k] - mu) * inv;
        }
    }
    return ad::mse(ad::gather_rows(recon, rows), ad::Tensor::from({rows.size(), c}, std::move(target)));
}

ad::Tensor masked_mse(const ad::Tensor& recon, const TokenMatrix& tokens, const MaskPlan& plan, bool norm_pix) {
    const ad::Tensor t = ad::Tensor::from({tokens.rows, tokens.cols}, tokens.values);
    return masked_mse(recon, t, std::span<const MaskPlan>(&plan, 1), norm_pix);
}

}  // namespace mf::mmae
