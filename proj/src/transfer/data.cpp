#include "microforge/transfer/data.hpp"

#include <cmath>
#include <numeric>

#include "microforge/common/rng.hpp"

namespace mf::transfer {

Split split_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
    const std::size_t n_train = n * 4 / 5;
    return {{order.begin(), order.begin() + static_cast<long>(n_train)},
            {order.begin() + static_cast<long>(n_train), order.end()}};
}

Split split_80_20(const microgen::DatasetManifest& manifest, std::uint64_t seed) {
    const std::size_t n = manifest.records.size();
    if (n < 5) throw std::invalid_argument("split: need at least 5 labeled records, have " + std::to_string(n));
    for (const auto& r : manifest.records)
        if (!r.stiffness) throw std::invalid_argument("split: record " + r.id + " is unlabeled");
    return split_indices(n, seed);
}

Standardizer Standardizer::fit(std::span<const Target> targets) {
    if (targets.size() < 2) throw std::invalid_argument("standardizer: need at least 2 targets");
    Standardizer s;
    const double n = static_cast<double>(targets.size());
    for (std::size_t c = 0; c < 3; ++c) {
        double mu = 0.0, var = 0.0;
        for (const auto& t : targets) mu += t[c];
        mu /= n;
        for (const auto& t : targets) var += (t[c] - mu) * (t[c] - mu);
        var /= n;
        if (var == 0.0) throw DegenerateTargetError(static_cast<int>(c));
        s.mean[c] = mu;
        s.scale[c] = std::sqrt(var);
    }
    return s;
}

Target Standardizer::apply(const Target& t) const {
    Target z;
    for (std::size_t c = 0; c < 3; ++c) z[c] = (t[c] - mean[c]) / scale[c];
    return z;
}

Target Standardizer::invert(const Target& z) const {
    Target t;
    for (std::size_t c = 0; c < 3; ++c) t[c] = z[c] * scale[c] + mean[c];
    return t;
}

nlohmann::ordered_json to_json(const Standardizer& s) { return {{"mean", s.mean}, {"scale", s.scale}}; }

Standardizer standardizer_from_json(const nlohmann::ordered_json& j) {
    Standardizer s;
    s.mean = j.at("mean").get<Target>();
    s.scale = j.at("scale").get<Target>();
    return s;
}

LabeledSet load_labeled(const microgen::DatasetManifest& manifest, std::span<const std::size_t> indices,
                        const mmae::MmaeConfig& cfg) {
    LabeledSet set;
    for (std::size_t i : indices) {
        const auto& r = manifest.records.at(i);
        if (!r.stiffness) throw std::invalid_argument("record " + r.id + " is unlabeled");
        const auto img = microgen::read_pgm(manifest.resolve(r));
        if (img.width != cfg.image_size || img.height != cfg.image_size) {
            throw std::invalid_argument("image " + r.id + " does not match the model size " +
                                        std::to_string(cfg.image_size));
        }
        set.ids.push_back(r.id);
        set.images.push_back(mmae::patchify(img, cfg.patch_size));
        set.targets.push_back(*r.stiffness);
    }
    return set;
}

LabeledSet load_labeled(const microgen::DatasetManifest& manifest, const mmae::MmaeConfig& cfg) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
        if (manifest.records[i].stiffness) idx.push_back(i);
    return load_labeled(manifest, idx, cfg);
}

LabeledSet subset(const LabeledSet& set, std::span<const std::size_t> indices) {
    LabeledSet out;
    for (std::size_t i : indices) {
        out.ids.push_back(set.ids.at(i));
        out.images.push_back(set.images[i]);
        out.targets.push_back(set.targets[i]);
    }
    return out;
}

std::vector<double> extract_cls(const mmae::Mmae& model, const mmae::TokenMatrix& image) {
    ad::NoGradGuard guard;
    const ad::Tensor z = model.encode(image, mmae::full_plan(model.config().n_patches()));
    return {z.values().begin(), z.values().begin() + static_cast<long>(z.cols())};
}

ad::Tensor extract_embeddings(const mmae::Mmae& model, const std::vector<mmae::TokenMatrix>& images,
                              std::size_t batch_size) {
    ad::NoGradGuard guard;
    const std::size_t np = model.config().n_patches(), d = static_cast<std::size_t>(model.config().embed_dim);
    std::vector<double> out;
    out.reserve(images.size() * d);
    for (std::size_t start = 0; start < images.size(); start += batch_size) {
        const std::size_t end = std::min(images.size(), start + batch_size);
        std::vector<const mmae::TokenMatrix*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&images[i]);
        const std::vector<mmae::MaskPlan> plans(end - start, mmae::full_plan(np));
        const ad::Tensor cls = mmae::cls_rows(model.encode(mmae::stack_tokens(batch), plans), end - start, np + 1);
        out.insert(out.end(), cls.values().begin(), cls.values().end());
    }
    return ad::Tensor::from({images.size(), d}, std::move(out));
}

}  // namespace mf::transfer
