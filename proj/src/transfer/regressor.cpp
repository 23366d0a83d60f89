#include "microforge/transfer/regressor.hpp"

#include <cmath>

#include "microforge/common/rng.hpp"

namespace mf::transfer {

std::string to_string(HeadKind k) { return k == HeadKind::linear ? "linear" : "feedforward"; }

HeadKind parse_head(const std::string& s) {
    if (s == "linear") return HeadKind::linear;
    if (s == "feedforward" || s == "ff") return HeadKind::feedforward;
    throw std::invalid_argument("unknown head '" + s + "' (expected linear or feedforward)");
}

namespace {

mmae::Linear lecun_linear(std::size_t in, std::size_t out, Rng& rng) {
    std::vector<double> w(in * out);
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& x : w) x = sd * rng.normal();
    return {ad::Tensor::from({in, out}, std::move(w), true), ad::Tensor::zeros({1, out}, true)};
}

ad::Tensor copy(const ad::Tensor& t) {
    return ad::Tensor::from(t.shape(), {t.values().begin(), t.values().end()}, t.requires_grad());
}

}  // namespace

Head Head::init(HeadKind kind, std::size_t in, std::size_t hidden, std::uint64_t seed) {
    Rng rng(seed);
    Head h;
    h.kind = kind;
    if (kind == HeadKind::linear) {
        h.fc1 = lecun_linear(in, 3, rng);
    } else {
        h.fc1 = lecun_linear(in, hidden, rng);
        h.fc2 = lecun_linear(hidden, 3, rng);
    }
    return h;
}

ad::Tensor Head::operator()(const ad::Tensor& x) const {
    if (kind == HeadKind::linear) return fc1(x);
    return fc2(ad::gelu(fc1(x)));
}

std::vector<ad::NamedTensor> Head::parameters() const {
    std::vector<ad::NamedTensor> p{{"head.fc1.w", fc1.w}, {"head.fc1.b", fc1.b}};
    if (kind == HeadKind::feedforward) {
        p.push_back({"head.fc2.w", fc2.w});
        p.push_back({"head.fc2.b", fc2.b});
    }
    return p;
}

Head Head::clone() const {
    Head h;
    h.kind = kind;
    h.fc1 = {copy(fc1.w), copy(fc1.b)};
    if (kind == HeadKind::feedforward) h.fc2 = {copy(fc2.w), copy(fc2.b)};
    return h;
}

ad::Tensor Regressor::forward(const ad::Tensor& tokens, std::size_t batch) const {
    const std::size_t np = encoder.config().n_patches();
    const std::vector<mmae::MaskPlan> plans(batch, mmae::full_plan(np));
    return head(mmae::cls_rows(encoder.encode(tokens, plans), batch, np + 1));
}

std::vector<Target> Regressor::predict(const std::vector<mmae::TokenMatrix>& images, std::size_t batch_size) const {
    ad::NoGradGuard guard;
    std::vector<Target> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += batch_size) {
        const std::size_t end = std::min(images.size(), start + batch_size);
        std::vector<const mmae::TokenMatrix*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&images[i]);
        const ad::Tensor z = forward(mmae::stack_tokens(batch), end - start);
        for (std::size_t b = 0; b < end - start; ++b) out.push_back(scaler.invert({z.at(b, 0), z.at(b, 1), z.at(b, 2)}));
    }
    return out;
}

ad::Checkpoint Regressor::to_checkpoint(nlohmann::ordered_json metadata) const {
    ad::Checkpoint ck = encoder.to_checkpoint();
    for (auto& p : head.parameters()) ck.params.push_back(p);
    ck.metadata["kind"] = "regressor";
    ck.metadata["head"] = to_string(head.kind);
    ck.metadata["hidden"] = head.kind == HeadKind::feedforward ? head.fc1.w.cols() : 0;
    ck.metadata["targets"] = {"c1111", "c2222", "c1212"};
    ck.metadata["target_scaling"] = to_json(scaler);
    for (auto& [k, v] : metadata.items()) ck.metadata[k] = v;
    return ck;
}

Regressor Regressor::from_checkpoint(const ad::Checkpoint& ckpt) {
    if (ckpt.metadata.value("kind", "") != "regressor") {
        throw std::invalid_argument("checkpoint does not hold a regression head");
    }
    Regressor r{mmae::Mmae::from_checkpoint(ckpt), {}, standardizer_from_json(ckpt.metadata.at("target_scaling"))};
    r.head.kind = parse_head(ckpt.metadata.at("head").get<std::string>());
    r.head.fc1 = {copy(ckpt.get("head.fc1.w")), copy(ckpt.get("head.fc1.b"))};
    if (r.head.kind == HeadKind::feedforward) r.head.fc2 = {copy(ckpt.get("head.fc2.w")), copy(ckpt.get("head.fc2.b"))};
    return r;
}

}  // namespace mf::transfer
