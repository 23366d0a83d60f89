#include "microforge/autodiff/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace mf::ad {

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)) {
    state_.options = options;
    for (const auto& p : params_) {
        if (!p.defined()) throw std::invalid_argument("adam: undefined parameter");
        state_.m.emplace_back(p.size(), 0.0);
        state_.v.emplace_back(p.size(), 0.0);
    }
}

void Adam::step() {
    for (std::size_t k = 0; k < params_.size(); ++k) {
        if (!params_[k].has_grad()) {
            throw std::logic_error("adam: parameter " + std::to_string(k) + " " + shape_str(params_[k].shape()) +
                                   " has no gradient");
        }
    }
    const auto& o = state_.options;
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double c1 = 1.0 - std::pow(o.beta1, t);
    const double c2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto w = params_[k].mutable_values();
        const auto g = params_[k].grad();
        auto& m = state_.m[k];
        auto& v = state_.v[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
            v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            if (o.weight_decay != 0.0) w[i] -= o.lr * o.weight_decay * w[i];
            w[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
        }
        params_[k].clear_grad();
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.clear_grad();
}

}  // namespace mf::ad
