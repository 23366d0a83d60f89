#pragma once

#include <cstdint>
#include <vector>

#include "microforge/autodiff/tensor.hpp"

namespace mf::ad {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW style); 0 disables
};

/// Moment buffers and step counter for a fixed parameter list.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::int64_t step = 0;
    AdamOptions options;
};

/// Adam with bias correction. step() consumes and clears gradients.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamOptions options = {});

    /// Throws std::logic_error if a registered parameter has no gradient.
    void step();
    void zero_grad();
    void set_lr(double lr) { state_.options.lr = lr; }
    double lr() const { return state_.options.lr; }

    const AdamState& state() const { return state_; }
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    AdamState state_;
};

}  // namespace mf::ad
