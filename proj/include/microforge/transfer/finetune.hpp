#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "microforge/transfer/regressor.hpp"

namespace mf::transfer {

enum class Mode { linear, partial, full };

/// Transfer mode and training hyperparameters.
///
/// linear: frozen encoder, linear head fitted by full-batch gradient descent.
/// partial(k): the last k encoder blocks, the final encoder norm (k >= 1) and
/// the head are trained; partial(0) trains the head only.
/// full: every encoder parameter and the head; identical to partial(depth).
struct ProbeConfig {
    Mode mode = Mode::linear;
    int k = 0;
    HeadKind head = HeadKind::linear;
    int hidden = kHeadHidden;

    // Gradient-trained modes.
    int epochs = 30;
    int batch_size = 32;
    double lr = 1e-2;          // head
    double encoder_lr = 1e-3;  // trainable encoder parameters
    double weight_decay = 0.0;

    // Linear probe: descent in the whitened latent basis.
    int max_iterations = 10000;
    double gradient_tolerance = 1e-10;

    static ProbeConfig linear();
    static ProbeConfig partial(int k, HeadKind head = HeadKind::feedforward);
    static ProbeConfig full();

    /// Number of trainable encoder blocks for an encoder of the given depth.
    int trainable_blocks(int depth) const;
    /// "linear", "partial:2", "full"; "-linear" / "-ff" appended when the
    /// head differs from the mode default.
    std::string label() const;
    void validate(int depth) const;
};

/// "linear", "partial:K" or "full".
ProbeConfig parse_mode(const std::string& s);

nlohmann::ordered_json to_json(const ProbeConfig& c);
/// Missing keys keep the defaults of `base`; unknown keys are rejected.
ProbeConfig probe_config_from_json(const nlohmann::ordered_json& j, ProbeConfig base = {});

struct ExperimentReport {
    std::string experiment;
    std::string mode;  // ProbeConfig::label()
    int k = 0;
    std::size_t n_data = 0;
    std::size_t n_train = 0;
    std::size_t n_val = 0;
    double mask_ratio = 0.0;  // of the source checkpoint
    std::uint64_t seed = 0;
    R2Report r2;  // validation split, GPa
    int best_epoch = 0;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
};

struct FitResult {
    Regressor model;
    ExperimentReport report;
};

using FitLogger = std::function<void(int epoch, double train_loss, const R2Report& val)>;

/// Frozen-encoder linear probe on the [cls] latents. The encoder passed in is
/// shared, never written.
FitResult fit_linear_probe(const mmae::Mmae& encoder, const LabeledSet& train, const LabeledSet& val,
                           std::uint64_t seed, const ProbeConfig& cfg = ProbeConfig::linear());

/// Trains the parameters designated by `cfg` on a copy of `source` and
/// returns the epoch with the best average validation R². Mode linear
/// delegates to fit_linear_probe.
FitResult finetune(const mmae::Mmae& source, const ProbeConfig& cfg, const LabeledSet& train, const LabeledSet& val,
                   std::uint64_t seed, const FitLogger& log = {});

/// Names of the encoder parameters `cfg` trains.
std::vector<std::string> trainable_encoder_parameters(const mmae::MmaeConfig& model, const ProbeConfig& cfg);

}  // namespace mf::transfer
