#include "microforge/transfer/finetune.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <set>

#include "microforge/autodiff/adam.hpp"
#include "microforge/common/rng.hpp"
#include "microforge/mmae/train.hpp"

namespace mf::transfer {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::uint64_t kHeadStream = 1;
constexpr std::uint64_t kOrderStream = 2;
// Relative eigenvalue floor of the latent covariance kept by the probe.
constexpr double kWhiteningCutoff = 1e-12;

Eigen::Map<const RowMatrix> as_matrix(const ad::Tensor& t) {
    return {t.values().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

ad::Tensor standardized_targets(const LabeledSet& s, const Standardizer& sc, std::span<const std::size_t> idx) {
    std::vector<double> v;
    v.reserve(idx.size() * 3);
    for (std::size_t i : idx) {
        const Target z = sc.apply(s.targets[i]);
        v.insert(v.end(), z.begin(), z.end());
    }
    return ad::Tensor::from({idx.size(), 3}, std::move(v));
}

std::vector<Target> to_targets(const ad::Tensor& z, const Standardizer& sc) {
    std::vector<Target> out;
    for (std::size_t b = 0; b < z.rows(); ++b) out.push_back(sc.invert({z.at(b, 0), z.at(b, 1), z.at(b, 2)}));
    return out;
}

void check_sets(const LabeledSet& train, const LabeledSet& val) {
    if (train.size() < 2) throw std::invalid_argument("transfer: training split needs at least 2 records");
    if (val.size() < 2) throw std::invalid_argument("transfer: validation split needs at least 2 records");
}

std::vector<double> snapshot(const std::vector<ad::Tensor>& ts) {
    std::vector<double> out;
    for (const auto& t : ts) out.insert(out.end(), t.values().begin(), t.values().end());
    return out;
}

void restore(std::vector<ad::Tensor>& ts, const std::vector<double>& values) {
    std::size_t off = 0;
    for (auto& t : ts) {
        auto v = t.mutable_values();
        std::copy(values.begin() + static_cast<long>(off), values.begin() + static_cast<long>(off + v.size()), v.begin());
        off += v.size();
    }
}

}  // namespace

ProbeConfig ProbeConfig::linear() { return {}; }

ProbeConfig ProbeConfig::partial(int k, HeadKind head) {
    ProbeConfig c;
    c.mode = Mode::partial;
    c.k = k;
    c.head = head;
    return c;
}

ProbeConfig ProbeConfig::full() {
    ProbeConfig c;
    c.mode = Mode::full;
    c.head = HeadKind::feedforward;
    return c;
}

int ProbeConfig::trainable_blocks(int depth) const {
    switch (mode) {
        case Mode::linear: return 0;
        case Mode::partial: return k;
        case Mode::full: return depth;
    }
    return 0;
}

std::string ProbeConfig::label() const {
    switch (mode) {
        case Mode::linear: return "linear";
        case Mode::partial: return "partial:" + std::to_string(k) + (head == HeadKind::linear ? "-linear" : "");
        case Mode::full: return std::string("full") + (head == HeadKind::linear ? "-linear" : "");
    }
    return {};
}

void ProbeConfig::validate(int depth) const {
    if (mode == Mode::linear && head != HeadKind::linear) throw std::invalid_argument("linear probing uses a linear head");
    if (mode == Mode::partial && (k < 0 || k > depth)) {
        throw std::invalid_argument("partial fine-tuning needs 0 <= k <= " + std::to_string(depth) + ", got " +
                                    std::to_string(k));
    }
    if (epochs < 1 || batch_size < 1 || hidden < 1 || !(lr > 0.0) || !(encoder_lr > 0.0) || weight_decay < 0.0 ||
        max_iterations < 1 || !(gradient_tolerance > 0.0)) {
        throw std::invalid_argument("probe config: out-of-range value");
    }
}

ProbeConfig parse_mode(const std::string& s) {
    if (s == "linear") return ProbeConfig::linear();
    if (s == "full") return ProbeConfig::full();
    if (s.rfind("partial:", 0) == 0) {
        const std::string num = s.substr(8);
        std::size_t used = 0;
        int k = -1;
        try {
            k = std::stoi(num, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == num.size() && !num.empty() && k >= 0) return ProbeConfig::partial(k);
    }
    throw std::invalid_argument("unknown transfer mode '" + s + "' (expected linear, partial:K or full)");
}

nlohmann::ordered_json to_json(const ProbeConfig& c) {
    std::string mode = c.mode == Mode::linear ? "linear" : c.mode == Mode::full ? "full" : "partial:" + std::to_string(c.k);
    return {{"mode", mode},
            {"head", to_string(c.head)},
            {"hidden", c.hidden},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"encoder_lr", c.encoder_lr},
            {"weight_decay", c.weight_decay},
            {"max_iterations", c.max_iterations},
            {"gradient_tolerance", c.gradient_tolerance}};
}

ProbeConfig probe_config_from_json(const nlohmann::ordered_json& j, ProbeConfig base) {
    if (!j.is_object()) throw std::invalid_argument("probe config: expected an object");
    ProbeConfig c = base;
    if (j.contains("mode")) {
        const ProbeConfig m = parse_mode(j.at("mode").get<std::string>());
        c.mode = m.mode;
        c.k = m.k;
        c.head = m.head;
    }
    for (const auto& [key, v] : j.items()) {
        if (key == "mode") continue;
        if (key == "head") c.head = parse_head(v.get<std::string>());
        else if (key == "hidden") c.hidden = v.get<int>();
        else if (key == "epochs") c.epochs = v.get<int>();
        else if (key == "batch_size") c.batch_size = v.get<int>();
        else if (key == "lr") c.lr = v.get<double>();
        else if (key == "encoder_lr") c.encoder_lr = v.get<double>();
        else if (key == "weight_decay") c.weight_decay = v.get<double>();
        else if (key == "max_iterations") c.max_iterations = v.get<int>();
        else if (key == "gradient_tolerance") c.gradient_tolerance = v.get<double>();
        else throw std::invalid_argument("probe config: unknown key '" + key + "'");
    }
    return c;
}

std::vector<std::string> trainable_encoder_parameters(const mmae::MmaeConfig& model, const ProbeConfig& cfg) {
    const int depth = model.encoder_depth;
    const int k = cfg.trainable_blocks(depth);
    std::vector<std::string> out;
    for (const auto& [name, shape] : mmae::parameter_layout(model)) {
        if (name.rfind("enc.", 0) != 0) continue;
        bool train = false;
        if (name.rfind("enc.blocks.", 0) == 0) {
            const int block = std::stoi(name.substr(11));
            train = block >= depth - k;
        } else if (name.rfind("enc.norm.", 0) == 0) {
            train = k >= 1;
        } else {
            train = k == depth;
        }
        if (train) out.push_back(name);
    }
    return out;
}

FitResult fit_linear_probe(const mmae::Mmae& encoder, const LabeledSet& train, const LabeledSet& val,
                           std::uint64_t seed, const ProbeConfig& cfg) {
    if (cfg.mode != Mode::linear) throw std::invalid_argument("fit_linear_probe: mode must be linear");
    cfg.validate(encoder.config().encoder_depth);
    check_sets(train, val);
    const Standardizer scaler = Standardizer::fit(train.targets);

    const ad::Tensor xt = extract_embeddings(encoder, train.images);
    const auto x = as_matrix(xt);
    const Eigen::Index n = x.rows(), d = x.cols();
    const Eigen::RowVectorXd mu = x.colwise().mean();
    Eigen::RowVectorXd sd = ((x.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(n)).sqrt();
    for (Eigen::Index j = 0; j < d; ++j)
        if (sd(j) == 0.0) sd(j) = 1.0;

    // Whitened basis: principal directions of the standardized latents scaled
    // to unit variance. Layer-norm latents are close to collinear, and plain
    // descent on them stalls far from the optimum.
    const Eigen::MatrixXd z = ((x.rowwise() - mu).array().rowwise() / sd.array()).matrix();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(z.transpose() * z / static_cast<double>(n));
    const double top = eig.eigenvalues().maxCoeff();
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < d; ++j)
        if (eig.eigenvalues()(j) > kWhiteningCutoff * top) keep.push_back(j);
    const Eigen::Index rank = static_cast<Eigen::Index>(keep.size());
    Eigen::MatrixXd proj(d, rank);
    for (Eigen::Index j = 0; j < rank; ++j) proj.col(j) = eig.eigenvectors().col(keep[static_cast<std::size_t>(j)]) / std::sqrt(eig.eigenvalues()(keep[static_cast<std::size_t>(j)]));

    Eigen::MatrixXd za(n, rank + 1);
    za.leftCols(rank) = z * proj;
    za.col(rank).setOnes();
    Eigen::MatrixXd y(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Target t = scaler.apply(train.targets[static_cast<std::size_t>(i)]);
        for (int c = 0; c < 3; ++c) y(i, c) = t[static_cast<std::size_t>(c)];
    }

    // MSE over the n x 3 outputs in normal-equation form:
    // loss(W) = (tr(W'AW) - 2 tr(W'B) + tr(Y'Y)/n) / 3, gradient 2 (AW - B) / 3.
    const Eigen::MatrixXd a = za.transpose() * za / static_cast<double>(n);
    const Eigen::MatrixXd b = za.transpose() * y / static_cast<double>(n);
    const double yy = y.squaredNorm() / static_cast<double>(n);
    auto loss = [&](const Eigen::MatrixXd& w) { return ((w.transpose() * a * w).trace() - 2.0 * (w.transpose() * b).trace() + yy) / 3.0; };
    auto grad = [&](const Eigen::MatrixXd& w) -> Eigen::MatrixXd { return 2.0 / 3.0 * (a * w - b); };
    const double step = 1.0 / (2.0 / 3.0 * a.diagonal().maxCoeff() * 1.05);

    // Nesterov accelerated gradient descent with function-value restart.
    Eigen::MatrixXd wq = Eigen::MatrixXd::Zero(rank + 1, 3), look = wq;
    double t = 1.0, f = loss(wq);
    int iterations = 0;
    for (; iterations < cfg.max_iterations; ++iterations) {
        const Eigen::MatrixXd g = grad(look);
        if (g.cwiseAbs().maxCoeff() < cfg.gradient_tolerance) {
            wq = look;
            f = loss(wq);
            break;
        }
        const Eigen::MatrixXd next = look - step * g;
        const double fn = loss(next);
        if (fn > f) {
            look = wq;
            t = 1.0;
            continue;
        }
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        look = next + ((t - 1.0) / tn) * (next - wq);
        wq = next;
        f = fn;
        t = tn;
    }
    Eigen::MatrixXd w(d + 1, 3);
    w.topRows(d) = proj * wq.topRows(rank);
    w.row(d) = wq.row(rank);

    // Fold the feature standardization into one affine map on raw latents.
    const std::size_t du = static_cast<std::size_t>(d);
    std::vector<double> hw(du * 3), hb(3);
    for (int c = 0; c < 3; ++c) {
        double bias = w(d, c);
        for (Eigen::Index j = 0; j < d; ++j) {
            hw[static_cast<std::size_t>(j) * 3 + static_cast<std::size_t>(c)] = w(j, c) / sd(j);
            bias -= mu(j) * w(j, c) / sd(j);
        }
        hb[static_cast<std::size_t>(c)] = bias;
    }
    Head head;
    head.kind = HeadKind::linear;
    head.fc1 = {ad::Tensor::from({du, 3}, std::move(hw), true), ad::Tensor::from({1, 3}, std::move(hb), true)};

    FitResult res{Regressor{encoder, head, scaler}, {}};
    std::vector<Target> preds;
    {
        ad::NoGradGuard guard;
        preds = to_targets(head(extract_embeddings(encoder, val.images)), scaler);
    }
    auto& r = res.report;
    r.experiment = "probe";
    r.mode = cfg.label();
    r.k = 0;
    r.n_train = train.size();
    r.n_val = val.size();
    r.n_data = r.n_train + r.n_val;
    r.mask_ratio = encoder.config().mask_ratio;
    r.seed = seed;
    r.r2 = r2_score(preds, val.targets);
    r.best_epoch = iterations;
    r.config = to_json(cfg);
    r.config["train_loss"] = f;
    return res;
}

FitResult finetune(const mmae::Mmae& source, const ProbeConfig& cfg, const LabeledSet& train, const LabeledSet& val,
                   std::uint64_t seed, const FitLogger& log) {
    if (cfg.mode == Mode::linear) return fit_linear_probe(source, train, val, seed, cfg);
    const mmae::MmaeConfig& mc = source.config();
    cfg.validate(mc.encoder_depth);
    check_sets(train, val);

    const std::size_t depth = static_cast<std::size_t>(mc.encoder_depth);
    const std::size_t k = static_cast<std::size_t>(cfg.trainable_blocks(mc.encoder_depth));
    const std::size_t first = depth - k;
    const std::size_t np = mc.n_patches(), seq = np + 1, dim = static_cast<std::size_t>(mc.embed_dim);

    Regressor reg{source.clone(),
                  Head::init(cfg.head, dim, static_cast<std::size_t>(cfg.hidden), derive_seed(seed, kHeadStream)),
                  Standardizer::fit(train.targets)};

    const auto names = trainable_encoder_parameters(mc, cfg);
    const std::set<std::string> trainable(names.begin(), names.end());
    std::vector<ad::Tensor> enc_params, head_params;
    std::vector<ad::NamedTensor> frozen;
    for (auto p : reg.encoder.parameters()) {
        const bool on = trainable.contains(p.name);
        p.tensor.set_requires_grad(on);
        if (on) enc_params.push_back(p.tensor);
        else frozen.push_back(p);
    }
    for (const auto& p : reg.head.parameters()) head_params.push_back(p.tensor);
    const std::string frozen_hash = ad::parameter_hash(frozen);

    // Frozen prefix output per image: block `first` input, or the [cls]
    // feature itself when no block is trained.
    auto build_cache = [&](const LabeledSet& s) {
        std::vector<ad::Tensor> cache;
        if (k == depth) return cache;
        ad::NoGradGuard guard;
        constexpr std::size_t chunk = 64;
        for (std::size_t start = 0; start < s.size(); start += chunk) {
            const std::size_t end = std::min(s.size(), start + chunk), bsz = end - start;
            std::vector<const mmae::TokenMatrix*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&s.images[i]);
            const std::vector<mmae::MaskPlan> plans(bsz, mmae::full_plan(np));
            ad::Tensor x = reg.encoder.encoder_blocks(reg.encoder.embed(mmae::stack_tokens(batch), plans), seq, 0, first);
            std::size_t rows = seq;
            if (k == 0) {
                x = mmae::cls_rows(reg.encoder.encoder_norm(x), bsz, seq);
                rows = 1;
            }
            for (std::size_t b = 0; b < bsz; ++b) {
                std::vector<std::size_t> idx(rows);
                std::iota(idx.begin(), idx.end(), b * rows);
                cache.push_back(ad::gather_rows(x, idx).detach());
            }
        }
        return cache;
    };
    const auto train_cache = build_cache(train);
    const auto val_cache = build_cache(val);

    auto forward = [&](const LabeledSet& s, const std::vector<ad::Tensor>& cache, std::span<const std::size_t> idx) {
        ad::Tensor h;
        if (k == depth) {
            std::vector<const mmae::TokenMatrix*> batch;
            for (std::size_t i : idx) batch.push_back(&s.images[i]);
            const std::vector<mmae::MaskPlan> plans(idx.size(), mmae::full_plan(np));
            h = reg.encoder.embed(mmae::stack_tokens(batch), plans);
        } else {
            std::vector<ad::Tensor> parts;
            for (std::size_t i : idx) parts.push_back(cache[i]);
            h = ad::concat_rows(parts);
        }
        if (k > 0) h = mmae::cls_rows(reg.encoder.encoder_norm(reg.encoder.encoder_blocks(h, seq, first, depth)), idx.size(), seq);
        return reg.head(h);
    };

    auto evaluate = [&] {
        ad::NoGradGuard guard;
        std::vector<Target> preds;
        for (std::size_t start = 0; start < val.size(); start += 64) {
            std::vector<std::size_t> idx(std::min<std::size_t>(64, val.size() - start));
            std::iota(idx.begin(), idx.end(), start);
            const auto part = to_targets(forward(val, val_cache, idx), reg.scaler);
            preds.insert(preds.end(), part.begin(), part.end());
        }
        return r2_score(preds, val.targets);
    };

    ad::Adam head_opt(head_params, {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    std::optional<ad::Adam> enc_opt;
    if (!enc_params.empty()) enc_opt.emplace(enc_params, ad::AdamOptions{cfg.encoder_lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

    mmae::TrainConfig sched;
    sched.epochs = cfg.epochs;
    sched.lr = 1.0;
    sched.min_lr = 0.01;
    sched.warmup_epochs = cfg.epochs > 1 ? 1 : 0;
    const std::size_t n = train.size(), bs = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t steps_per_epoch = (n + bs - 1) / bs;

    std::vector<ad::Tensor> all_trained = enc_params;
    all_trained.insert(all_trained.end(), head_params.begin(), head_params.end());
    std::vector<double> best_values = snapshot(all_trained);
    R2Report best;
    best.average = -std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    std::size_t step = 0;
    std::vector<std::size_t> order(n);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(derive_seed(seed, kOrderStream), static_cast<std::uint64_t>(epoch)));
        rng.shuffle(std::span<std::size_t>(order));
        double total = 0.0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::span<const std::size_t> idx(order.data() + start, std::min(bs, n - start));
            const double f = mmae::learning_rate(sched, step, steps_per_epoch);
            head_opt.set_lr(cfg.lr * f);
            if (enc_opt) enc_opt->set_lr(cfg.encoder_lr * f);
            const ad::Tensor loss = ad::mse(forward(train, train_cache, idx), standardized_targets(train, reg.scaler, idx));
            if (!std::isfinite(loss.item())) {
                throw std::runtime_error("finetune: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                         std::to_string(step) + " (lr " + std::to_string(cfg.lr * f) + ")");
            }
            total += loss.item() * static_cast<double>(idx.size());
            ad::backward(loss);
            head_opt.step();
            if (enc_opt) enc_opt->step();
            ++step;
        }
        const R2Report r2 = evaluate();
        if (log) log(epoch, total / static_cast<double>(n), r2);
        if (r2.average > best.average) {
            best = r2;
            best_epoch = epoch;
            best_values = snapshot(all_trained);
        }
    }
    restore(all_trained, best_values);
    for (auto p : reg.encoder.parameters()) p.tensor.set_requires_grad(true);
    if (ad::parameter_hash(frozen) != frozen_hash) throw std::logic_error("finetune: a frozen parameter changed");

    FitResult res{std::move(reg), {}};
    auto& r = res.report;
    r.experiment = "finetune";
    r.mode = cfg.label();
    r.k = static_cast<int>(k);
    r.n_train = train.size();
    r.n_val = val.size();
    r.n_data = r.n_train + r.n_val;
    r.mask_ratio = mc.mask_ratio;
    r.seed = seed;
    r.r2 = best;
    r.best_epoch = best_epoch;
    r.config = to_json(cfg);
    return res;
}

}  // namespace mf::transfer
