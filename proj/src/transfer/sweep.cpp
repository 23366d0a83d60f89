#include "microforge/transfer/sweep.hpp"

#include <cstdio>
#include <fstream>
#include <map>

#include "microforge/common/rng.hpp"

namespace mf::transfer {

namespace {

constexpr std::uint64_t kDataStream = 7;

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

template <class F>
void check_keys(const nlohmann::ordered_json& j, const char* where, F&& known) {
    if (!j.is_object()) throw std::invalid_argument(std::string(where) + ": expected an object");
    for (const auto& [key, v] : j.items())
        if (!known(key)) throw std::invalid_argument(std::string(where) + ": unknown key '" + key + "'");
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

SweepSpec sweep_spec_from_json(const nlohmann::ordered_json& j, const std::filesystem::path& base_dir) {
    check_keys(j, "sweep spec", [](const std::string& k) {
        return k == "manifest" || k == "seed" || k == "mask_ratio_checkpoints" || k == "blocks" || k == "data_size" ||
               k == "probe" || k == "finetune";
    });
    SweepSpec s;
    s.manifest = resolve(base_dir, j.at("manifest").get<std::string>());
    s.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("mask_ratio_checkpoints"))
        for (const auto& p : j.at("mask_ratio_checkpoints")) s.mask_ratio_checkpoints.push_back(resolve(base_dir, p.get<std::string>()));
    if (j.contains("blocks")) {
        const auto& b = j.at("blocks");
        check_keys(b, "sweep spec blocks", [](const std::string& k) { return k == "checkpoint" || k == "k"; });
        s.blocks_checkpoint = resolve(base_dir, b.at("checkpoint").get<std::string>());
        s.blocks = b.at("k").get<std::vector<int>>();
    }
    if (j.contains("data_size")) {
        const auto& d = j.at("data_size");
        check_keys(d, "sweep spec data_size",
                   [](const std::string& k) { return k == "checkpoint" || k == "sizes" || k == "mode"; });
        s.data_checkpoint = resolve(base_dir, d.at("checkpoint").get<std::string>());
        s.data_sizes = d.at("sizes").get<std::vector<std::size_t>>();
        s.data_mode = d.value("mode", std::string("full"));
        parse_mode(s.data_mode);
    }
    if (j.contains("probe")) s.probe = probe_config_from_json(j.at("probe"), ProbeConfig::linear());
    if (j.contains("finetune")) s.finetune = probe_config_from_json(j.at("finetune"), ProbeConfig::full());
    return s;
}

nlohmann::ordered_json to_json(const SweepSpec& s) {
    nlohmann::ordered_json j;
    j["manifest"] = s.manifest.string();
    j["seed"] = s.seed;
    j["mask_ratio_checkpoints"] = nlohmann::ordered_json::array();
    for (const auto& p : s.mask_ratio_checkpoints) j["mask_ratio_checkpoints"].push_back(p.string());
    if (!s.blocks.empty()) j["blocks"] = {{"checkpoint", s.blocks_checkpoint.string()}, {"k", s.blocks}};
    if (!s.data_sizes.empty()) {
        j["data_size"] = {{"checkpoint", s.data_checkpoint.string()}, {"sizes", s.data_sizes}, {"mode", s.data_mode}};
    }
    j["probe"] = to_json(s.probe);
    j["finetune"] = to_json(s.finetune);
    return j;
}

ProbeConfig cell_config(const SweepSpec& spec, const ProbeConfig& mode) {
    ProbeConfig c = mode.mode == Mode::linear ? spec.probe : spec.finetune;
    c.mode = mode.mode;
    c.k = mode.k;
    c.head = mode.head;
    return c;
}

SweepResult run_sweep(const SweepSpec& spec, const SweepLogger& log) {
    SweepResult out;
    const auto manifest = microgen::read_manifest(spec.manifest);

    std::map<std::pair<int, int>, LabeledSet> sets;
    auto labeled = [&](const mmae::MmaeConfig& cfg) -> const LabeledSet& {
        const auto key = std::make_pair(cfg.image_size, cfg.patch_size);
        auto it = sets.find(key);
        if (it == sets.end()) it = sets.emplace(key, load_labeled(manifest, cfg)).first;
        return it->second;
    };

    auto run_cell = [&](const std::string& cell, const std::string& experiment, const std::filesystem::path& ckpt,
                        const ProbeConfig& mode, std::size_t n_data) {
        try {
            if (!std::filesystem::exists(ckpt)) throw std::runtime_error("missing checkpoint " + ckpt.string());
            const auto model = mmae::Mmae::from_checkpoint(ad::read_checkpoint(ckpt));
            const LabeledSet& all = labeled(model.config());
            LabeledSet pool;
            const LabeledSet* src = &all;
            if (n_data > 0) {
                if (n_data > all.size()) {
                    throw std::invalid_argument("requested " + std::to_string(n_data) + " records, manifest has " +
                                                std::to_string(all.size()) + " labeled");
                }
                auto order = split_indices(all.size(), derive_seed(spec.seed, kDataStream)).train;
                const auto rest = split_indices(all.size(), derive_seed(spec.seed, kDataStream)).val;
                order.insert(order.end(), rest.begin(), rest.end());
                order.resize(n_data);
                pool = subset(all, order);
                src = &pool;
            }
            if (src->size() < 5) throw std::invalid_argument("need at least 5 labeled records");
            const Split split = split_indices(src->size(), spec.seed);
            const LabeledSet train = subset(*src, split.train), val = subset(*src, split.val);
            FitResult fit = finetune(model, cell_config(spec, mode), train, val, spec.seed);
            fit.report.experiment = experiment;
            out.reports.push_back(fit.report);
            if (log) log(cell, &out.reports.back());
        } catch (const std::exception& e) {
            out.failures.push_back({cell, e.what()});
            if (log) log(cell, nullptr);
        }
    };

    for (const auto& ckpt : spec.mask_ratio_checkpoints) {
        const std::string name = ckpt.filename().string();
        run_cell("mask_ratio/" + name + "/linear", "mask_ratio", ckpt, ProbeConfig::linear(), 0);
        run_cell("mask_ratio/" + name + "/full", "mask_ratio", ckpt, ProbeConfig::full(), 0);
    }
    if (!spec.blocks.empty()) {
        int depth = -1;
        try {
            depth = mmae::config_from_json(ad::read_checkpoint(spec.blocks_checkpoint).config).encoder_depth;
        } catch (const std::exception&) {
        }
        run_cell("blocks/linear", "blocks", spec.blocks_checkpoint, ProbeConfig::linear(), 0);
        for (int k : spec.blocks) {
            const ProbeConfig mode = k == depth ? ProbeConfig::full() : ProbeConfig::partial(k);
            run_cell("blocks/" + mode.label(), "blocks", spec.blocks_checkpoint, mode, 0);
        }
    }
    for (std::size_t n : spec.data_sizes) {
        run_cell("data_size/" + std::to_string(n), "data_size", spec.data_checkpoint, parse_mode(spec.data_mode), n);
    }
    return out;
}

std::string report_row(const ExperimentReport& r) {
    return r.experiment + "," + fmt(r.mask_ratio) + "," + r.mode + "," + std::to_string(r.k) + "," +
           std::to_string(r.n_data) + "," + fmt(r.r2.component[0]) + "," + fmt(r.r2.component[1]) + "," +
           fmt(r.r2.component[2]) + "," + fmt(r.r2.average) + "," + std::to_string(r.seed);
}

void write_reports_csv(const std::filesystem::path& path, const std::vector<ExperimentReport>& reports,
                       const std::string& config_hash) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << kReportHeader << (config_hash.empty() ? "" : ",config_hash") << '\n';
    for (const auto& r : reports) os << report_row(r) << (config_hash.empty() ? "" : "," + config_hash) << '\n';
}

void write_failures_csv(const std::filesystem::path& path, const std::vector<SweepFailure>& failures) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "cell,reason\n";
    for (const auto& f : failures) {
        std::string reason = f.reason;
        for (char& c : reason)
            if (c == ',' || c == '\n') c = ';';
        os << f.cell << ',' << reason << '\n';
    }
}

}  // namespace mf::transfer
