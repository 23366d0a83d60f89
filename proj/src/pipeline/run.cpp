#include "microforge/pipeline/run.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "microforge/common/rng.hpp"
#include "microforge/homogenize/label.hpp"
#include "microforge/pipeline/report.hpp"
#include "microforge/saliency/saliency.hpp"

namespace mf::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string ratio_tag(double r) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", r);
    return buf;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void write_json(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return json::parse(in);
}

std::ofstream open_csv(const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

saliency::RgbImage gray_to_rgb(const microgen::RasterImage& g) {
    saliency::RgbImage out{g.height, g.width, {}};
    out.pixels.reserve(g.pixels.size() * 3);
    for (auto p : g.pixels) out.pixels.insert(out.pixels.end(), {p, p, p});
    return out;
}

class RunLog {
public:
    RunLog(const fs::path& file, std::function<void(const std::string&)> sink)
        : out_(file, std::ios::app), sink_(std::move(sink)) {}

    void operator()(const std::string& stage, const std::string& msg) {
        const std::string line = "[" + stage + "] " + msg;
        std::lock_guard lock(m_);
        out_ << line << '\n' << std::flush;
        if (sink_) sink_(line);
    }

private:
    std::ofstream out_;
    std::function<void(const std::string&)> sink_;
    std::mutex m_;
};

struct Outcome {
    bool ok = true;
    std::string message;
    json marker = json::object();
};

class Runner {
public:
    Runner(const RunConfig& cfg, const RunOptions& opt, RunResult& result, RunLog& log)
        : cfg_(cfg), ws_(result.workspace), hash_(result.config_hash), result_(result), log_(log),
          rerun_(opt.force) {}

    void all() {
        const std::uint64_t s = cfg_.seed;
        stage("gen", s, {}, {}, [&](bool) { return gen(); });
        stage("label", s, {"gen"}, labeled_requested() ? "" : "no labeled instances requested",
              [&](bool) { return label(); });
        stage("pretrain", derive_seed(s, streams::kPretrain), {"gen"}, {}, [&](bool reuse) { return pretrain(reuse); });
        const std::string no_labels = cfg_.labeled_data.n == 0 ? "zero labeled instances; transfer stages skipped" : "";
        stage("transfer", derive_seed(s, streams::kTransfer), {"label", "pretrain"}, no_labels,
              [&](bool) { return transfer(); });
        std::string sal_skip = no_labels;
        if (sal_skip.empty() && cfg_.saliency.n_images == 0) sal_skip = "saliency disabled (n_images = 0)";
        stage("saliency", derive_seed(s, streams::kSaliency), {"label", "pretrain"}, sal_skip,
              [&](bool) { return saliency(); });
        stage("figures", s, {}, {}, [&](bool) { return figures(); });

        if (fs::exists(ws_.transfer_csv())) result_.reports = read_reports_csv(ws_.transfer_csv());
    }

private:
    bool labeled_requested() const { return cfg_.labeled_data.n > 0 || cfg_.circle_data.n > 0; }

    bool succeeded(const std::string& name) const {
        for (const auto& st : result_.stages)
            if (st.name == name) return st.status == StageStatus::done || st.status == StageStatus::cached;
        return false;
    }

    void stage(const std::string& name, std::uint64_t seed, const std::vector<std::string>& deps,
               const std::string& skip_reason, const std::function<Outcome(bool)>& body) {
        StageRecord rec{name, StageStatus::done, 0.0, seed, {}};
        auto finish = [&] {
            log_(name, to_string(rec.status) + (rec.message.empty() ? "" : ": " + rec.message));
            result_.stages.push_back(rec);
        };
        if (!skip_reason.empty()) {
            rec.status = StageStatus::skipped;
            rec.message = skip_reason;
            return finish();
        }
        for (const auto& d : deps) {
            if (!succeeded(d) && !(d == "label" && !labeled_requested())) {
                rec.status = StageStatus::skipped;
                rec.message = "halted: stage '" + d + "' did not complete";
                return finish();
            }
        }
        const fs::path marker = ws_.marker(name);
        if (!rerun_ && fs::exists(marker)) {
            rec.status = StageStatus::cached;
            rec.message = "completed earlier, marker " + fs::relative(marker, ws_.root).string();
            return finish();
        }
        const bool reuse = !rerun_;
        rerun_ = true;
        fs::remove(marker);
        log_(name, "start, seed " + std::to_string(seed));
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = body(reuse);
        } catch (const std::exception& e) {
            out.ok = false;
            out.message = e.what();
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rec.status = out.ok ? StageStatus::done : StageStatus::failed;
        rec.message = out.message;
        if (out.ok) {
            json m = {{"stage", name}, {"seed", seed}, {"config_hash", hash_}};
            for (const auto& [k, v] : out.marker.items()) m[k] = v;
            write_json(marker, m);
        }
        log_(name, "wall-clock " + fmt(rec.seconds) + " s, seed " + std::to_string(seed));
        finish();
    }

    // Stages.

    Outcome gen() {
        Outcome out;
        struct Item {
            const char* name;
            const DatasetSpec* spec;
            std::uint64_t stream;
        };
        for (const Item& it : {Item{"pretrain", &cfg_.pretrain_data, streams::kPretrainData},
                               Item{"labeled", &cfg_.labeled_data, streams::kLabeledData},
                               Item{"circle", &cfg_.circle_data, streams::kCircleData}}) {
            if (it.spec->n == 0) continue;
            microgen::GenerateOptions g;
            g.kind = it.spec->kind;
            g.n = it.spec->n;
            g.resolution = it.spec->resolution;
            g.seed = derive_seed(cfg_.seed, it.stream);
            g.out_dir = ws_.datasets() / it.name;
            g.max_attempts = it.spec->max_attempts;
            g.circle_radius = it.spec->circle_radius;
            const auto rep = microgen::generate_dataset(g);
            log_("gen", std::string(it.name) + ": " + std::to_string(g.n) + " " + microgen::to_string(g.kind) +
                            " images at " + std::to_string(g.resolution) + "^2, seed " + std::to_string(g.seed) +
                            ", " + std::to_string(rep.reseeded_records) + " reseeded");
        }
        return out;
    }

    Outcome label() {
        Outcome out;
        homog::LabelOptions opt = cfg_.labeling;
        opt.threads = std::max(1u, cfg_.threads);
        std::size_t failed = 0;
        for (const auto& [name, spec, path] :
             {std::tuple{"labeled", &cfg_.labeled_data, ws_.labeled_manifest()},
              std::tuple{"circle", &cfg_.circle_data, ws_.circle_manifest()}}) {
            if (spec->n == 0) continue;
            const auto rep = homog::label_dataset(microgen::read_manifest(path), opt);
            microgen::write_manifest(path, rep.manifest);
            homog::write_label_metadata(path, opt);
            log_("label", std::string(name) + ": " + std::to_string(rep.manifest.labeled_count()) + " of " +
                              std::to_string(rep.manifest.records.size()) + " labeled");
            if (!rep.failures.empty()) {
                auto csv = open_csv(ws_.reports() / ("label_failures_" + std::string(name) + ".csv"));
                csv << "id,reason,seed,config_hash\n";
                for (const auto& f : rep.failures) {
                    std::string reason = f.reason;
                    for (char& c : reason)
                        if (c == ',' || c == '\n') c = ';';
                    csv << f.id << ',' << reason << ',' << cfg_.seed << ',' << hash_ << '\n';
                }
                failed += rep.failures.size();
            }
        }
        if (failed > 0) {
            out.ok = false;
            out.message = std::to_string(failed) + " records failed to label";
        }
        return out;
    }

    Outcome pretrain(bool reuse) {
        const std::uint64_t seed = derive_seed(cfg_.seed, streams::kPretrain);
        const std::uint64_t recon_seed = derive_seed(cfg_.seed, streams::kReconstruct);
        const auto manifest = microgen::read_manifest(ws_.pretrain_manifest());
        const auto images = mmae::load_tokens(manifest, cfg_.model);
        const double pixel_mean = mmae::mean_pixel(images);

        // Held-out images come from the labeled set, which pre-training never sees.
        std::vector<microgen::RasterImage> held_raster;
        std::vector<std::string> held_ids;
        std::vector<mmae::TokenMatrix> held;
        if (cfg_.labeled_data.n > 0) {
            const auto lm = microgen::read_manifest(ws_.labeled_manifest());
            for (const auto& r : lm.records) {
                if (held_raster.size() >= cfg_.reconstructions) break;
                held_raster.push_back(microgen::read_pgm(lm.resolve(r)));
                held_ids.push_back(r.id);
                held.push_back(mmae::patchify(held_raster.back(), cfg_.model.patch_size));
            }
        }

        std::vector<double> todo;
        for (double r : cfg_.mask_ratios)
            if (!(reuse && fs::exists(ws_.marker("pretrain_r" + ratio_tag(r))))) todo.push_back(r);
            else log_("pretrain", "mask " + ratio_tag(r) + ": cached");

        std::mutex m;
        std::vector<std::string> errors;
        auto one = [&](double ratio) {
            const std::string tag = ratio_tag(ratio);
            mmae::MmaeConfig mc = cfg_.model;
            mc.mask_ratio = ratio;
            auto res = mmae::pretrain(images, mc, cfg_.training, seed, [&](const mmae::EpochStat& e) {
                log_("pretrain", "mask " + tag + " epoch " + std::to_string(e.epoch) + " masked_mse " +
                                     fmt(e.masked_mse));
            });
            auto ckpt = mmae::pretrain_checkpoint(res, cfg_.training, seed, images.size());
            ckpt.metadata["config_hash"] = hash_;
            fs::create_directories(ws_.checkpoints());
            ad::write_checkpoint(ws_.checkpoint(ratio), ckpt);

            auto csv = open_csv(ws_.reports() / ("curve_r" + tag + ".csv"));
            csv << "epoch,masked_mse,mask_ratio,seed,config_hash\n";
            for (const auto& e : res.curve)
                csv << e.epoch << ',' << fmt(e.masked_mse) << ',' << tag << ',' << seed << ',' << hash_ << '\n';

            json marker = {{"stage", "pretrain_r" + tag}, {"mask_ratio", ratio}, {"seed", seed},
                           {"steps", res.steps}, {"final_loss", res.curve.back().masked_mse},
                           {"config_hash", hash_}};
            if (!held.empty()) {
                marker["heldout_mse"] = mean(mmae::masked_mse_per_image(res.model, held, ratio, recon_seed));
                marker["baseline_mse"] = mean(mmae::constant_mse_per_image(pixel_mean, held, mc, ratio, recon_seed));
                fs::create_directories(ws_.figures() / "reconstructions");
                for (std::size_t i = 0; i < held.size(); ++i) {
                    const auto t = mmae::reconstruct(res.model, held_raster[i], ratio, derive_seed(recon_seed, i));
                    const auto strip = mmae::triptych_strip(t);
                    const fs::path base = ws_.figures() / "reconstructions" / ("r" + tag + "_" + held_ids[i]);
                    microgen::write_pgm(fs::path(base).concat(".pgm"), strip);
                    saliency::write_png(fs::path(base).concat(".png"), gray_to_rgb(strip));
                }
            }
            write_json(ws_.marker("pretrain_r" + tag), marker);
        };

        std::size_t next = 0;
        auto worker = [&] {
            for (;;) {
                double ratio;
                {
                    std::lock_guard lock(m);
                    if (next >= todo.size()) return;
                    ratio = todo[next++];
                }
                try {
                    one(ratio);
                } catch (const std::exception& e) {
                    std::lock_guard lock(m);
                    errors.push_back("mask " + ratio_tag(ratio) + ": " + e.what());
                }
            }
        };
        const unsigned threads = std::max(1u, std::min<unsigned>(cfg_.threads, static_cast<unsigned>(todo.size())));
        if (threads <= 1) {
            worker();
        } else {
            std::vector<std::jthread> pool;
            for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
        }

        // Summary over every ratio, cached or fresh, in config order.
        auto csv = open_csv(ws_.reports() / "pretrain.csv");
        csv << "mask_ratio,steps,final_loss,heldout_mse,baseline_mse,seed,config_hash\n";
        for (double r : cfg_.mask_ratios) {
            const fs::path mk = ws_.marker("pretrain_r" + ratio_tag(r));
            if (!fs::exists(mk)) continue;
            const json j = read_json(mk);
            csv << ratio_tag(r) << ',' << j.at("steps").get<std::size_t>() << ','
                << fmt(j.at("final_loss").get<double>()) << ','
                << (j.contains("heldout_mse") ? fmt(j["heldout_mse"].get<double>()) : "") << ','
                << (j.contains("baseline_mse") ? fmt(j["baseline_mse"].get<double>()) : "") << ',' << seed << ','
                << hash_ << '\n';
        }

        Outcome out;
        if (!errors.empty()) {
            out.ok = false;
            for (const auto& e : errors) out.message += (out.message.empty() ? "" : "; ") + e;
        }
        return out;
    }

    transfer::SweepSpec sweep_spec() const {
        transfer::SweepSpec s;
        s.manifest = ws_.labeled_manifest();
        s.seed = derive_seed(cfg_.seed, streams::kTransfer);
        for (double r : cfg_.mask_ratios) s.mask_ratio_checkpoints.push_back(ws_.checkpoint(r));
        s.blocks_checkpoint = ws_.checkpoint(cfg_.primary_mask_ratio);
        s.blocks = cfg_.transfer.blocks;
        s.data_checkpoint = s.blocks_checkpoint;
        s.data_sizes = cfg_.transfer.data_sizes;
        s.data_mode = cfg_.transfer.data_mode;
        s.probe = cfg_.transfer.probe;
        s.finetune = cfg_.transfer.finetune;
        return s;
    }

    Outcome transfer() {
        const auto spec = sweep_spec();
        auto res = transfer::run_sweep(spec, [&](const std::string& cell, const transfer::ExperimentReport* r) {
            log_("transfer", cell + (r ? ": r2_avg " + fmt(r->r2.average) : ": failed"));
        });

        if (cfg_.circle_data.n > 0 && cfg_.transfer.cross_composite) {
            const auto encoder = mmae::Mmae::from_checkpoint(ad::read_checkpoint(spec.blocks_checkpoint));
            for (const auto& [name, path] : {std::pair{"fiber", ws_.labeled_manifest()},
                                             std::pair{"circle", ws_.circle_manifest()}}) {
                const std::string cell = std::string("cross_composite/") + name;
                try {
                    const auto all = transfer::load_labeled(microgen::read_manifest(path), encoder.config());
                    const auto split = transfer::split_indices(all.size(), spec.seed);
                    auto fit = transfer::fit_linear_probe(encoder, transfer::subset(all, split.train),
                                                          transfer::subset(all, split.val), spec.seed,
                                                          transfer::cell_config(spec, transfer::ProbeConfig::linear()));
                    fit.report.experiment = std::string("cross_composite_") + name;
                    fit.report.n_data = all.size();
                    log_("transfer", cell + ": r2_avg " + fmt(fit.report.r2.average));
                    res.reports.push_back(fit.report);
                } catch (const std::exception& e) {
                    log_("transfer", cell + ": failed");
                    res.failures.push_back({cell, e.what()});
                }
            }
        }

        fs::create_directories(ws_.reports());
        transfer::write_reports_csv(ws_.transfer_csv(), res.reports, hash_);
        const fs::path fail_csv = ws_.reports() / "transfer_failures.csv";
        fs::remove(fail_csv);
        Outcome out;
        out.message = std::to_string(res.reports.size()) + " reports";
        if (!res.failures.empty()) {
            transfer::write_failures_csv(fail_csv, res.failures);
            out.ok = false;
            out.message += ", " + std::to_string(res.failures.size()) + " failed cells (" +
                           fail_csv.filename().string() + ")";
        }
        result_.failures = res.failures;
        return out;
    }

    Outcome saliency() {
        const auto spec = sweep_spec();
        const std::uint64_t seed = derive_seed(cfg_.seed, streams::kSaliency);
        const auto encoder = mmae::Mmae::from_checkpoint(ad::read_checkpoint(spec.blocks_checkpoint));
        const auto manifest = microgen::read_manifest(ws_.labeled_manifest());
        const auto all = transfer::load_labeled(manifest, encoder.config());
        const auto split = transfer::split_indices(all.size(), spec.seed);
        const auto train = transfer::subset(all, split.train);
        const auto val = transfer::subset(all, split.val);
        const auto pc = transfer::cell_config(spec, transfer::parse_mode(cfg_.saliency.mode));
        auto fit = transfer::finetune(encoder, pc, train, val, seed);
        log_("saliency", "regressor " + pc.label() + ": r2_avg " + fmt(fit.report.r2.average));

        const fs::path ckpt = ws_.checkpoints() / ("regressor_" + cfg_.saliency.mode + ".ckpt");
        const std::string ckpt_id = ckpt.filename().string();
        json meta = transfer::to_json(pc);
        meta = {{"config_hash", hash_}, {"seed", seed}, {"probe", meta}};
        ad::write_checkpoint(ckpt, fit.model.to_checkpoint(meta));

        std::map<std::string, const microgen::ManifestRecord*> by_id;
        for (const auto& r : manifest.records) by_id[r.id] = &r;
        const std::size_t n = std::min(cfg_.saliency.n_images, val.size());
        auto index = open_csv(ws_.reports() / "saliency.csv");
        index << "image_id,component,label_gpa,prediction_gpa,map_max,map_mean,checkpoint,seed,config_hash\n";
        fs::create_directories(ws_.figures() / "saliency");
        fs::create_directories(ws_.reports() / "saliency");
        for (std::size_t i = 0; i < n; ++i) {
            const std::string& id = val.ids[i];
            const auto image = microgen::read_pgm(manifest.resolve(*by_id.at(id)));
            const auto pred = fit.model.predict({val.images[i]});
            for (const auto& comp_name : cfg_.saliency.components) {
                const int comp = transfer::parse_component(comp_name);
                auto map = saliency::saliency_map(fit.model, image, comp, val.targets[i][comp],
                                                  cfg_.saliency.standardized);
                map.checkpoint_id = ckpt_id;
                map.image_id = id;
                const std::string stem = id + "_" + transfer::kComponentNames[comp];
                saliency::write_png(ws_.figures() / "saliency" / (stem + ".png"),
                                    saliency::render_overlay(map, image));
                saliency::write_map_csv(ws_.reports() / "saliency" / (stem + ".csv"), map);
                const double mx = *std::max_element(map.values.begin(), map.values.end());
                index << id << ',' << transfer::kComponentNames[comp] << ',' << fmt(val.targets[i][comp]) << ','
                      << fmt(pred[0][comp]) << ',' << fmt(mx) << ',' << fmt(mean(map.values)) << ',' << ckpt_id
                      << ',' << seed << ',' << hash_ << '\n';
            }
        }
        Outcome out;
        out.message = std::to_string(n) + " images, regressor r2_avg " + fmt(fit.report.r2.average);
        return out;
    }

    Outcome figures() {
        Outcome out;
        std::vector<transfer::ExperimentReport> reports;
        if (fs::exists(ws_.transfer_csv())) reports = read_reports_csv(ws_.transfer_csv());
        const auto figs = emit_figures(reports, ws_.figures(), hash_);
        for (const auto& w : figs.warnings) log_("figures", "warning: " + w);

        std::vector<std::pair<double, std::vector<mmae::EpochStat>>> curves;
        for (double r : cfg_.mask_ratios) {
            std::ifstream in(ws_.reports() / ("curve_r" + ratio_tag(r) + ".csv"));
            if (!in) continue;
            std::vector<mmae::EpochStat> c;
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                int epoch = 0;
                double mse = 0.0;
                if (std::sscanf(line.c_str(), "%d,%lf", &epoch, &mse) == 2) c.push_back({epoch, mse});
            }
            curves.emplace_back(r, std::move(c));
        }
        std::size_t written = figs.written.size();
        if (!curves.empty()) {
            fs::create_directories(ws_.figures());
            write_svg(ws_.figures() / "pretrain_curves.svg", {curve_panel(curves)}, "Pre-training loss");
            ++written;
        }
        out.message = std::to_string(written) + " files";
        return out;
    }

    const RunConfig& cfg_;
    const Workspace& ws_;
    const std::string& hash_;
    RunResult& result_;
    RunLog& log_;
    bool rerun_;
};

}  // namespace

Workspace Workspace::for_config(const RunConfig& c) { return {c.output_root / config_hash(c)}; }

fs::path Workspace::checkpoint(double mask_ratio) const {
    return checkpoints() / ("mmae_r" + ratio_tag(mask_ratio) + ".ckpt");
}

std::string to_string(StageStatus s) {
    switch (s) {
        case StageStatus::done: return "done";
        case StageStatus::cached: return "cached";
        case StageStatus::skipped: return "skipped";
        case StageStatus::failed: return "failed";
    }
    return "unknown";
}

bool RunResult::ok() const {
    if (!failures.empty()) return false;
    for (const auto& s : stages) {
        if (s.status == StageStatus::failed) return false;
        if (s.status == StageStatus::skipped && s.message.starts_with("halted")) return false;
    }
    return true;
}

RunResult run_pipeline(const RunConfig& config, const RunOptions& options) {
    validate(config);
    RunResult result;
    result.workspace = Workspace::for_config(config);
    result.config_hash = config_hash(config);
    const Workspace& ws = result.workspace;
    for (const auto& d : {ws.datasets(), ws.checkpoints(), ws.reports(), ws.figures(), ws.root / ".stages"})
        fs::create_directories(d);
    write_json(ws.root / "config.json", to_json(config));

    RunLog log(ws.root / "run.log", options.log);
    log("run", "config " + result.config_hash + ", seed " + std::to_string(config.seed) + ", " +
                   (options.force ? "forced" : "resumable"));
    Runner(config, options, result, log).all();

    json summary;
    summary["config_hash"] = result.config_hash;
    summary["seed"] = config.seed;
    summary["ok"] = result.ok();
    summary["stages"] = json::array();
    for (const auto& s : result.stages)
        summary["stages"].push_back({{"name", s.name}, {"status", to_string(s.status)}, {"seconds", s.seconds},
                                     {"seed", s.seed}, {"message", s.message}});
    summary["reports"] = result.reports.size();
    summary["failures"] = json::array();
    for (const auto& f : result.failures) summary["failures"].push_back({{"cell", f.cell}, {"reason", f.reason}});
    write_json(ws.root / "summary.json", summary);
    log("run", result.ok() ? "finished" : "finished with failures");
    return result;
}

}  // namespace mf::pipeline
