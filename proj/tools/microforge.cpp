#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "microforge/common/rng.hpp"
#include "microforge/homogenize/label.hpp"
#include "microforge/pipeline/report.hpp"
#include "microforge/pipeline/run.hpp"
#include "microforge/saliency/saliency.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace mf;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw UsageError("cannot read " + p.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw UsageError(p.string() + ": " + e.what());
    }
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

std::vector<std::string> split_list(const std::vector<std::string>& items) {
    std::vector<std::string> out;
    for (const auto& s : items) {
        std::stringstream ss(s);
        for (std::string t; std::getline(ss, t, ',');)
            if (!t.empty()) out.push_back(t);
    }
    return out;
}

// gen

struct GenArgs {
    std::string kind = "fiber";
    std::size_t n = 10;
    int res = 64;
    std::uint64_t seed = 0;
    std::string out;
    std::size_t max_attempts = microgen::kDefaultMaxAttempts;
    double radius = microgen::kDefaultCircleRadius;
};

int cmd_gen(const GenArgs& a) {
    microgen::GenerateOptions g;
    g.kind = microgen::parse_kind(a.kind);
    g.n = a.n;
    g.resolution = a.res;
    g.seed = a.seed;
    g.out_dir = a.out;
    g.max_attempts = a.max_attempts;
    g.circle_radius = a.radius;
    const auto rep = microgen::generate_dataset(g);
    std::cout << rep.manifest_path.string() << ": " << rep.manifest.records.size() << " images, "
              << rep.reseeded_records << " reseeded\n";
    return 0;
}

// label

struct LabelArgs {
    std::string manifest;
    int res = homog::kDefaultLabelResolution;
    double tol = 1e-8;
    int max_iterations = 10000;
    std::string scheme = "spectral";
    bool plane_stress = false;
    unsigned threads = 1;
};

int cmd_label(const LabelArgs& a) {
    homog::LabelOptions opt;
    opt.resolution = a.res;
    opt.solver.tolerance = a.tol;
    opt.solver.max_iterations = a.max_iterations;
    opt.solver.scheme = homog::parse_scheme(a.scheme);
    opt.solver.plane_strain = !a.plane_stress;
    opt.threads = a.threads;
    const auto rep = homog::label_dataset(microgen::read_manifest(a.manifest), opt);
    microgen::write_manifest(a.manifest, rep.manifest);
    homog::write_label_metadata(a.manifest, opt);
    std::cout << a.manifest << ": " << rep.manifest.labeled_count() << " of " << rep.manifest.records.size()
              << " labeled\n";
    for (const auto& f : rep.failures) std::cerr << "failed " << f.id << ": " << f.reason << '\n';
    return rep.failures.empty() ? 0 : kExitFailure;
}

// pretrain

struct PretrainArgs {
    std::string manifest;
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    std::string curve;
    double mask_ratio = -1.0;
};

int cmd_pretrain(const PretrainArgs& a) {
    mmae::MmaeConfig mc;
    mmae::TrainConfig tc;
    if (!a.config.empty()) {
        const json j = read_json_file(a.config);
        for (const auto& [k, v] : j.items()) {
            if (k == "model") mc = mmae::config_from_json(v);
            else if (k == "training") tc = mmae::train_config_from_json(v);
            else throw UsageError(a.config + ": unknown key '" + k + "' (expected model, training)");
        }
    }
    if (a.mask_ratio >= 0) mc.mask_ratio = a.mask_ratio;
    mc.validate();
    const auto images = mmae::load_tokens(microgen::read_manifest(a.manifest), mc);
    auto res = mmae::pretrain(images, mc, tc, a.seed, [](const mmae::EpochStat& e) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "epoch %d masked_mse %.6g", e.epoch, e.masked_mse);
        log_line(buf);
    });
    ad::write_checkpoint(a.out, mmae::pretrain_checkpoint(res, tc, a.seed, images.size()));
    const fs::path curve = a.curve.empty() ? fs::path(a.out).replace_extension(".curve.csv") : fs::path(a.curve);
    mmae::write_curve_csv(curve, res.curve);
    std::cout << a.out << ": " << res.steps << " steps, final masked_mse " << res.curve.back().masked_mse << '\n';
    return 0;
}

// reconstruct

struct ReconstructArgs {
    std::string ckpt;
    std::string image;
    std::string out;
    std::uint64_t seed = 0;
    double mask_ratio = -1.0;
};

int cmd_reconstruct(const ReconstructArgs& a) {
    const auto model = mmae::Mmae::from_checkpoint(ad::read_checkpoint(a.ckpt));
    const double ratio = a.mask_ratio >= 0 ? a.mask_ratio : model.config().mask_ratio;
    const auto strip = mmae::triptych_strip(mmae::reconstruct(model, microgen::read_pgm(a.image), ratio, a.seed));
    if (fs::path(a.out).extension() == ".png") {
        saliency::RgbImage rgb{strip.height, strip.width, {}};
        for (auto p : strip.pixels) rgb.pixels.insert(rgb.pixels.end(), {p, p, p});
        saliency::write_png(a.out, rgb);
    } else {
        microgen::write_pgm(a.out, strip);
    }
    std::cout << a.out << '\n';
    return 0;
}

// probe / finetune

struct FitArgs {
    std::string ckpt;
    std::string manifest;
    std::string mode;
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    std::string save;
};

int cmd_fit(const FitArgs& a, const std::string& default_mode) {
    const auto encoder = mmae::Mmae::from_checkpoint(ad::read_checkpoint(a.ckpt));
    transfer::ProbeConfig mode = transfer::parse_mode(a.mode.empty() ? default_mode : a.mode);
    if (!a.config.empty()) {
        transfer::SweepSpec hp;
        const json j = read_json_file(a.config);
        hp.probe = transfer::probe_config_from_json(j, hp.probe);
        hp.finetune = transfer::probe_config_from_json(j, hp.finetune);
        mode = transfer::cell_config(hp, mode);
    }
    const auto manifest = microgen::read_manifest(a.manifest);
    const auto split = transfer::split_80_20(manifest, a.seed);
    const auto train = transfer::load_labeled(manifest, split.train, encoder.config());
    const auto val = transfer::load_labeled(manifest, split.val, encoder.config());
    auto fit = transfer::finetune(encoder, mode, train, val, a.seed, [](int epoch, double loss, const auto& r2) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "epoch %d train_loss %.6g val_r2_avg %.6f", epoch, loss, r2.average);
        log_line(buf);
    });
    fit.report.experiment = default_mode == "linear" ? "probe" : "finetune";
    fit.report.n_data = manifest.records.size();
    if (!a.save.empty()) ad::write_checkpoint(a.save, fit.model.to_checkpoint({{"seed", a.seed}}));
    if (!a.out.empty()) transfer::write_reports_csv(a.out, {fit.report});
    std::cout << transfer::kReportHeader << '\n' << transfer::report_row(fit.report) << '\n';
    return 0;
}

// sweep

struct SweepArgs {
    std::string spec;
    std::string out;
};

int cmd_sweep(const SweepArgs& a) {
    const auto spec = transfer::sweep_spec_from_json(read_json_file(a.spec), fs::path(a.spec).parent_path());
    const auto res = transfer::run_sweep(spec, [](const std::string& cell, const transfer::ExperimentReport* r) {
        log_line(cell + (r ? ": r2_avg " + std::to_string(r->r2.average) : ": failed"));
    });
    if (!a.out.empty()) {
        transfer::write_reports_csv(a.out, res.reports);
        if (!res.failures.empty())
            transfer::write_failures_csv(fs::path(a.out).replace_extension(".failures.csv"), res.failures);
    } else {
        std::cout << transfer::kReportHeader << '\n';
        for (const auto& r : res.reports) std::cout << transfer::report_row(r) << '\n';
    }
    for (const auto& f : res.failures) std::cerr << "failed " << f.cell << ": " << f.reason << '\n';
    return res.failures.empty() ? 0 : kExitFailure;
}

// saliency

struct SaliencyArgs {
    std::string ckpt;
    std::string manifest;
    std::vector<std::string> ids;
    std::string component = "c1111";
    std::string out = ".";
    bool gpa = false;
};

int cmd_saliency(const SaliencyArgs& a) {
    const auto reg = transfer::Regressor::from_checkpoint(ad::read_checkpoint(a.ckpt));
    const auto manifest = microgen::read_manifest(a.manifest);
    const int comp = transfer::parse_component(a.component);
    std::map<std::string, const microgen::ManifestRecord*> by_id;
    for (const auto& r : manifest.records) by_id[r.id] = &r;
    fs::create_directories(a.out);
    for (const auto& id : split_list(a.ids)) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw UsageError("no record '" + id + "' in " + a.manifest);
        if (!it->second->stiffness) throw UsageError("record '" + id + "' is unlabeled");
        const auto image = microgen::read_pgm(manifest.resolve(*it->second));
        auto map = saliency::saliency_map(reg, image, comp, (*it->second->stiffness)[comp], !a.gpa);
        map.checkpoint_id = fs::path(a.ckpt).filename().string();
        map.image_id = id;
        const fs::path stem = fs::path(a.out) / (id + "_" + transfer::kComponentNames[comp]);
        saliency::write_map_csv(fs::path(stem).concat(".csv"), map);
        saliency::write_png(fs::path(stem).concat(".png"), saliency::render_overlay(map, image));
        std::cout << fs::path(stem).concat(".png").string() << '\n';
    }
    return 0;
}

// run / report

struct RunArgs {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool force = false;
    unsigned threads = 0;
};

pipeline::RunConfig load_run_config(const RunArgs& a) {
    pipeline::RunConfig c;
    if (!a.config.empty()) {
        try {
            c = pipeline::read_run_config(a.config);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }
    if (a.seed_set) c.seed = a.seed;
    if (!a.out.empty()) c.output_root = a.out;
    if (a.threads > 0) c.threads = a.threads;
    pipeline::validate(c);
    return c;
}

void print_summary(const pipeline::RunResult& r) {
    std::cout << "run " << r.workspace.root.string() << '\n';
    for (const auto& s : r.stages) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%-9s %-8s %8.1f s  seed %llu", s.name.c_str(),
                      pipeline::to_string(s.status).c_str(), s.seconds, static_cast<unsigned long long>(s.seed));
        std::cout << buf << (s.message.empty() ? "" : "  " + s.message) << '\n';
    }
    std::cout << r.reports.size() << " reports, " << r.failures.size() << " failures\n";
}

int cmd_run(const RunArgs& a) {
    const auto c = load_run_config(a);
    const auto r = pipeline::run_pipeline(c, {a.force, log_line});
    print_summary(r);
    return r.ok() ? 0 : kExitFailure;
}

struct ReportArgs {
    std::string run;
    RunArgs locate;
};

int cmd_report(const ReportArgs& a) {
    fs::path dir = a.run;
    if (dir.empty()) dir = pipeline::Workspace::for_config(load_run_config(a.locate)).root;
    const fs::path csv = dir / "reports" / "transfer.csv";
    std::vector<transfer::ExperimentReport> reports;
    std::string hash;
    if (fs::exists(csv)) reports = pipeline::read_reports_csv(csv, &hash);
    const auto figs = pipeline::emit_figures(reports, dir / "figures", hash);
    for (const auto& w : figs.warnings) std::cerr << "warning: " << w << '\n';
    for (const auto& f : figs.written) std::cout << f.string() << '\n';
    if (fs::exists(dir / "summary.json")) std::cout << read_json_file(dir / "summary.json").dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"microforge: synthetic composites, homogenization, masked autoencoders, transfer and saliency"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "microforge 1.0.0");

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate a microstructure image dataset");
    g->add_option("--kind", gen.kind, "fiber or circle")->check(CLI::IsMember({"fiber", "circle"}));
    g->add_option("--n", gen.n, "Number of images")->required();
    g->add_option("--res", gen.res, "Image resolution in pixels");
    g->add_option("--seed", gen.seed, "Base seed");
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--max-attempts", gen.max_attempts, "Placement attempts per particle");
    g->add_option("--radius", gen.radius, "Circle radius as a fraction of the cell");

    LabelArgs lab;
    auto* l = app.add_subcommand("label", "Homogenize every record of a manifest in place");
    l->add_option("--manifest", lab.manifest, "Manifest (JSON Lines)")->required()->check(CLI::ExistingFile);
    l->add_option("--res", lab.res, "Solve grid; 0 solves on the stored image");
    l->add_option("--tol", lab.tol, "Equilibrium residual tolerance");
    l->add_option("--max-iterations", lab.max_iterations, "Iteration cap per load case");
    l->add_option("--scheme", lab.scheme, "spectral or fem")->check(CLI::IsMember({"spectral", "fem"}));
    l->add_flag("--plane-stress", lab.plane_stress, "Plane stress instead of plane strain");
    l->add_option("--threads", lab.threads, "Worker threads");

    PretrainArgs pt;
    auto* p = app.add_subcommand("pretrain", "Pre-train a masked autoencoder");
    p->add_option("--manifest", pt.manifest, "Image manifest")->required()->check(CLI::ExistingFile);
    p->add_option("--config", pt.config, "JSON with optional model and training sections")
        ->check(CLI::ExistingFile);
    p->add_option("--seed", pt.seed, "Seed");
    p->add_option("--out", pt.out, "Checkpoint path")->required();
    p->add_option("--curve", pt.curve, "Training curve CSV (default <out>.curve.csv)");
    p->add_option("--mask-ratio", pt.mask_ratio, "Overrides model.mask_ratio");

    ReconstructArgs rc;
    auto* r = app.add_subcommand("reconstruct", "Write an (original | masked | reconstruction) strip");
    r->add_option("--ckpt", rc.ckpt, "Pre-trained checkpoint")->required()->check(CLI::ExistingFile);
    r->add_option("--image", rc.image, "PGM image")->required()->check(CLI::ExistingFile);
    r->add_option("--out", rc.out, ".pgm or .png")->required();
    r->add_option("--seed", rc.seed, "Mask seed");
    r->add_option("--mask-ratio", rc.mask_ratio, "Defaults to the checkpoint ratio");

    FitArgs pr, ft;
    auto add_fit = [&](CLI::App* s, FitArgs& f) {
        s->add_option("--ckpt", f.ckpt, "Pre-trained checkpoint")->required()->check(CLI::ExistingFile);
        s->add_option("--manifest", f.manifest, "Labeled manifest")->required()->check(CLI::ExistingFile);
        s->add_option("--mode", f.mode, "linear, partial:K or full");
        s->add_option("--config", f.config, "JSON hyperparameters")->check(CLI::ExistingFile);
        s->add_option("--seed", f.seed, "Split and training seed");
        s->add_option("--out", f.out, "Report CSV");
        s->add_option("--save", f.save, "Regressor checkpoint");
    };
    auto* pro = app.add_subcommand("probe", "Linear probe (or --mode) on frozen latents");
    add_fit(pro, pr);
    auto* fin = app.add_subcommand("finetune", "Fine-tune an encoder with a regression head");
    add_fit(fin, ft);

    SweepArgs sw;
    auto* s = app.add_subcommand("sweep", "Run a transfer experiment grid");
    s->add_option("--spec", sw.spec, "Sweep spec JSON")->required()->check(CLI::ExistingFile);
    s->add_option("--out", sw.out, "Report CSV (stdout when omitted)");

    SaliencyArgs sa;
    auto* sal = app.add_subcommand("saliency", "Gradient saliency maps for labeled records");
    sal->add_option("--ckpt", sa.ckpt, "Regressor checkpoint")->required()->check(CLI::ExistingFile);
    sal->add_option("--manifest", sa.manifest, "Labeled manifest")->required()->check(CLI::ExistingFile);
    sal->add_option("--ids", sa.ids, "Record ids (space or comma separated)")->required();
    sal->add_option("--component", sa.component, "c1111, c2222 or c1212");
    sal->add_option("--out", sa.out, "Output directory");
    sal->add_flag("--gpa", sa.gpa, "Loss in GPa rather than on standardized targets");

    RunArgs ra;
    auto* run = app.add_subcommand("run", "Run the full pipeline for a configuration");
    run->add_option("--config", ra.config, "Run configuration JSON")->check(CLI::ExistingFile);
    run->add_option("--seed", ra.seed, "Overrides the configured seed")->each([&](const std::string&) {
        ra.seed_set = true;
    });
    run->add_option("--out", ra.out, "Overrides output_root");
    run->add_flag("--force", ra.force, "Rerun completed stages");
    run->add_option("--threads", ra.threads, "Overrides threads");

    ReportArgs rp;
    auto* rep = app.add_subcommand("report", "Redraw figures of a run and print its summary");
    rep->add_option("--run", rp.run, "Run directory");
    rep->add_option("--config", rp.locate.config, "Locate the run directory from a configuration")
        ->check(CLI::ExistingFile);
    rep->add_option("--seed", rp.locate.seed, "Seed override used when locating")->each([&](const std::string&) {
        rp.locate.seed_set = true;
    });
    rep->add_option("--out", rp.locate.out, "output_root override used when locating");

    CLI11_PARSE(app, argc, argv);

    try {
        if (g->parsed()) return cmd_gen(gen);
        if (l->parsed()) return cmd_label(lab);
        if (p->parsed()) return cmd_pretrain(pt);
        if (r->parsed()) return cmd_reconstruct(rc);
        if (pro->parsed()) return cmd_fit(pr, "linear");
        if (fin->parsed()) return cmd_fit(ft, "full");
        if (s->parsed()) return cmd_sweep(sw);
        if (sal->parsed()) return cmd_saliency(sa);
        if (run->parsed()) return cmd_run(ra);
        if (rep->parsed()) return cmd_report(rp);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}
