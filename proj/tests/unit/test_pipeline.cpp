#include <fstream>
#include <sstream>

#include "doctest.h"
#include "microforge/pipeline/report.hpp"
#include "microforge/pipeline/run.hpp"

using namespace mf;
using namespace mf::pipeline;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mf_pipeline_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

json tiny_json() {
    return json::parse(R"({
      "seed": 11,
      "pretrain_data": {"n": 24, "resolution": 16},
      "labeled_data": {"n": 20, "resolution": 16},
      "circle_data": {"kind": "circle", "n": 15, "resolution": 16},
      "labeling": {"resolution": 0},
      "model": {"image_size": 16, "patch_size": 4, "embed_dim": 16, "encoder_depth": 2, "encoder_heads": 2,
                "decoder_dim": 12, "decoder_depth": 1, "decoder_heads": 2, "mlp_ratio": 2, "mask_ratio": 0.75},
      "training": {"epochs": 1, "batch_size": 8},
      "mask_ratios": [0.5, 0.75],
      "primary_mask_ratio": 0.75,
      "transfer": {"blocks": [0, 2], "data_sizes": [10, 20], "finetune": {"epochs": 1, "batch_size": 8}},
      "saliency": {"n_images": 1, "components": ["c1212"]},
      "reconstructions": 1
    })");
}

RunConfig tiny(const fs::path& root) {
    auto c = run_config_from_json(tiny_json());
    c.output_root = root;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Relative path -> bytes for every CSV, manifest and checkpoint under a run.
std::map<std::string, std::string> artifacts(const fs::path& run) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(run)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension();
        if (ext == ".csv" || ext == ".jsonl" || ext == ".ckpt" || ext == ".pgm" || ext == ".svg")
            out[fs::relative(e.path(), run).string()] = slurp(e.path());
    }
    return out;
}

const StageRecord& stage(const RunResult& r, const std::string& name) {
    for (const auto& s : r.stages)
        if (s.name == name) return s;
    throw std::out_of_range(name);
}

}  // namespace

TEST_CASE("run config json round trip keeps every field") {
    const auto c = run_config_from_json(tiny_json());
    const json j = to_json(c);
    CHECK(to_json(run_config_from_json(j)) == j);
    CHECK(c.transfer.finetune.epochs == 1);
    CHECK(c.transfer.finetune.mode == transfer::Mode::full);
    CHECK(c.circle_data.kind == microgen::CompositeKind::circle);
    CHECK(c.labeling.resolution == 0);
}

TEST_CASE("unknown keys are rejected at every level") {
    for (const char* path : {"/bogus", "/model/bogus", "/training/bogus", "/labeled_data/bogus", "/labeling/bogus",
                             "/labeling/matrix/bogus", "/transfer/bogus", "/transfer/probe/bogus", "/saliency/bogus"}) {
        json j = tiny_json();
        const json::json_pointer ptr(path);
        if (!j.contains(ptr.parent_pointer())) j[ptr.parent_pointer()] = json::object();
        j[ptr] = 1;
        CAPTURE(path);
        CHECK_THROWS_AS(run_config_from_json(j), std::invalid_argument);
    }
}

TEST_CASE("config validation") {
    auto bad = [](auto edit) {
        json j = tiny_json();
        edit(j);
        return j;
    };
    CHECK_THROWS_AS(run_config_from_json(bad([](json& j) { j["primary_mask_ratio"] = 0.6; })),
                    std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_json(bad([](json& j) { j["labeled_data"]["resolution"] = 32; })),
                    std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_json(bad([](json& j) { j["mask_ratios"] = json::array({0.75, 0.75}); })),
                    std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_json(bad([](json& j) { j["transfer"]["blocks"] = json::array({3}); })),
                    std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_json(bad([](json& j) { j["saliency"]["components"] = json::array({"c1122"}); })),
                    std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_json(bad([](json& j) { j["mask_ratios"] = json::array({1.0}); })),
                    std::invalid_argument);
    CHECK_NOTHROW(run_config_from_json(bad([](json& j) { j["labeled_data"]["n"] = 0; })));
}

TEST_CASE("config hash keys results, not placement") {
    auto a = tiny("/a");
    auto b = tiny("/b");
    b.threads = 4;
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    b.seed = 12;
    CHECK(config_hash(a) != config_hash(b));
    auto c = tiny("/a");
    c.training.lr *= 2;
    CHECK(config_hash(a) != config_hash(c));
    CHECK(Workspace::for_config(a).root == fs::path("/a") / config_hash(a));
}

TEST_CASE("pipeline runs end to end, deterministically, inside its run directory") {
    const fs::path r1 = scratch("det1"), r2 = scratch("det2");
    const auto a = run_pipeline(tiny(r1));
    const auto b = run_pipeline(tiny(r2));
    REQUIRE(a.ok());
    REQUIRE(b.ok());
    for (const auto& s : a.stages) CHECK(s.status == StageStatus::done);

    // 2 ratios x (linear, full) + linear + 2 blocks + 2 sizes + 2 cross-composite probes.
    CHECK(a.reports.size() == 11);
    const auto fa = artifacts(a.workspace.root), fb = artifacts(b.workspace.root);
    CHECK(fa.size() > 20);
    CHECK(fa == fb);

    // Nothing escapes the run directory.
    std::size_t top = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(r1)) ++top;
    CHECK(top == 1);

    const fs::path ws = a.workspace.root;
    for (const char* f : {"config.json", "run.log", "summary.json", "checkpoints/mmae_r0.5.ckpt",
                          "checkpoints/mmae_r0.75.ckpt", "checkpoints/regressor_full.ckpt", "reports/transfer.csv",
                          "reports/pretrain.csv", "reports/saliency.csv", "figures/mask_ratio_linear.svg",
                          "figures/mask_ratio_full.svg", "figures/blocks.svg", "figures/data_size.svg",
                          "figures/pretrain_curves.svg", "datasets/labeled/manifest.jsonl.meta.json"}) {
        CAPTURE(f);
        CHECK(fs::exists(ws / f));
    }

    // Every CSV row of the run carries the seed and the config hash.
    std::istringstream csv(slurp(ws / "reports" / "transfer.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == std::string(transfer::kReportHeader) + ",config_hash");
    while (std::getline(csv, line)) CHECK(line.ends_with("," + a.config_hash));

    CHECK(json::parse(slurp(ws / "config.json")) == to_json(tiny(r1)));
    const auto ck = ad::read_checkpoint(ws / "checkpoints" / "mmae_r0.5.ckpt");
    CHECK(ck.metadata.at("config_hash") == a.config_hash);
    CHECK(ck.metadata.at("mask_ratio") == 0.5);
}

TEST_CASE("reruns are no-ops, resume at stage boundaries and honour force") {
    const fs::path root = scratch("resume");
    const auto cfg = tiny(root);
    const auto first = run_pipeline(cfg);
    REQUIRE(first.ok());
    const auto before = artifacts(first.workspace.root);

    const auto again = run_pipeline(cfg);
    CHECK(again.ok());
    for (const auto& s : again.stages) CHECK(s.status == StageStatus::cached);
    CHECK(again.reports.size() == first.reports.size());
    CHECK(artifacts(again.workspace.root) == before);

    // Losing a marker reruns that stage and everything after it.
    fs::remove(first.workspace.marker("transfer"));
    fs::remove(first.workspace.transfer_csv());
    const auto resumed = run_pipeline(cfg);
    CHECK(resumed.ok());
    CHECK(stage(resumed, "gen").status == StageStatus::cached);
    CHECK(stage(resumed, "pretrain").status == StageStatus::cached);
    CHECK(stage(resumed, "transfer").status == StageStatus::done);
    CHECK(stage(resumed, "saliency").status == StageStatus::done);
    CHECK(artifacts(resumed.workspace.root) == before);

    // A pretrain stage interrupted after one ratio reuses the finished checkpoint.
    fs::remove(first.workspace.marker("pretrain"));
    fs::remove(first.workspace.marker("pretrain_r0.75"));
    std::vector<std::string> lines;
    const auto partial = run_pipeline(cfg, {false, [&](const std::string& l) { lines.push_back(l); }});
    CHECK(partial.ok());
    CHECK(std::count(lines.begin(), lines.end(), "[pretrain] mask 0.5: cached") == 1);
    CHECK(artifacts(partial.workspace.root) == before);

    const auto forced = run_pipeline(cfg, {true, {}});
    CHECK(forced.ok());
    for (const auto& s : forced.stages) CHECK(s.status == StageStatus::done);
    CHECK(artifacts(forced.workspace.root) == before);
}

TEST_CASE("zero labeled instances skip transfer and say so") {
    json j = tiny_json();
    j["labeled_data"]["n"] = 0;
    j["circle_data"]["n"] = 0;
    auto cfg = run_config_from_json(j);
    cfg.output_root = scratch("nolabels");
    const auto r = run_pipeline(cfg);
    CHECK(r.ok());
    CHECK(r.reports.empty());
    CHECK(stage(r, "pretrain").status == StageStatus::done);
    for (const char* s : {"label", "transfer", "saliency"}) CHECK(stage(r, s).status == StageStatus::skipped);
    CHECK(stage(r, "transfer").message.find("zero labeled instances") != std::string::npos);
    const auto summary = json::parse(slurp(r.workspace.root / "summary.json"));
    CHECK(summary.at("stages")[3].at("status") == "skipped");
    CHECK(fs::exists(r.workspace.checkpoint(0.75)));
}

TEST_CASE("a failing cell fails the run but keeps partial results") {
    json j = tiny_json();
    j["transfer"]["data_sizes"] = json::array({10, 500});
    j["saliency"]["n_images"] = 0;
    auto cfg = run_config_from_json(j);
    cfg.output_root = scratch("failing");
    const auto r = run_pipeline(cfg);
    CHECK_FALSE(r.ok());
    CHECK(stage(r, "transfer").status == StageStatus::failed);
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].cell == "data_size/500");
    CHECK(r.reports.size() == 10);
    CHECK(fs::exists(r.workspace.reports() / "transfer_failures.csv"));
    CHECK_FALSE(fs::exists(r.workspace.marker("transfer")));
    CHECK(stage(r, "figures").status == StageStatus::done);
}

TEST_CASE("report csv round trip") {
    const fs::path dir = scratch("csv");
    transfer::ExperimentReport a;
    a.experiment = "blocks";
    a.mode = "partial:1";
    a.k = 1;
    a.n_data = 1000;
    a.mask_ratio = 0.85;
    a.seed = 18446744073709551615ULL;
    a.r2 = {{0.5, 0.25, -1.5}, -0.25};
    transfer::write_reports_csv(dir / "r.csv", {a, a}, "00ff00ff00ff00ff");
    std::string hash;
    const auto back = read_reports_csv(dir / "r.csv", &hash);
    REQUIRE(back.size() == 2);
    CHECK(hash == "00ff00ff00ff00ff");
    CHECK(transfer::report_row(back[1]) == transfer::report_row(a));

    std::ofstream(dir / "bad.csv") << "a,b\n";
    CHECK_THROWS(read_reports_csv(dir / "bad.csv"));
}

TEST_CASE("figures") {
    const fs::path dir = scratch("figs");
    CHECK_FALSE(emit_figures({}, dir).warnings.empty());
    CHECK(fs::is_empty(dir));

    std::vector<transfer::ExperimentReport> reps;
    for (double r : {0.75, 0.25, 0.5}) {
        transfer::ExperimentReport x;
        x.experiment = "mask_ratio";
        x.mode = "linear";
        x.mask_ratio = r;
        x.r2 = {{r, r, r}, r};
        reps.push_back(x);
    }
    const auto out = emit_figures(reps, dir, "h");
    REQUIRE(out.written.size() == 2);
    const std::string svg = slurp(dir / "mask_ratio_linear.svg");
    CHECK(svg.starts_with("<svg"));
    CHECK(svg.ends_with("</svg>\n"));
    // Average panel plus three component series, sorted by x.
    std::size_t lines = 0;
    for (std::size_t p = 0; (p = svg.find("<polyline", p)) != std::string::npos; ++p) ++lines;
    CHECK(lines == 4);
    const auto rows = read_reports_csv(dir / "mask_ratio_linear.csv");
    REQUIRE(rows.size() == 3);
    CHECK(render_svg(mask_ratio_panels(reps, "linear")) == render_svg(mask_ratio_panels(reps, "linear")));
    CHECK(mask_ratio_panels(reps, "full").empty());
    CHECK(blocks_panels(reps).empty());
}

TEST_CASE("plot helpers") {
    const auto t = nice_ticks(0.0, 1.0, 5);
    CHECK(t.front() == 0.0);
    CHECK(t.back() >= 1.0);
    CHECK(t.size() >= 5);
    const auto u = nice_ticks(0.913, 0.987, 4);
    CHECK(u.front() <= 0.913);
    CHECK(u.back() >= 0.987);
    CHECK(xml_escape("a<b & \"c\">") == "a&lt;b &amp; &quot;c&quot;&gt;");
    Panel p{"t", "x", "y", {{"s", {1, 2}, {1}}}, {}, false};
    CHECK_THROWS_AS(render_svg({p}), std::invalid_argument);
}
