#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "../support/least_squares.hpp"
#include "microforge/common/rng.hpp"
#include "microforge/transfer/sweep.hpp"

using namespace mf;
using namespace mf::transfer;

namespace {

mmae::MmaeConfig tiny_config() {
    mmae::MmaeConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.embed_dim = 16;
    c.encoder_depth = 3;
    c.encoder_heads = 2;
    c.decoder_dim = 8;
    c.decoder_depth = 1;
    c.decoder_heads = 2;
    c.mlp_ratio = 2;
    c.mask_ratio = 0.75;
    return c;
}

// Random binary images with labels that depend on the inclusion fraction and
// on the left/right imbalance, plus a little noise.
LabeledSet synthetic_set(std::size_t n, std::uint64_t seed, const mmae::MmaeConfig& c = tiny_config()) {
    Rng rng(seed);
    LabeledSet s;
    for (std::size_t i = 0; i < n; ++i) {
        microgen::RasterImage img{c.image_size, c.image_size,
                                  std::vector<std::uint8_t>(static_cast<std::size_t>(c.image_size * c.image_size))};
        const double p = 0.1 + 0.4 * rng.uniform();
        double left = 0.0, on = 0.0;
        for (int y = 0; y < c.image_size; ++y)
            for (int x = 0; x < c.image_size; ++x) {
                const bool v = rng.uniform() < p * (x < c.image_size / 2 ? 1.4 : 0.6);
                img.pixels[static_cast<std::size_t>(y * c.image_size + x)] = v ? 255 : 0;
                on += v;
                left += v && x < c.image_size / 2;
            }
        const double f = on / (c.image_size * c.image_size);
        s.ids.push_back("s" + std::to_string(i));
        s.images.push_back(mmae::patchify(img, c.patch_size));
        s.targets.push_back({100 + 300 * f + rng.normal(), 100 + 250 * f + 40 * (left / std::max(on, 1.0)),
                             40 + 60 * f * f + 0.5 * rng.normal()});
    }
    return s;
}

ProbeConfig quick(ProbeConfig c) {
    c.epochs = 4;
    c.batch_size = 8;
    c.lr = 3e-3;
    c.encoder_lr = 1e-3;
    return c;
}

std::map<std::string, std::string> hashes(const mmae::Mmae& m) {
    std::map<std::string, std::string> out;
    for (const auto& p : m.parameters()) out[p.name] = ad::parameter_hash({p});
    return out;
}

}  // namespace

TEST_CASE("r2 identities") {
    const std::vector<Target> t{{1, 10, 5}, {2, 12, 4}, {3, 11, 9}, {4, 15, 1}};
    const auto perfect = r2_score(t, t);
    for (double v : perfect.component) CHECK(v == 1.0);
    CHECK(perfect.average == 1.0);

    std::vector<Target> mean(4);
    for (std::size_t c = 0; c < 3; ++c) {
        double m = 0.0;
        for (const auto& x : t) m += x[c];
        for (auto& p : mean) p[c] = m / 4.0;
    }
    for (double v : r2_score(mean, t).component) CHECK(std::abs(v) <= 1e-12);

    std::vector<Target> hand_t{{1, 1, 1}, {2, 2, 2}, {3, 3, 3}, {4, 4, 4}};
    std::vector<Target> hand_p{{1, 1, 1}, {2, 2, 2}, {3, 3, 3}, {5, 5, 5}};
    const auto hand = r2_score(hand_p, hand_t);
    for (double v : hand.component) CHECK(v == 0.8);

    std::vector<Target> noisy = t, ta = t, pa = t;
    Rng rng(1);
    for (auto& p : noisy)
        for (double& v : p) v += rng.normal();
    for (std::size_t i = 0; i < t.size(); ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            ta[i][c] = 7.5 * t[i][c] - 3.0;
            pa[i][c] = 7.5 * noisy[i][c] - 3.0;
        }
    const auto r1 = r2_score(noisy, t), r2 = r2_score(pa, ta);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(r1.component[c] - r2.component[c]) <= 1e-12);
    CHECK(r1.average == doctest::Approx((r1.component[0] + r1.component[1] + r1.component[2]) / 3.0).epsilon(1e-15));
}

TEST_CASE("r2 rejects degenerate input") {
    std::vector<Target> t{{1, 2, 3}, {2, 2, 4}};
    try {
        r2_score(t, t);
        FAIL("expected an exception");
    } catch (const DegenerateTargetError& e) {
        CHECK(e.component == 1);
        CHECK(std::string(e.what()).find("c2222") != std::string::npos);
    }
    CHECK_THROWS_AS(r2_score(std::vector<Target>{{1, 2, 3}}, std::vector<Target>{{1, 2, 3}}), std::invalid_argument);
    CHECK_THROWS_AS(r2_score(std::vector<Target>(3), std::vector<Target>(2)), std::invalid_argument);
    CHECK(parse_component("C1212") == 2);
    CHECK_THROWS_AS(parse_component("c1122"), std::invalid_argument);
}

TEST_CASE("80/20 split sizes, determinism and disjointness") {
    const Split a = split_indices(5000, 9);
    CHECK(a.train.size() == 4000);
    CHECK(a.val.size() == 1000);
    std::set<std::size_t> all(a.train.begin(), a.train.end());
    all.insert(a.val.begin(), a.val.end());
    CHECK(all.size() == 5000);
    CHECK(split_indices(10, 1).train.size() == 8);
    CHECK(split_indices(10, 1).val.size() == 2);
    CHECK(split_indices(7, 1).train.size() == 5);
    CHECK(split_indices(5000, 9).train == a.train);
    CHECK(split_indices(5000, 10).train != a.train);

    microgen::DatasetManifest m;
    for (int i = 0; i < 6; ++i) {
        microgen::ManifestRecord r;
        r.id = std::to_string(i);
        r.stiffness = Target{1.0 + i, 2, 3};
        m.records.push_back(r);
    }
    CHECK(split_80_20(m, 3).train == split_indices(6, 3).train);
    m.records[2].stiffness.reset();
    CHECK_THROWS_AS(split_80_20(m, 3), std::invalid_argument);
    m.records.resize(4);
    for (auto& r : m.records) r.stiffness = Target{1, 2, 3};
    CHECK_THROWS_AS(split_80_20(m, 3), std::invalid_argument);
}

TEST_CASE("standardizer round trip and degenerate targets") {
    const std::vector<Target> t{{1, 10, 5}, {3, 14, 7}, {5, 12, 9}};
    const auto s = Standardizer::fit(t);
    const Target z = s.apply(t[1]);
    CHECK(z[0] == doctest::Approx(0.0));
    const Target back = s.invert(z);
    for (std::size_t c = 0; c < 3; ++c) CHECK(back[c] == doctest::Approx(t[1][c]).epsilon(1e-14));
    CHECK_THROWS_AS(Standardizer::fit(std::vector<Target>{{1, 2, 3}, {1, 5, 6}}), DegenerateTargetError);
    const auto j = standardizer_from_json(to_json(s));
    CHECK(j.mean == s.mean);
    CHECK(j.scale == s.scale);
}

TEST_CASE("cls embeddings have embed_dim entries and are pure functions of the image") {
    const auto m = mmae::Mmae::init(tiny_config(), 1);
    const auto set = synthetic_set(3, 2);
    const auto a = extract_cls(m, set.images[0]);
    CHECK(a.size() == 16);
    CHECK(extract_cls(m, set.images[0]) == a);
    CHECK(extract_cls(m, set.images[1]) != a);
    const ad::Tensor e = extract_embeddings(m, set.images, 2);
    CHECK(e.rows() == 3);
    for (std::size_t k = 0; k < 16; ++k) CHECK(std::abs(e.at(0, k) - a[k]) < 1e-12);
}

TEST_CASE("gradient-trained linear probe matches the closed-form least-squares oracle") {
    auto m = mmae::Mmae::init(tiny_config(), 3);
    const auto all = synthetic_set(60, 4);
    const auto sp = split_indices(all.size(), 5);
    const auto train = subset(all, sp.train), val = subset(all, sp.val);
    const auto before = hashes(m);
    const FitResult fit = fit_linear_probe(m, train, val, 5);
    CHECK(hashes(m) == before);
    const auto oracle = mf::testing::least_squares_probe_r2(m, train, val);
    INFO("iterations " << fit.report.best_epoch);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(fit.report.r2.component[c] - oracle.component[c]) <= 1e-6);
    CHECK(std::abs(fit.report.r2.average - oracle.average) <= 1e-6);
    CHECK(fit.report.n_train == 48);
    CHECK(fit.report.n_val == 12);
    CHECK(fit.report.mask_ratio == 0.75);
    CHECK(fit.report.mode == "linear");

    // The returned regressor reproduces the reported score end to end.
    const auto preds = fit.model.predict(val.images);
    CHECK(r2_score(preds, val.targets).average == doctest::Approx(fit.report.r2.average).epsilon(1e-9));
}

TEST_CASE("probe fails on constant targets") {
    auto m = mmae::Mmae::init(tiny_config(), 3);
    auto all = synthetic_set(10, 4);
    for (auto& t : all.targets) t[2] = 7.0;
    const auto sp = split_indices(10, 1);
    CHECK_THROWS_AS(fit_linear_probe(m, subset(all, sp.train), subset(all, sp.val), 1), DegenerateTargetError);
}

TEST_CASE("mode parsing and validation") {
    CHECK(parse_mode("linear").mode == Mode::linear);
    CHECK(parse_mode("full").mode == Mode::full);
    const ProbeConfig p = parse_mode("partial:2");
    CHECK(p.mode == Mode::partial);
    CHECK(p.k == 2);
    CHECK(p.head == HeadKind::feedforward);
    CHECK(p.label() == "partial:2");
    CHECK(ProbeConfig::partial(0, HeadKind::linear).label() == "partial:0-linear");
    CHECK_THROWS_AS(parse_mode("partial:x"), std::invalid_argument);
    CHECK_THROWS_AS(parse_mode("partial:-1"), std::invalid_argument);
    CHECK_THROWS_AS(parse_mode("frozen"), std::invalid_argument);
    CHECK_THROWS_AS(ProbeConfig::partial(4).validate(3), std::invalid_argument);
    ProbeConfig bad = ProbeConfig::linear();
    bad.head = HeadKind::feedforward;
    CHECK_THROWS_AS(bad.validate(3), std::invalid_argument);

    const auto j = to_json(ProbeConfig::partial(1));
    CHECK(to_json(probe_config_from_json(j)) == j);
    CHECK_THROWS_AS(probe_config_from_json({{"lr", 1e-3}, {"momentum", 0.9}}), std::invalid_argument);

    const auto names = trainable_encoder_parameters(tiny_config(), ProbeConfig::partial(1));
    CHECK(std::all_of(names.begin(), names.end(), [](const std::string& n) {
        return n.starts_with("enc.blocks.2.") || n.starts_with("enc.norm.");
    }));
    CHECK(trainable_encoder_parameters(tiny_config(), ProbeConfig::partial(0)).empty());
    CHECK(trainable_encoder_parameters(tiny_config(), ProbeConfig::full()).size() ==
          trainable_encoder_parameters(tiny_config(), ProbeConfig::partial(3)).size());
}

TEST_CASE("fine-tuning changes exactly the designated parameters") {
    const auto src = mmae::Mmae::init(tiny_config(), 6);
    const auto before = hashes(src);
    const auto all = synthetic_set(30, 7);
    const auto sp = split_indices(all.size(), 8);
    const auto train = subset(all, sp.train), val = subset(all, sp.val);

    for (int k : {0, 2, 3}) {
        CAPTURE(k);
        const ProbeConfig cfg = quick(k == 3 ? ProbeConfig::full() : ProbeConfig::partial(k));
        const FitResult fit = finetune(src, cfg, train, val, 9);
        CHECK(hashes(src) == before);
        const auto names = trainable_encoder_parameters(tiny_config(), cfg);
        const std::set<std::string> trained(names.begin(), names.end());
        for (const auto& [name, h] : hashes(fit.model.encoder)) {
            CAPTURE(name);
            if (trained.contains(name)) CHECK(h != before.at(name));
            else CHECK(h == before.at(name));
        }
        CHECK(fit.report.k == k);
        CHECK(fit.report.best_epoch >= 1);
        CHECK(fit.report.best_epoch <= 4);
        // Best-epoch state is what the returned model predicts with.
        CHECK(r2_score(fit.model.predict(val.images), val.targets).average ==
              doctest::Approx(fit.report.r2.average).epsilon(1e-9));
    }
}

TEST_CASE("fine-tuning is deterministic and full equals partial(depth)") {
    const auto src = mmae::Mmae::init(tiny_config(), 10);
    const auto all = synthetic_set(20, 11);
    const auto sp = split_indices(all.size(), 12);
    const auto train = subset(all, sp.train), val = subset(all, sp.val);
    const auto a = finetune(src, quick(ProbeConfig::full()), train, val, 13);
    const auto b = finetune(src, quick(ProbeConfig::full()), train, val, 13);
    const auto c = finetune(src, quick(ProbeConfig::partial(3)), train, val, 13);
    const auto sa = ad::serialize_checkpoint(a.model.to_checkpoint());
    CHECK(sa == ad::serialize_checkpoint(b.model.to_checkpoint()));
    CHECK(sa == ad::serialize_checkpoint(c.model.to_checkpoint()));
    CHECK(a.report.r2.average == c.report.r2.average);
    CHECK(finetune(src, quick(ProbeConfig::full()), train, val, 14).report.r2.average != a.report.r2.average);
}

TEST_CASE("regressor checkpoint round trip") {
    const auto src = mmae::Mmae::init(tiny_config(), 15);
    const auto all = synthetic_set(15, 16);
    const auto sp = split_indices(all.size(), 17);
    const auto fit = finetune(src, quick(ProbeConfig::partial(1)), subset(all, sp.train), subset(all, sp.val), 18);
    const auto bytes = ad::serialize_checkpoint(fit.model.to_checkpoint({{"mode", "partial:1"}}));
    const auto back = Regressor::from_checkpoint(ad::parse_checkpoint(bytes));
    CHECK(ad::serialize_checkpoint(back.to_checkpoint({{"mode", "partial:1"}})) == bytes);
    const auto p = fit.model.predict(all.images), q = back.predict(all.images);
    CHECK(p == q);
    CHECK_THROWS_AS(Regressor::from_checkpoint(src.to_checkpoint()), std::invalid_argument);
}

TEST_CASE("sweep cells, endpoints and failure isolation") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mf_test_sweep";
    fs::remove_all(dir);
    fs::create_directories(dir / "images");
    const auto cfg = tiny_config();
    const auto all = synthetic_set(25, 19);
    microgen::DatasetManifest m;
    m.base_dir = dir;
    for (std::size_t i = 0; i < all.size(); ++i) {
        microgen::ManifestRecord r;
        r.id = all.ids[i];
        r.path = "images/" + r.id + ".pgm";
        r.stiffness = all.targets[i];
        microgen::write_pgm(dir / r.path, mmae::unpatchify(all.images[i], cfg.image_size, cfg.patch_size));
        m.records.push_back(r);
    }
    microgen::write_manifest(dir / "manifest.jsonl", m);
    auto other = cfg;
    other.mask_ratio = 0.5;
    ad::write_checkpoint(dir / "a.ckpt", mmae::Mmae::init(cfg, 20).to_checkpoint());
    ad::write_checkpoint(dir / "b.ckpt", mmae::Mmae::init(other, 21).to_checkpoint());

    const nlohmann::ordered_json j = {
        {"manifest", "manifest.jsonl"},
        {"seed", 4},
        {"mask_ratio_checkpoints", {"a.ckpt", "missing.ckpt", "b.ckpt"}},
        {"blocks", {{"checkpoint", "a.ckpt"}, {"k", {0, 1, 3}}}},
        {"data_size", {{"checkpoint", "a.ckpt"}, {"sizes", {10, 25}}, {"mode", "linear"}}},
        {"finetune", {{"epochs", 3}, {"batch_size", 8}, {"lr", 3e-3}, {"encoder_lr", 1e-3}}}};
    const SweepSpec spec = sweep_spec_from_json(j, dir);
    CHECK(spec.finetune.epochs == 3);
    const SweepResult r = run_sweep(spec);

    REQUIRE(r.failures.size() == 2);
    CHECK(r.failures[0].cell == "mask_ratio/missing.ckpt/linear");
    CHECK(r.failures[1].cell == "mask_ratio/missing.ckpt/full");
    REQUIRE(r.reports.size() == 4 + 4 + 2);
    CHECK(r.reports[0].mask_ratio == 0.75);
    CHECK(r.reports[2].mask_ratio == 0.5);
    CHECK(r.reports[1].mode == "full");

    // Endpoints of the blocks sweep reproduce the stand-alone runs.
    const auto& blocks_linear = r.reports[4];
    const auto& blocks_full = r.reports[7];
    CHECK(blocks_linear.mode == "linear");
    CHECK(blocks_full.mode == "full");
    CHECK(report_row(blocks_linear).substr(6) == report_row(r.reports[0]).substr(10));
    CHECK(blocks_full.r2.average == r.reports[1].r2.average);

    const auto sp = split_indices(25, 4);
    const auto model = mmae::Mmae::from_checkpoint(ad::read_checkpoint(dir / "a.ckpt"));
    const auto labeled = load_labeled(microgen::read_manifest(dir / "manifest.jsonl"), cfg);
    const auto solo = fit_linear_probe(model, subset(labeled, sp.train), subset(labeled, sp.val), 4);
    CHECK(solo.report.r2.average == blocks_linear.r2.average);

    CHECK(r.reports[8].n_data == 10);
    CHECK(r.reports[9].n_data == 25);

    write_reports_csv(dir / "r.csv", r.reports, "abc");
    std::ifstream in(dir / "r.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == std::string(kReportHeader) + ",config_hash");

    CHECK_THROWS_AS(sweep_spec_from_json({{"manifest", "m"}, {"sed", 1}}), std::invalid_argument);
    fs::remove_all(dir);
}
