#include "microforge/homogenize/label.hpp"

#include <atomic>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"

namespace mf::homog {

PhaseMap label_phase_map(const microgen::DatasetManifest& m, const microgen::ManifestRecord& r,
                         const LabelOptions& opt) {
    if (opt.resolution == 0) return PhaseMap::from_image(microgen::read_pgm(m.resolve(r)));
    return PhaseMap::from_image(microgen::rasterize(microgen::regenerate_rve(r), opt.resolution));
}

microgen::StiffnessLabel label_record(const microgen::DatasetManifest& m, const microgen::ManifestRecord& r,
                                      const LabelOptions& opt) {
    const StiffnessTensor2D c = effective_stiffness(label_phase_map(m, r, opt), opt.matrix, opt.inclusion, opt.solver);
    return {c.c1111(), c.c2222(), c.c1212()};
}

LabelReport label_dataset(const microgen::DatasetManifest& manifest, const LabelOptions& opt) {
    LabelReport report{manifest, {}};
    const std::size_t n = manifest.records.size();
    std::vector<std::string> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                report.manifest.records[i].stiffness = label_record(manifest, manifest.records[i], opt);
            } catch (const std::exception& e) {
                errors[i] = e.what();
                if (errors[i].empty()) errors[i] = "unknown error";
            }
        }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(n)));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!errors[i].empty()) report.failures.push_back({manifest.records[i].id, errors[i]});
    return report;
}

std::filesystem::path label_metadata_path(const std::filesystem::path& manifest_file) {
    auto p = manifest_file;
    p += ".meta.json";
    return p;
}

void write_label_metadata(const std::filesystem::path& manifest_file, const LabelOptions& opt) {
    nlohmann::ordered_json j;
    j["stiffness_units"] = "GPa";
    j["voigt_order"] = "11,22,12 (engineering shear)";
    j["kinematics"] = opt.solver.plane_strain ? "plane_strain" : "plane_stress";
    j["matrix"] = {{"young_modulus", opt.matrix.young_modulus}, {"poisson_ratio", opt.matrix.poisson_ratio}};
    j["inclusion"] = {{"young_modulus", opt.inclusion.young_modulus},
                      {"poisson_ratio", opt.inclusion.poisson_ratio}};
    j["scheme"] = to_string(opt.solver.scheme);
    j["tolerance"] = opt.solver.tolerance;
    j["max_iterations"] = opt.solver.max_iterations;
    j["resolution"] = opt.resolution;
    std::ofstream out(label_metadata_path(manifest_file), std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + label_metadata_path(manifest_file).string());
    out << j.dump(2) << '\n';
}

}  // namespace mf::homog
