#include "microforge/microgen/dataset.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "microforge/common/rng.hpp"
#include "microforge/microgen/sampling.hpp"

namespace mf::microgen {

using ojson = nlohmann::ordered_json;

std::string to_string(CompositeKind kind) { return kind == CompositeKind::fiber ? "fiber" : "circle"; }

CompositeKind parse_kind(const std::string& s) {
    if (s == "fiber") return CompositeKind::fiber;
    if (s == "circle") return CompositeKind::circle;
    throw std::invalid_argument("unknown composite kind '" + s + "' (expected fiber or circle)");
}

std::size_t DatasetManifest::labeled_count() const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.stiffness.has_value();
    return n;
}

std::string manifest_line(const ManifestRecord& r) {
    ojson j;
    j["id"] = r.id;
    j["path"] = r.path;
    j["n_particles"] = r.descriptor.n_particles;
    j["aspect_ratio"] = r.descriptor.aspect_ratio;
    j["volume_fraction"] = r.descriptor.volume_fraction;
    if (r.stiffness) {
        j["c1111_gpa"] = (*r.stiffness)[0];
        j["c2222_gpa"] = (*r.stiffness)[1];
        j["c1212_gpa"] = (*r.stiffness)[2];
    }
    j["split"] = r.split;
    j["kind"] = to_string(r.kind);
    j["seed"] = r.seed;
    if (r.kind == CompositeKind::circle) j["circle_radius"] = r.circle_radius;
    return j.dump();
}

namespace {

ManifestRecord parse_record(const std::string& line, std::size_t lineno) {
    try {
        const auto j = nlohmann::json::parse(line);
        ManifestRecord r;
        r.id = j.at("id").get<std::string>();
        r.path = j.at("path").get<std::string>();
        r.descriptor.n_particles = j.at("n_particles").get<int>();
        r.descriptor.aspect_ratio = j.at("aspect_ratio").get<double>();
        r.descriptor.volume_fraction = j.at("volume_fraction").get<double>();
        const int present = j.contains("c1111_gpa") + j.contains("c2222_gpa") + j.contains("c1212_gpa");
        if (present == 3) {
            r.stiffness = StiffnessLabel{j["c1111_gpa"].get<double>(), j["c2222_gpa"].get<double>(),
                                         j["c1212_gpa"].get<double>()};
        } else if (present != 0) {
            throw std::runtime_error("partial stiffness label");
        }
        r.split = j.value("split", std::string("unassigned"));
        r.kind = parse_kind(j.value("kind", std::string("fiber")));
        r.seed = j.value("seed", std::uint64_t{0});
        r.circle_radius = j.value("circle_radius", 0.0);
        return r;
    } catch (const std::exception& e) {
        throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
}

}  // namespace

DatasetManifest read_manifest(const std::filesystem::path& file) {
    std::ifstream is(file);
    if (!is) throw std::runtime_error("read_manifest: cannot open " + file.string());
    DatasetManifest m;
    m.base_dir = file.parent_path();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        m.records.push_back(parse_record(line, lineno));
    }
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        for (std::size_t k = 0; k < i; ++k) {
            if (m.records[k].id == m.records[i].id) throw std::runtime_error("read_manifest: duplicate id " + m.records[i].id);
        }
    }
    return m;
}

void write_manifest(const std::filesystem::path& file, const DatasetManifest& manifest) {
    std::ostringstream os;
    for (const auto& r : manifest.records) os << manifest_line(r) << '\n';
    std::ofstream out(file, std::ios::binary);
    if (!out) throw std::runtime_error("write_manifest: cannot open " + file.string());
    out << os.str();
    if (!out) throw std::runtime_error("write_manifest: write failed for " + file.string());
}

Rve regenerate_rve(const ManifestRecord& r, std::size_t max_attempts) {
    if (r.kind == CompositeKind::fiber) return rsa_place(r.descriptor, r.seed, max_attempts).rve;
    return rsa_place_circles(r.descriptor.volume_fraction, r.circle_radius, r.seed, max_attempts).rve;
}

GenerateReport generate_dataset(const GenerateOptions& o) {
    if (o.n == 0) throw std::invalid_argument("generate_dataset: n must be positive");
    std::filesystem::create_directories(o.out_dir / "images");

    std::vector<DescriptorPoint> descriptors;
    if (o.kind == CompositeKind::fiber) descriptors = sample_fiber_descriptors(o.n, o.seed);

    GenerateReport report;
    report.manifest.base_dir = o.out_dir;
    const std::string prefix = to_string(o.kind);
    for (std::size_t i = 0; i < o.n; ++i) {
        ManifestRecord rec;
        std::ostringstream id;
        id << std::setw(6) << std::setfill('0') << i;
        rec.id = prefix + "-" + id.str();
        rec.path = "images/" + id.str() + ".pgm";
        rec.kind = o.kind;
        rec.seed = derive_seed(o.seed, i);

        Placement placed;
        if (o.kind == CompositeKind::fiber) {
            rec.descriptor = descriptors[i];
            placed = rsa_place(rec.descriptor, rec.seed, o.max_attempts);
        } else {
            Rng draw(derive_seed(rec.seed, 1));
            const double vf = draw.uniform(kMinFraction, kMaxFraction);
            rec.circle_radius = o.circle_radius;
            placed = rsa_place_circles(vf, o.circle_radius, rec.seed, o.max_attempts);
            rec.descriptor = {static_cast<int>(placed.rve.inclusions.size()), 1.0, vf};
        }
        if (placed.reseeds > 0) {
            ++report.reseeded_records;
            report.total_reseeds += static_cast<std::size_t>(placed.reseeds);
        }
        write_pgm(o.out_dir / rec.path, rasterize(placed.rve, o.resolution));
        report.manifest.records.push_back(std::move(rec));
    }
    report.manifest_path = o.out_dir / "manifest.jsonl";
    write_manifest(report.manifest_path, report.manifest);
    return report;
}

}  // namespace mf::microgen
