#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "microforge/microgen/geometry.hpp"
#include "microforge/microgen/raster.hpp"

namespace mf::microgen {

inline constexpr std::size_t kDefaultMaxAttempts = 100000;
inline constexpr double kDefaultCircleRadius = 0.04;

enum class CompositeKind { fiber, circle };

std::string to_string(CompositeKind kind);
CompositeKind parse_kind(const std::string& s);

/// Homogenized (C1111, C2222, C1212) in GPa.
using StiffnessLabel = std::array<double, 3>;

struct ManifestRecord {
    std::string id;
    std::string path;  // relative to the manifest directory
    DescriptorPoint descriptor;
    std::optional<StiffnessLabel> stiffness;
    std::string split = "unassigned";
    // Enough to regenerate the geometry at another resolution.
    CompositeKind kind = CompositeKind::fiber;
    std::uint64_t seed = 0;
    double circle_radius = 0.0;  // circle kind only
};

/// JSON Lines manifest. Paths inside records are relative to `base_dir`.
struct DatasetManifest {
    std::filesystem::path base_dir;
    std::vector<ManifestRecord> records;

    std::filesystem::path resolve(const ManifestRecord& r) const { return base_dir / r.path; }
    std::size_t labeled_count() const;
};

DatasetManifest read_manifest(const std::filesystem::path& file);
void write_manifest(const std::filesystem::path& file, const DatasetManifest& manifest);
/// One JSON object per record, keys in a fixed order.
std::string manifest_line(const ManifestRecord& r);

/// Rebuilds the inclusion geometry of a record from its seed.
Rve regenerate_rve(const ManifestRecord& r, std::size_t max_attempts = kDefaultMaxAttempts);

struct GenerateOptions {
    CompositeKind kind = CompositeKind::fiber;
    std::size_t n = 10;
    int resolution = 64;
    std::uint64_t seed = 0;
    std::filesystem::path out_dir;
    std::size_t max_attempts = kDefaultMaxAttempts;
    double circle_radius = kDefaultCircleRadius;
};

struct GenerateReport {
    DatasetManifest manifest;
    std::filesystem::path manifest_path;
    std::size_t reseeded_records = 0;
    std::size_t total_reseeds = 0;
};

/// Writes n PGM images under out_dir/images and out_dir/manifest.jsonl.
/// Record i uses derive_seed(seed, i), so output is independent of order.
GenerateReport generate_dataset(const GenerateOptions& options);

}  // namespace mf::microgen
