#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "microforge/homogenize/solver.hpp"
#include "microforge/microgen/dataset.hpp"

namespace mf::homog {

inline constexpr int kDefaultLabelResolution = 256;

struct LabelOptions {
    /// Solve grid. 0 solves on the stored image; any other value re-rasterizes
    /// the record's geometry from its seed at this resolution.
    int resolution = kDefaultLabelResolution;
    SolverConfig solver;
    Material matrix = kMatrixMaterial;
    Material inclusion = kInclusionMaterial;
    unsigned threads = 1;
};

struct LabelFailure {
    std::string id;
    std::string reason;
};

struct LabelReport {
    microgen::DatasetManifest manifest;
    std::vector<LabelFailure> failures;
};

/// Phase map a record is solved on under `opt`.
PhaseMap label_phase_map(const microgen::DatasetManifest& m, const microgen::ManifestRecord& r,
                         const LabelOptions& opt);

microgen::StiffnessLabel label_record(const microgen::DatasetManifest& m, const microgen::ManifestRecord& r,
                                      const LabelOptions& opt);

/// Labels every record. A failing record keeps its previous label state and is
/// listed in the report; the remaining records are still solved. Results do
/// not depend on the thread count.
LabelReport label_dataset(const microgen::DatasetManifest& manifest, const LabelOptions& opt);

/// Sidecar `<manifest>.meta.json` stating the constitutive assumptions the
/// labels were produced under.
std::filesystem::path label_metadata_path(const std::filesystem::path& manifest_file);
void write_label_metadata(const std::filesystem::path& manifest_file, const LabelOptions& opt);

}  // namespace mf::homog
