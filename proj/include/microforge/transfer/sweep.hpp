#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "microforge/transfer/finetune.hpp"

namespace mf::transfer {

/// Experiment grid over one labeled manifest. Empty sections are skipped.
struct SweepSpec {
    std::filesystem::path manifest;
    std::uint64_t seed = 0;

    /// Linear probe and full fine-tune per checkpoint.
    std::vector<std::filesystem::path> mask_ratio_checkpoints;

    /// Linear probe plus partial(k) for each k on one checkpoint.
    std::filesystem::path blocks_checkpoint;
    std::vector<int> blocks;

    /// The first n records of a seeded shuffle, each split 80/20 on its own.
    std::filesystem::path data_checkpoint;
    std::vector<std::size_t> data_sizes;
    std::string data_mode = "full";

    /// Hyperparameters; the mode fields are set per cell.
    ProbeConfig probe = ProbeConfig::linear();
    ProbeConfig finetune = ProbeConfig::full();
};

/// Relative paths resolve against `base_dir`. Unknown keys are rejected.
SweepSpec sweep_spec_from_json(const nlohmann::ordered_json& j, const std::filesystem::path& base_dir = {});
nlohmann::ordered_json to_json(const SweepSpec& s);

struct SweepFailure {
    std::string cell;
    std::string reason;
};

struct SweepResult {
    std::vector<ExperimentReport> reports;
    std::vector<SweepFailure> failures;
};

using SweepLogger = std::function<void(const std::string& cell, const ExperimentReport* report)>;

/// Runs every cell in a fixed order; a failing cell is recorded and the
/// sweep continues.
SweepResult run_sweep(const SweepSpec& spec, const SweepLogger& log = {});

/// Cell configuration for a mode within a sweep, taking hyperparameters
/// from `spec`.
ProbeConfig cell_config(const SweepSpec& spec, const ProbeConfig& mode);

inline constexpr const char* kReportHeader =
    "experiment,mask_ratio,mode,k,n_data,r2_c1111,r2_c2222,r2_c1212,r2_avg,seed";

/// One row per report. A non-empty config hash adds a trailing config_hash column.
void write_reports_csv(const std::filesystem::path& path, const std::vector<ExperimentReport>& reports,
                       const std::string& config_hash = {});
std::string report_row(const ExperimentReport& r);
void write_failures_csv(const std::filesystem::path& path, const std::vector<SweepFailure>& failures);

}  // namespace mf::transfer
