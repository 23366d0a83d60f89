#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "microforge/pipeline/config.hpp"
#include "microforge/transfer/sweep.hpp"

namespace mf::pipeline {

/// <output_root>/<config hash>/ with datasets/, checkpoints/, reports/,
/// figures/, config.json, run.log, summary.json and per-stage markers under
/// .stages/.
struct Workspace {
    std::filesystem::path root;

    static Workspace for_config(const RunConfig& c);

    std::filesystem::path datasets() const { return root / "datasets"; }
    std::filesystem::path checkpoints() const { return root / "checkpoints"; }
    std::filesystem::path reports() const { return root / "reports"; }
    std::filesystem::path figures() const { return root / "figures"; }
    std::filesystem::path marker(const std::string& stage) const { return root / ".stages" / (stage + ".done"); }

    std::filesystem::path pretrain_manifest() const { return datasets() / "pretrain" / "manifest.jsonl"; }
    std::filesystem::path labeled_manifest() const { return datasets() / "labeled" / "manifest.jsonl"; }
    std::filesystem::path circle_manifest() const { return datasets() / "circle" / "manifest.jsonl"; }
    std::filesystem::path checkpoint(double mask_ratio) const;
    std::filesystem::path transfer_csv() const { return reports() / "transfer.csv"; }
};

/// Stream indices under the global seed, one per stage.
namespace streams {
inline constexpr std::uint64_t kPretrainData = 1;
inline constexpr std::uint64_t kLabeledData = 2;
inline constexpr std::uint64_t kCircleData = 3;
inline constexpr std::uint64_t kPretrain = 4;
inline constexpr std::uint64_t kTransfer = 5;
inline constexpr std::uint64_t kSaliency = 6;
inline constexpr std::uint64_t kReconstruct = 7;
}  // namespace streams

enum class StageStatus { done, cached, skipped, failed };
std::string to_string(StageStatus s);

struct StageRecord {
    std::string name;
    StageStatus status = StageStatus::done;
    double seconds = 0.0;
    std::uint64_t seed = 0;
    std::string message;
};

struct RunOptions {
    bool force = false;  // ignore completion markers
    std::function<void(const std::string&)> log;  // also written to run.log
};

struct RunResult {
    Workspace workspace;
    std::string config_hash;
    std::vector<StageRecord> stages;
    std::vector<transfer::ExperimentReport> reports;
    std::vector<transfer::SweepFailure> failures;

    bool ok() const;
};

/// gen, label, pretrain (one checkpoint per mask ratio), transfer, saliency
/// and figures. Completed stages are skipped on a rerun unless forced; once a
/// stage executes, every later stage executes too. A failed stage halts its
/// dependents and the remaining stages still run.
RunResult run_pipeline(const RunConfig& config, const RunOptions& options = {});

}  // namespace mf::pipeline
