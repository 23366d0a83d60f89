#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "microforge/mmae/train.hpp"
#include "microforge/pipeline/plot.hpp"
#include "microforge/transfer/sweep.hpp"

namespace mf::pipeline {

/// Reads a file written by transfer::write_reports_csv; a trailing
/// config_hash column is accepted and returned through `config_hash`.
std::vector<transfer::ExperimentReport> read_reports_csv(const std::filesystem::path& path,
                                                        std::string* config_hash = nullptr);

/// Two panels: average R² and per-component R² against the swept variable.
/// Returns an empty vector when no report belongs to the figure.
std::vector<Panel> mask_ratio_panels(const std::vector<transfer::ExperimentReport>& reports, const std::string& mode);
std::vector<Panel> blocks_panels(const std::vector<transfer::ExperimentReport>& reports);
std::vector<Panel> data_size_panels(const std::vector<transfer::ExperimentReport>& reports);
Panel curve_panel(const std::vector<std::pair<double, std::vector<mmae::EpochStat>>>& curves);

struct FigureOutput {
    std::vector<std::filesystem::path> written;
    std::vector<std::string> warnings;
};

/// One SVG per sweep present in `reports`, each with the rows it plots in a
/// CSV of the same stem.
FigureOutput emit_figures(const std::vector<transfer::ExperimentReport>& reports, const std::filesystem::path& dir,
                          const std::string& config_hash = {});

}  // namespace mf::pipeline
