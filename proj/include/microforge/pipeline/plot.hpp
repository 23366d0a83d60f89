#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace mf::pipeline {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    bool dashed = false;
};

struct Panel {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    /// Replaces the numeric x ticks when non-empty.
    std::vector<std::pair<double, std::string>> x_ticks;
    bool log_x = false;
};

/// Panels side by side, each with axes, grid, polylines with markers and a
/// legend. Deterministic output for identical input.
std::string render_svg(const std::vector<Panel>& panels, const std::string& title = {});
void write_svg(const std::filesystem::path& path, const std::vector<Panel>& panels, const std::string& title = {});

/// Roughly `count` round tick positions covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int count = 5);

std::string xml_escape(const std::string& s);

}  // namespace mf::pipeline
