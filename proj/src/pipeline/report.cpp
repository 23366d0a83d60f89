#include "microforge/pipeline/report.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace mf::pipeline {

namespace {

using transfer::ExperimentReport;

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::vector<const ExperimentReport*> select(const std::vector<ExperimentReport>& reports,
                                            const std::string& experiment) {
    std::vector<const ExperimentReport*> out;
    for (const auto& r : reports)
        if (r.experiment == experiment) out.push_back(&r);
    return out;
}

// Average panel and component panel over (x, report) points sorted by x.
std::vector<Panel> r2_panels(std::vector<std::pair<double, const ExperimentReport*>> points, const std::string& what,
                             const std::string& x_label, std::vector<std::pair<double, std::string>> ticks,
                             bool log_x) {
    std::stable_sort(points.begin(), points.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    Panel avg{"(a) average validation R2, " + what, x_label, "R2", {}, ticks, log_x};
    Panel comp{"(b) validation R2 per component, " + what, x_label, "R2", {}, std::move(ticks), log_x};
    Series a{"average", {}, {}};
    std::array<Series, 3> c;
    for (int i = 0; i < 3; ++i) c[i].name = transfer::kComponentNames[i];
    for (const auto& [x, r] : points) {
        a.x.push_back(x);
        a.y.push_back(r->r2.average);
        for (int i = 0; i < 3; ++i) {
            c[i].x.push_back(x);
            c[i].y.push_back(r->r2.component[i]);
        }
    }
    avg.series.push_back(std::move(a));
    for (auto& s : c) comp.series.push_back(std::move(s));
    return {std::move(avg), std::move(comp)};
}

void write_rows(const std::filesystem::path& path, const std::vector<const ExperimentReport*>& rows,
                const std::string& hash) {
    std::vector<ExperimentReport> copy;
    for (const auto* r : rows) copy.push_back(*r);
    transfer::write_reports_csv(path, copy, hash);
}

}  // namespace

std::vector<ExperimentReport> read_reports_csv(const std::filesystem::path& path, std::string* config_hash) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
    const std::string header = transfer::kReportHeader;
    const bool hashed = line == header + ",config_hash";
    if (line != header && !hashed) throw std::runtime_error(path.string() + ": unexpected header");
    std::vector<ExperimentReport> out;
    for (std::size_t row = 2; std::getline(in, line); ++row) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != (hashed ? 11u : 10u))
            throw std::runtime_error(path.string() + ":" + std::to_string(row) + ": wrong field count");
        ExperimentReport r;
        try {
            r.experiment = f[0];
            r.mask_ratio = std::stod(f[1]);
            r.mode = f[2];
            r.k = std::stoi(f[3]);
            r.n_data = std::stoull(f[4]);
            for (int i = 0; i < 3; ++i) r.r2.component[i] = std::stod(f[5 + i]);
            r.r2.average = std::stod(f[8]);
            r.seed = std::stoull(f[9]);
        } catch (const std::logic_error&) {
            throw std::runtime_error(path.string() + ":" + std::to_string(row) + ": malformed number");
        }
        if (hashed && config_hash) *config_hash = f[10];
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<Panel> mask_ratio_panels(const std::vector<ExperimentReport>& reports, const std::string& mode) {
    std::vector<std::pair<double, const ExperimentReport*>> pts;
    for (const auto* r : select(reports, "mask_ratio"))
        if (r->mode == mode) pts.emplace_back(r->mask_ratio, r);
    if (pts.empty()) return {};
    return r2_panels(std::move(pts), mode, "masking ratio", {}, false);
}

std::vector<Panel> blocks_panels(const std::vector<ExperimentReport>& reports) {
    std::vector<std::pair<double, const ExperimentReport*>> pts;
    std::vector<std::pair<double, std::string>> ticks;
    for (const auto* r : select(reports, "blocks")) {
        const double x = r->mode == "linear" ? -1.0 : r->k;
        pts.emplace_back(x, r);
        ticks.emplace_back(x, r->mode == "linear" ? "lin" : std::to_string(r->k));
    }
    if (pts.empty()) return {};
    std::sort(ticks.begin(), ticks.end());
    return r2_panels(std::move(pts), "partial(k)", "fine-tuned encoder blocks k", std::move(ticks), false);
}

std::vector<Panel> data_size_panels(const std::vector<ExperimentReport>& reports) {
    std::vector<std::pair<double, const ExperimentReport*>> pts;
    for (const auto* r : select(reports, "data_size")) pts.emplace_back(static_cast<double>(r->n_data), r);
    if (pts.empty()) return {};
    const std::string mode = pts.front().second->mode;
    return r2_panels(std::move(pts), mode, "labeled instances", {}, true);
}

Panel curve_panel(const std::vector<std::pair<double, std::vector<mmae::EpochStat>>>& curves) {
    Panel p{"pre-training masked MSE", "epoch", "masked MSE", {}, {}, false};
    for (const auto& [ratio, curve] : curves) {
        Series s;
        char name[32];
        std::snprintf(name, sizeof name, "mask %.2f", ratio);
        s.name = name;
        for (const auto& e : curve) {
            s.x.push_back(e.epoch);
            s.y.push_back(e.masked_mse);
        }
        p.series.push_back(std::move(s));
    }
    return p;
}

FigureOutput emit_figures(const std::vector<ExperimentReport>& reports, const std::filesystem::path& dir,
                          const std::string& config_hash) {
    FigureOutput out;
    if (reports.empty()) {
        out.warnings.push_back("no reports; no figures written");
        return out;
    }
    std::filesystem::create_directories(dir);
    auto emit = [&](const std::string& stem, const std::vector<Panel>& panels, const std::string& title,
                    const std::vector<const ExperimentReport*>& rows) {
        if (panels.empty()) return;
        write_svg(dir / (stem + ".svg"), panels, title);
        write_rows(dir / (stem + ".csv"), rows, config_hash);
        out.written.push_back(dir / (stem + ".svg"));
        out.written.push_back(dir / (stem + ".csv"));
    };
    for (const std::string mode : {"linear", "full"}) {
        std::vector<const ExperimentReport*> rows;
        for (const auto* r : select(reports, "mask_ratio"))
            if (r->mode == mode) rows.push_back(r);
        emit("mask_ratio_" + mode, mask_ratio_panels(reports, mode), "Validation R2 versus masking ratio (" + mode + ")",
             rows);
    }
    emit("blocks", blocks_panels(reports), "Validation R2 versus fine-tuned blocks", select(reports, "blocks"));
    emit("data_size", data_size_panels(reports), "Validation R2 versus labeled instances",
         select(reports, "data_size"));
    if (out.written.empty()) out.warnings.push_back("no sweep rows to plot");
    return out;
}

}  // namespace mf::pipeline
