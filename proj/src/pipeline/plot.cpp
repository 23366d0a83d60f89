#include "microforge/pipeline/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mf::pipeline {

namespace {

constexpr double kPanelW = 420;
constexpr double kPanelH = 320;
constexpr double kLeft = 62;
constexpr double kRight = 16;
constexpr double kTop = 34;
constexpr double kBottom = 48;
constexpr double kTitleH = 28;

constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", std::abs(v) < 1e-12 ? 0.0 : v);
    return buf;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void settle() {
        if (lo > hi) lo = 0, hi = 1;
        if (hi - lo < 1e-12) {
            const double pad = std::max(std::abs(lo) * 0.05, 0.05);
            lo -= pad, hi += pad;
        }
    }
};

void render_panel(std::ostringstream& o, const Panel& p, double ox, double oy) {
    const double pw = kPanelW - kLeft - kRight;
    const double ph = kPanelH - kTop - kBottom;
    auto fx = [&](double x) { return p.log_x ? std::log10(x) : x; };

    Range rx, ry;
    for (const auto& s : p.series) {
        for (double x : s.x)
            if (!p.log_x || x > 0) rx.add(fx(x));
        for (double y : s.y) ry.add(y);
    }
    for (const auto& [x, _] : p.x_ticks) rx.add(fx(x));
    rx.settle();
    ry.settle();
    const auto yt = nice_ticks(ry.lo, ry.hi);
    ry.lo = std::min(ry.lo, yt.front());
    ry.hi = std::max(ry.hi, yt.back());
    const double xpad = (rx.hi - rx.lo) * 0.04;
    rx.lo -= xpad, rx.hi += xpad;

    auto px = [&](double x) { return ox + kLeft + (fx(x) - rx.lo) / (rx.hi - rx.lo) * pw; };
    auto py = [&](double y) { return oy + kTop + (ry.hi - y) / (ry.hi - ry.lo) * ph; };

    o << "<g>\n";
    o << "<text x=\"" << num(ox + kLeft + pw / 2) << "\" y=\"" << num(oy + 20)
      << "\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(p.title) << "</text>\n";
    o << "<rect x=\"" << num(ox + kLeft) << "\" y=\"" << num(oy + kTop) << "\" width=\"" << num(pw) << "\" height=\""
      << num(ph) << "\" fill=\"none\" stroke=\"#333\"/>\n";

    for (double t : yt) {
        if (t < ry.lo - 1e-12 || t > ry.hi + 1e-12) continue;
        const double y = py(t);
        o << "<line x1=\"" << num(ox + kLeft) << "\" y1=\"" << num(y) << "\" x2=\"" << num(ox + kLeft + pw)
          << "\" y2=\"" << num(y) << "\" stroke=\"#ddd\"/>\n";
        o << "<text x=\"" << num(ox + kLeft - 6) << "\" y=\"" << num(y + 4)
          << "\" text-anchor=\"end\" font-size=\"11\">" << tick_label(t) << "</text>\n";
    }

    std::vector<std::pair<double, std::string>> xt = p.x_ticks;
    if (xt.empty()) {
        if (p.log_x) {
            for (int e = static_cast<int>(std::floor(rx.lo)); e <= static_cast<int>(std::ceil(rx.hi)); ++e)
                if (e >= rx.lo && e <= rx.hi) xt.emplace_back(std::pow(10.0, e), tick_label(std::pow(10.0, e)));
            for (const auto& s : p.series)
                for (double x : s.x)
                    if (std::none_of(xt.begin(), xt.end(), [&](const auto& t) { return t.first == x; }))
                        xt.emplace_back(x, tick_label(x));
        } else {
            for (double t : nice_ticks(rx.lo, rx.hi))
                if (t >= rx.lo && t <= rx.hi) xt.emplace_back(t, tick_label(t));
        }
    }
    for (const auto& [t, label] : xt) {
        const double x = px(t);
        o << "<line x1=\"" << num(x) << "\" y1=\"" << num(oy + kTop + ph) << "\" x2=\"" << num(x) << "\" y2=\""
          << num(oy + kTop + ph + 4) << "\" stroke=\"#333\"/>\n";
        o << "<text x=\"" << num(x) << "\" y=\"" << num(oy + kTop + ph + 16)
          << "\" text-anchor=\"middle\" font-size=\"11\">" << xml_escape(label) << "</text>\n";
    }
    o << "<text x=\"" << num(ox + kLeft + pw / 2) << "\" y=\"" << num(oy + kPanelH - 10)
      << "\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(p.x_label) << "</text>\n";
    o << "<text transform=\"translate(" << num(ox + 14) << "," << num(oy + kTop + ph / 2)
      << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(p.y_label) << "</text>\n";

    for (std::size_t si = 0; si < p.series.size(); ++si) {
        const auto& s = p.series[si];
        if (s.x.size() != s.y.size()) throw std::invalid_argument("series '" + s.name + "': x and y differ in length");
        const char* color = kColors[si % std::size(kColors)];
        std::string pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i]) || (p.log_x && s.x[i] <= 0)) continue;
            pts += num(px(s.x[i])) + "," + num(py(s.y[i])) + " ";
        }
        if (!pts.empty()) pts.pop_back();
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\""
          << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"" << pts << "\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i]) || (p.log_x && s.x[i] <= 0)) continue;
            o << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i])) << "\" r=\"3\" fill=\"" << color
              << "\"/>\n";
        }
        const double ly = oy + kTop + 14 + 16 * static_cast<double>(si);
        const double lx = ox + kLeft + pw - 110;
        o << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << num(lx + 18) << "\" y2=\""
          << num(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\""
          << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << "/>\n";
        o << "<text x=\"" << num(lx + 22) << "\" y=\"" << num(ly) << "\" font-size=\"11\">" << xml_escape(s.name)
          << "</text>\n";
    }
    o << "</g>\n";
}

}  // namespace

std::vector<double> nice_ticks(double lo, double hi, int count) {
    if (!(hi > lo)) return {lo};
    const double raw = (hi - lo) / std::max(1, count);
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
        step = m * mag;
        if (step >= raw) break;
    }
    std::vector<double> ticks;
    for (double t = std::floor(lo / step) * step; t <= hi + step * 1e-9; t += step)
        ticks.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
    if (ticks.back() < hi) ticks.push_back(ticks.back() + step);
    return ticks;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string render_svg(const std::vector<Panel>& panels, const std::string& title) {
    const double top = title.empty() ? 0 : kTitleH;
    const double w = kPanelW * static_cast<double>(std::max<std::size_t>(1, panels.size()));
    const double h = kPanelH + top;
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\"" << num(h)
      << "\" viewBox=\"0 0 " << num(w) << " " << num(h) << "\" font-family=\"sans-serif\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title.empty())
        o << "<text x=\"" << num(w / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\" font-weight=\"bold\">"
          << xml_escape(title) << "</text>\n";
    for (std::size_t i = 0; i < panels.size(); ++i) render_panel(o, panels[i], kPanelW * static_cast<double>(i), top);
    o << "</svg>\n";
    return o.str();
}

void write_svg(const std::filesystem::path& path, const std::vector<Panel>& panels, const std::string& title) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << render_svg(panels, title);
}

}  // namespace mf::pipeline
