#pragma once

// Minimal standalone SVG charts: line plots, scatter plots, spike rasters and
// grey-level image grids.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "spikegan/common.hpp"
#include "spikegan/spike_train.hpp"

namespace spikegan::svg {

inline const char* palette(std::size_t i) {
    static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
    return colours[i % 7];
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

class Canvas {
public:
    Canvas(double width, double height) : w_(width), h_(height) {}

    void text(double x, double y, const std::string& s, double size = 12, const char* anchor = "middle") {
        body_ << "<text x='" << x << "' y='" << y << "' font-size='" << size << "' text-anchor='" << anchor
              << "' font-family='sans-serif'>" << escape(s) << "</text>\n";
    }
    void line(double x1, double y1, double x2, double y2, const char* colour = "#000", double width = 1) {
        body_ << "<line x1='" << x1 << "' y1='" << y1 << "' x2='" << x2 << "' y2='" << y2 << "' stroke='" << colour
              << "' stroke-width='" << width << "'/>\n";
    }
    void rect(double x, double y, double w, double h, const std::string& fill) {
        body_ << "<rect x='" << x << "' y='" << y << "' width='" << w << "' height='" << h << "' fill='" << fill
              << "'/>\n";
    }
    void circle(double x, double y, double r, const char* colour) {
        body_ << "<circle cx='" << x << "' cy='" << y << "' r='" << r << "' fill='" << colour
              << "' fill-opacity='0.6'/>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const char* colour) {
        body_ << "<polyline fill='none' stroke='" << colour << "' stroke-width='1.2' points='";
        for (const auto& [x, y] : pts) body_ << x << ',' << y << ' ';
        body_ << "'/>\n";
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw Error("cannot write plot '" + path.string() + "'");
        out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w_ << "' height='" << h_ << "' viewBox='0 0 "
            << w_ << ' ' << h_ << "'>\n<rect width='100%' height='100%' fill='white'/>\n"
            << body_.str() << "</svg>\n";
    }

private:
    double w_, h_;
    std::ostringstream body_;
};

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

namespace detail {

struct Frame {
    double left = 60, top = 30, width = 520, height = 300;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

    double px(double x) const { return left + (x - x0) / (x1 - x0) * width; }
    double py(double y) const { return top + height - (y - y0) / (y1 - y0) * height; }
};

inline void fit(Frame& f, const std::vector<double>& xs, const std::vector<double>& ys) {
    auto span = [](const std::vector<double>& v, double& lo, double& hi) {
        lo = std::numeric_limits<double>::infinity();
        hi = -lo;
        for (double a : v)
            if (std::isfinite(a)) lo = std::min(lo, a), hi = std::max(hi, a);
        if (!std::isfinite(lo)) lo = 0, hi = 1;
        if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    };
    span(xs, f.x0, f.x1);
    span(ys, f.y0, f.y1);
}

inline void axes(Canvas& c, const Frame& f, const std::string& title, const std::string& xlabel,
                 const std::string& ylabel) {
    c.line(f.left, f.top + f.height, f.left + f.width, f.top + f.height);
    c.line(f.left, f.top, f.left, f.top + f.height);
    c.text(f.left + f.width / 2, 18, title, 14);
    c.text(f.left + f.width / 2, f.top + f.height + 36, xlabel);
    c.text(14, f.top + f.height / 2, ylabel, 12, "start");
    for (int k = 0; k <= 4; ++k) {
        const double xv = f.x0 + (f.x1 - f.x0) * k / 4.0, yv = f.y0 + (f.y1 - f.y0) * k / 4.0;
        std::ostringstream xs, ys;
        xs.precision(3);
        ys.precision(3);
        xs << xv;
        ys << yv;
        c.text(f.px(xv), f.top + f.height + 16, xs.str(), 10);
        c.text(f.left - 6, f.py(yv) + 4, ys.str(), 10, "end");
    }
}

}  // namespace detail

inline void line_plot(const std::filesystem::path& path, const std::string& title, const std::vector<Series>& series,
                      const std::string& xlabel = "iteration", const std::string& ylabel = "") {
    Canvas c(700, 380);
    detail::Frame f;
    std::vector<double> xs, ys;
    for (const auto& s : series) xs.insert(xs.end(), s.x.begin(), s.x.end()), ys.insert(ys.end(), s.y.begin(), s.y.end());
    detail::fit(f, xs, ys);
    detail::axes(c, f, title, xlabel, ylabel);
    for (std::size_t k = 0; k < series.size(); ++k) {
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < series[k].x.size(); ++i)
            if (std::isfinite(series[k].y[i])) pts.emplace_back(f.px(series[k].x[i]), f.py(series[k].y[i]));
        c.polyline(pts, palette(k));
        c.text(f.left + f.width + 8, f.top + 14 * (k + 1), series[k].name, 11, "start");
        c.line(f.left + f.width + 2, f.top + 14 * (k + 1) - 4, f.left + f.width + 7, f.top + 14 * (k + 1) - 4,
               palette(k), 3);
    }
    c.save(path);
}

inline void scatter_plot(const std::filesystem::path& path, const std::string& title, const std::vector<Series>& sets,
                         const std::string& xlabel = "PC1", const std::string& ylabel = "PC2") {
    Canvas c(700, 380);
    detail::Frame f;
    std::vector<double> xs, ys;
    for (const auto& s : sets) xs.insert(xs.end(), s.x.begin(), s.x.end()), ys.insert(ys.end(), s.y.begin(), s.y.end());
    detail::fit(f, xs, ys);
    detail::axes(c, f, title, xlabel, ylabel);
    for (std::size_t k = 0; k < sets.size(); ++k) {
        for (std::size_t i = 0; i < sets[k].x.size(); ++i) c.circle(f.px(sets[k].x[i]), f.py(sets[k].y[i]), 2.5, palette(k));
        c.text(f.left + f.width + 8, f.top + 14 * (k + 1), sets[k].name, 11, "start");
    }
    c.save(path);
}

/// One row per train (first neuron of each), spikes drawn as ticks.
inline void raster_plot(const std::filesystem::path& path, const std::string& title,
                        const std::vector<SpikeTrain>& rows, const std::vector<std::string>& labels = {}) {
    const double cell = 8, left = 90, top = 30;
    const std::size_t steps = rows.empty() ? 1 : rows[0].steps();
    Canvas c(left + cell * static_cast<double>(steps) + 20, top + cell * 1.6 * static_cast<double>(rows.size()) + 20);
    c.text(left + cell * static_cast<double>(steps) / 2, 18, title, 14);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const double y = top + cell * 1.6 * static_cast<double>(r);
        if (r < labels.size()) c.text(left - 6, y + cell - 1, labels[r], 10, "end");
        c.line(left, y + cell, left + cell * static_cast<double>(steps), y + cell, "#ccc", 0.5);
        for (std::size_t t = 0; t < rows[r].steps(); ++t)
            if (rows[r](0, t)) c.rect(left + cell * static_cast<double>(t) + 1, y, cell - 2, cell, "#000");
    }
    c.save(path);
}

/// Square grey-level images (values in [0,1], side x side, row-major) on a grid.
inline void image_grid(const std::filesystem::path& path, const std::string& title,
                       const std::vector<std::vector<double>>& images, std::size_t side, std::size_t columns) {
    const double px = 5, pad = 6, top = 30;
    columns = std::max<std::size_t>(columns, 1);
    const std::size_t rows = (images.size() + columns - 1) / columns;
    const double tile = px * static_cast<double>(side) + pad;
    Canvas c(tile * static_cast<double>(columns) + pad, top + tile * static_cast<double>(rows) + pad);
    c.text(tile * static_cast<double>(columns) / 2, 18, title, 14);
    for (std::size_t k = 0; k < images.size(); ++k) {
        const double ox = pad + tile * static_cast<double>(k % columns), oy = top + tile * static_cast<double>(k / columns);
        for (std::size_t i = 0; i < side * side && i < images[k].size(); ++i) {
            const int g = 255 - static_cast<int>(std::lround(255.0 * std::clamp(images[k][i], 0.0, 1.0)));
            std::ostringstream fill;
            fill << "rgb(" << g << ',' << g << ',' << g << ')';
            c.rect(ox + px * static_cast<double>(i % side), oy + px * static_cast<double>(i / side), px, px, fill.str());
        }
    }
    c.save(path);
}

}  // namespace spikegan::svg
