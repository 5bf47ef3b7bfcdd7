#pragma once

// Minimal static SVG line charts for quick looks at scenario CSVs. All
// acceptance checking reads the CSVs; these files are presentation only.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qpiston/errors.hpp"

namespace qpiston {

struct ChartSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

inline void write_line_chart(const std::filesystem::path& path, const std::string& title,
                             const std::vector<ChartSeries>& series) {
    constexpr int width = 720, height = 420, margin = 56;
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b"};

    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series) {
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]))
                continue;
            if (first) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                first = false;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (xmax == xmin)
        xmax = xmin + 1;
    if (ymax == ymin)
        ymax = ymin + 1;

    auto px = [&](double x) {
        return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin);
    };
    auto py = [&](double y) {
        return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin);
    };

    std::ofstream out(path);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "' viewBox='0 0 " << width << ' ' << height << "'>\n"
        << "<rect width='100%' height='100%' fill='white'/>\n"
        << "<text x='" << width / 2 << "' y='24' text-anchor='middle' font-size='15'>" << title
        << "</text>\n"
        << "<line x1='" << margin << "' y1='" << height - margin << "' x2='" << width - margin
        << "' y2='" << height - margin << "' stroke='black'/>\n"
        << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin << "' y2='"
        << height - margin << "' stroke='black'/>\n";
    out << "<text x='" << margin << "' y='" << height - margin + 18
        << "' font-size='11'>" << xmin << "</text>\n"
        << "<text x='" << width - margin << "' y='" << height - margin + 18
        << "' text-anchor='end' font-size='11'>" << xmax << "</text>\n"
        << "<text x='" << margin - 6 << "' y='" << height - margin
        << "' text-anchor='end' font-size='11'>" << ymin << "</text>\n"
        << "<text x='" << margin - 6 << "' y='" << margin + 4
        << "' text-anchor='end' font-size='11'>" << ymax << "</text>\n";
    for (size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = palette[k % 6];
        out << "<polyline fill='none' stroke='" << color << "' stroke-width='1.4' points='";
        for (size_t i = 0; i < s.x.size(); ++i)
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
                out << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        out << "'/>\n";
        out << "<text x='" << width - margin + 4 << "' y='" << margin + 16 * (k + 1)
            << "' font-size='11' fill='" << color << "' text-anchor='start'>" << s.label
            << "</text>\n";
    }
    out << "</svg>\n";
}

} // namespace qpiston
