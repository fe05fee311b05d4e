#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace camu {

struct PlotSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct LineChart {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<PlotSeries> series;
};

/// Standalone SVG document; throws std::invalid_argument on an empty chart.
std::string render_svg(const LineChart& chart);

/// Renders first, then writes, so a failed render leaves no file behind.
void write_svg(const std::filesystem::path& path, const LineChart& chart);

}  // namespace camu
