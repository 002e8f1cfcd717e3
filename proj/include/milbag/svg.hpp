#pragma once

#include <span>
#include <string>
#include <vector>

namespace milbag {

struct ChartSeries {
    std::string label;
    std::vector<double> values;  // y per x position
};

/// Self-contained SVG line chart: one polyline per series over shared x
/// values, boxed axes with min/max tick labels and a legend. No styling
/// dependencies, safe to open in any browser.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           std::span<const double> xs, std::span<const ChartSeries> series);

}  // namespace milbag
