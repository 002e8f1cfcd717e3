#include "milbag/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "milbag/errors.hpp"

namespace milbag {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 64.0;
constexpr double kRight = 24.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 48.0;

const char* kPalette[] = {"#1f6feb", "#d73a49", "#2da44e", "#bf8700", "#8250df", "#57606a"};

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           std::span<const double> xs, std::span<const ChartSeries> series) {
    if (xs.empty() || series.empty()) throw DomainError("line_chart_svg: nothing to plot");
    for (const ChartSeries& s : series) {
        if (s.values.size() != xs.size()) {
            throw DimError("line_chart_svg: series length disagrees with x values");
        }
    }

    double x_min = xs.front(), x_max = xs.front();
    for (double x : xs) {
        x_min = std::min(x_min, x);
        x_max = std::max(x_max, x);
    }
    double y_min = series.front().values.front(), y_max = y_min;
    for (const ChartSeries& s : series) {
        for (double y : s.values) {
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    }
    if (x_max == x_min) x_max = x_min + 1.0;
    if (y_max == y_min) y_max = y_min + 1.0;

    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (x - x_min) / (x_max - x_min) * plot_w; };
    auto py = [&](double y) { return kTop + plot_h - (y - y_min) / (y_max - y_min) * plot_h; };

    std::string out = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" "
        "font-family=\"sans-serif\" font-size=\"12\">\n",
        kWidth, kHeight);
    out += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
                       kWidth / 2.0, title);
    out += fmt::format(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
        kLeft, kTop, plot_w, plot_h);

    out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", kWidth / 2.0,
                       kHeight - 10.0, x_label);
    out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.3g}</text>\n", kLeft,
                       kHeight - kBottom + 16.0, x_min);
    out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.3g}</text>\n",
                       kLeft + plot_w, kHeight - kBottom + 16.0, x_max);
    out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n", kLeft - 6.0,
                       kTop + plot_h + 4.0, y_min);
    out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n", kLeft - 6.0,
                       kTop + 4.0, y_max);

    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % std::size(kPalette)];
        std::string points;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            points += fmt::format("{:.2f},{:.2f} ", px(xs[i]), py(series[s].values[i]));
        }
        out += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" "
                           "points=\"{}\"/>\n",
                           color, points);
        const double ly = kTop + 14.0 + 16.0 * static_cast<double>(s);
        out += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" "
                           "stroke-width=\"3\"/>\n",
                           kLeft + plot_w - 110.0, ly - 4.0, kLeft + plot_w - 90.0, ly - 4.0,
                           color);
        out += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", kLeft + plot_w - 84.0, ly,
                           series[s].label);
    }
    out += "</svg>\n";
    return out;
}

}  // namespace milbag
