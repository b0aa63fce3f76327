#pragma once

#include <span>
#include <string>
#include <vector>

namespace eloss {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Self-contained SVG line chart with axes, min/max tick labels and a legend.
/// Non-finite points are skipped. Output depends only on the arguments.
std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, std::span<const PlotSeries> series,
                          int width = 640, int height = 400);

}  // namespace eloss
