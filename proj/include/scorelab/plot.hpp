#pragma once

#include <string>
#include <vector>

namespace scorelab {

/// One labeled line; x and y must be the same nonzero length.
struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Self-contained SVG line chart: one polyline per series, axes with tick
/// labels, and a legend. No external resources. Non-finite points are
/// dropped; a series with no finite points is rejected.
std::string render_svg_plot(const std::vector<PlotSeries>& series,
                            const std::string& x_label,
                            const std::string& y_label,
                            const std::string& title);

void write_svg_plot(const std::vector<PlotSeries>& series,
                    const std::string& x_label, const std::string& y_label,
                    const std::string& title, const std::string& path);

}  // namespace scorelab
