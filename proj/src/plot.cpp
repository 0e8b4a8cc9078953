#include "scorelab/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "scorelab/dataio.hpp"
#include "scorelab/errors.hpp"

namespace scorelab {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 440.0;
constexpr double kLeft = 64.0;
constexpr double kRight = 170.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 52.0;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kPaletteSize = 8;

std::string escape_xml(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

struct Range {
  double lo = 0.0, hi = 1.0;
  double map(double v, double a, double b) const {
    return a + (v - lo) / (hi - lo) * (b - a);
  }
};

Range span(double lo, double hi) {
  if (lo > hi) std::swap(lo, hi);
  if (hi - lo < 1e-12) {
    lo -= 1.0;
    hi += 1.0;
  } else {
    double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  return {lo, hi};
}

}  // namespace

std::string render_svg_plot(const std::vector<PlotSeries>& series,
                            const std::string& x_label,
                            const std::string& y_label,
                            const std::string& title) {
  if (series.empty()) throw ConfigError("plot: no series");

  std::vector<PlotSeries> clean;
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  double ylo = xlo, yhi = -xlo;
  for (const PlotSeries& s : series) {
    if (s.x.size() != s.y.size()) {
      throw ShapeError("plot: series '" + s.label + "' has " +
                       std::to_string(s.x.size()) + " x values and " +
                       std::to_string(s.y.size()) + " y values");
    }
    PlotSeries kept;
    kept.label = s.label;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      kept.x.push_back(s.x[i]);
      kept.y.push_back(s.y[i]);
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
    if (kept.x.empty()) {
      throw DataError("plot: series '" + s.label + "' has no finite points");
    }
    clean.push_back(std::move(kept));
  }

  Range xr = span(xlo, xhi);
  Range yr = span(ylo, yhi);
  double x0 = kLeft, x1 = kWidth - kRight;
  double y0 = kHeight - kBottom, y1 = kTop;  // SVG y grows downward

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " "
      << kHeight << "\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"22\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"15\">" << escape_xml(title)
      << "</text>\n";

  svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1
      << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0
      << "\" y2=\"" << y1 << "\" stroke=\"black\"/>\n";

  constexpr int kTicks = 5;
  for (int i = 0; i <= kTicks; ++i) {
    double fx = xr.lo + (xr.hi - xr.lo) * i / kTicks;
    double px = xr.map(fx, x0, x1);
    svg << "<line x1=\"" << num(px) << "\" y1=\"" << y0 << "\" x2=\""
        << num(px) << "\" y2=\"" << y0 + 5 << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << num(px) << "\" y=\"" << y0 + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"11\">" << tick(fx) << "</text>\n";

    double fy = yr.lo + (yr.hi - yr.lo) * i / kTicks;
    double py = yr.map(fy, y0, y1);
    svg << "<line x1=\"" << x0 - 5 << "\" y1=\"" << num(py) << "\" x2=\""
        << x0 << "\" y2=\"" << num(py) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << x0 - 8 << "\" y=\"" << num(py + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
        << "font-size=\"11\">" << tick(fy) << "</text>\n";
  }

  svg << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 14
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"13\">" << escape_xml(x_label) << "</text>\n";
  svg << "<text x=\"18\" y=\"" << (y0 + y1) / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"13\" transform=\"rotate(-90 18 " << (y0 + y1) / 2
      << ")\">" << escape_xml(y_label) << "</text>\n";

  for (std::size_t s = 0; s < clean.size(); ++s) {
    const char* color = kPalette[s % kPaletteSize];
    svg << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < clean[s].x.size(); ++i) {
      if (i) svg << ' ';
      svg << num(xr.map(clean[s].x[i], x0, x1)) << ','
          << num(yr.map(clean[s].y[i], y0, y1));
    }
    svg << "\"/>\n";

    double ly = kTop + 18.0 * static_cast<double>(s);
    svg << "<line x1=\"" << x1 + 12 << "\" y1=\"" << num(ly) << "\" x2=\""
        << x1 + 34 << "\" y2=\"" << num(ly) << "\" stroke=\"" << color
        << "\" stroke-width=\"1.5\"/>\n";
    svg << "<text x=\"" << x1 + 40 << "\" y=\"" << num(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << escape_xml(clean[s].label) << "</text>\n";
  }

  svg << "</svg>\n";
  return svg.str();
}

void write_svg_plot(const std::vector<PlotSeries>& series,
                    const std::string& x_label, const std::string& y_label,
                    const std::string& title, const std::string& path) {
  write_text_file(path, render_svg_plot(series, x_label, y_label, title));
}

}  // namespace scorelab
