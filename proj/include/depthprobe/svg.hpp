#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "depthprobe/numerics.hpp"

// Dependency-free SVG figures. Output is deliberately regular so tests can
// parse cells and polyline points back out of the markup.

namespace depthprobe {

inline constexpr const char* kUndefinedCellFill = "rgb(200,200,200)";

namespace detail {

struct Rgb {
  int r, g, b;
};

// 3-stop linear gradient (dark violet -> teal -> yellow).
inline Rgb gradient_color(double u) {
  static constexpr Rgb stops[3] = {{68, 1, 84}, {33, 145, 140}, {253, 231, 37}};
  u = std::min(1.0, std::max(0.0, u));
  const Rgb lo = u < 0.5 ? stops[0] : stops[1];
  const Rgb hi = u < 0.5 ? stops[1] : stops[2];
  const double f = u < 0.5 ? u * 2.0 : (u - 0.5) * 2.0;
  return {static_cast<int>(std::lround(lo.r + f * (hi.r - lo.r))),
          static_cast<int>(std::lround(lo.g + f * (hi.g - lo.g))),
          static_cast<int>(std::lround(lo.b + f * (hi.b - lo.b)))};
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace detail

// Heatmap of a square matrix; NaN entries are "undefined" and render neutral
// gray. Color is a linear scale from the defined minimum to maximum.
inline std::string emit_heatmap(const Mat<double>& values,
                                const std::string& x_label = "downstream layer",
                                const std::string& y_label = "source layer",
                                const std::string& title = "") {
  double lo = 0.0;
  double hi = 0.0;
  bool any = false;
  for (int i = 0; i < values.rows(); ++i)
    for (int j = 0; j < values.cols(); ++j) {
      const double v = values.at(i, j);
      if (std::isnan(v)) continue;
      if (!any) {
        lo = hi = v;
        any = true;
      } else {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  if (!any) throw ValueError("emit_heatmap: all entries undefined");

  const int cell = 28;
  const int margin = 60;
  const int width = margin * 2 + values.cols() * cell;
  const int height = margin * 2 + values.rows() * cell;
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) +
         " " + std::to_string(height) + "\">\n";
  if (!title.empty())
    svg += "<text x=\"" + std::to_string(width / 2) +
           "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
  for (int i = 0; i < values.rows(); ++i) {
    for (int j = 0; j < values.cols(); ++j) {
      const double v = values.at(i, j);
      std::string fill;
      if (std::isnan(v)) {
        fill = kUndefinedCellFill;
      } else {
        const double u = hi > lo ? (v - lo) / (hi - lo) : 0.0;
        const auto c = detail::gradient_color(u);
        fill = "rgb(" + std::to_string(c.r) + "," + std::to_string(c.g) + "," +
               std::to_string(c.b) + ")";
      }
      svg += "<rect class=\"cell\" x=\"" + std::to_string(margin + j * cell) + "\" y=\"" +
             std::to_string(margin + i * cell) + "\" width=\"" + std::to_string(cell) +
             "\" height=\"" + std::to_string(cell) + "\" fill=\"" + fill +
             "\" stroke=\"white\"/>\n";
    }
  }
  svg += "<text x=\"" + std::to_string(width / 2) + "\" y=\"" + std::to_string(height - 16) +
         "\" text-anchor=\"middle\" font-size=\"12\">" + x_label + "</text>\n";
  svg += "<text x=\"18\" y=\"" + std::to_string(height / 2) +
         "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 18 " +
         std::to_string(height / 2) + ")\">" + y_label + "</text>\n";
  svg += "</svg>\n";
  return svg;
}

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (x in [0,1], y)
};

// Line chart over a fixed [0, 1] x-domain with one polyline per series and a
// simple legend.
inline std::string emit_lines(const std::vector<Series>& series,
                              const std::string& x_label = "relative depth",
                              const std::string& y_label = "value",
                              const std::string& title = "") {
  if (series.empty()) throw ValueError("emit_lines: no series");
  for (const Series& s : series)
    if (s.points.empty()) throw ValueError("emit_lines: series '" + s.name + "' is empty");

  double y_lo = series[0].points[0].second;
  double y_hi = y_lo;
  for (const Series& s : series)
    for (const auto& [x, y] : s.points) {
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
    }
  if (y_hi == y_lo) {
    y_lo -= 1.0;
    y_hi += 1.0;
  } else {
    const double pad = 0.05 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;
  }

  const int width = 560;
  const int height = 360;
  const int margin = 60;
  const double plot_w = width - 2.0 * margin;
  const double plot_h = height - 2.0 * margin;
  const auto sx = [&](double x) { return margin + x * plot_w; };
  const auto sy = [&](double y) { return margin + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h; };

  static constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                            "#9467bd", "#ff7f0e", "#8c564b"};
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) +
         " " + std::to_string(height) + "\">\n";
  if (!title.empty())
    svg += "<text x=\"" + std::to_string(width / 2) +
           "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
  svg += "<rect x=\"" + std::to_string(margin) + "\" y=\"" + std::to_string(margin) +
         "\" width=\"" + detail::fmt(plot_w) + "\" height=\"" + detail::fmt(plot_h) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
  // x ticks at 0, 0.5, 1; y ticks at min/max
  for (double xt : {0.0, 0.5, 1.0})
    svg += "<text x=\"" + detail::fmt(sx(xt)) + "\" y=\"" + std::to_string(height - margin + 18) +
           "\" text-anchor=\"middle\" font-size=\"10\">" + detail::fmt(xt) + "</text>\n";
  for (double yt : {y_lo, y_hi})
    svg += "<text x=\"" + std::to_string(margin - 6) + "\" y=\"" + detail::fmt(sy(yt) + 4) +
           "\" text-anchor=\"end\" font-size=\"10\">" + detail::fmt(yt) + "</text>\n";

  for (size_t i = 0; i < series.size(); ++i) {
    const char* color = palette[i % 6];
    std::string pts;
    for (const auto& [x, y] : series[i].points) {
      if (!pts.empty()) pts += ' ';
      pts += detail::fmt(sx(x)) + "," + detail::fmt(sy(y));
    }
    svg += "<polyline class=\"series\" fill=\"none\" stroke=\"";
    svg += color;
    svg += "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const int ly = margin + 16 + static_cast<int>(i) * 16;
    svg += "<line x1=\"" + std::to_string(margin + 8) + "\" y1=\"" + std::to_string(ly - 4) +
           "\" x2=\"" + std::to_string(margin + 28) + "\" y2=\"" + std::to_string(ly - 4) +
           "\" stroke=\"";
    svg += color;
    svg += "\" stroke-width=\"1.5\"/>\n";
    svg += "<text x=\"" + std::to_string(margin + 34) + "\" y=\"" + std::to_string(ly) +
           "\" font-size=\"11\">" + series[i].name + "</text>\n";
  }
  svg += "<text x=\"" + std::to_string(width / 2) + "\" y=\"" + std::to_string(height - 12) +
         "\" text-anchor=\"middle\" font-size=\"12\">" + x_label + "</text>\n";
  svg += "<text x=\"16\" y=\"" + std::to_string(height / 2) +
         "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " +
         std::to_string(height / 2) + ")\">" + y_label + "</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace depthprobe
