#pragma once

// Deterministic SVG line plots. Output depends only on the data: fixed 800x600 canvas,
// fixed tick rules, coordinates printed with two decimals.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "bounds.hpp"
#include "error.hpp"
#include "io.hpp"

namespace wassdiff {

enum class PlotKind { loglog, linear };

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  std::string label;
  bool dashed = false;
};

struct PlotSpec {
  PlotKind kind = PlotKind::loglog;
  std::string title;
  std::string x_label;
  std::string y_label;
  bool annotate_slopes = true;  // loglog only: append the fitted slope to each legend entry
};

namespace detail {

inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  return s == "-0.00" ? "0.00" : s;
}

inline std::string xml_escape(const std::string& text) {
  std::string out;
  for (char c : text) {
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

/// Tick step from {1, 2, 5} x 10^k giving at most `target` intervals over the span.
inline double nice_step(double span, int target) {
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) return m * mag;
  }
  return 10.0 * mag;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  return colors[i % 8];
}

}  // namespace detail

/// Slope of log y against log x (least squares), as reported in plot legends.
inline double series_slope(const Series& s) {
  if (s.x.size() < 3) {
    require(s.x.size() == 2, ErrorKind::invalid_input, "need at least 2 points for a slope");
    return std::log(s.y[1] / s.y[0]) / std::log(s.x[1] / s.x[0]);
  }
  return fit_rate(s.x, s.y).slope;
}

inline std::string slope_text(double slope) { return detail::fixed2(slope); }

/// Renders the series to an SVG document.
inline std::string render_plot(const std::vector<Series>& series, const PlotSpec& spec) {
  require(!series.empty(), ErrorKind::invalid_input, "plot needs at least one series");
  const bool log = spec.kind == PlotKind::loglog;
  double x_lo = HUGE_VAL, x_hi = -HUGE_VAL, y_lo = HUGE_VAL, y_hi = -HUGE_VAL;
  for (const auto& s : series) {
    require(!s.x.empty() && s.x.size() == s.y.size(), ErrorKind::invalid_input,
            "series '" + s.label + "' must have matching non-empty x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      double x = s.x[i], y = s.y[i];
      require(std::isfinite(x) && std::isfinite(y), ErrorKind::invalid_input,
              "series '" + s.label + "' has a non-finite value");
      if (log) {
        require(x > 0.0 && y > 0.0, ErrorKind::invalid_input,
                "series '" + s.label + "' has a non-positive value on a log-log plot");
        x = std::log10(x);
        y = std::log10(y);
      }
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
    }
  }

  constexpr double W = 800, H = 600, left = 90, right = 30, top = 50, bottom = 70;
  constexpr double plot_w = W - left - right, plot_h = H - top - bottom;
  std::vector<double> x_ticks, y_ticks;
  double sx, sy, ox, oy;  // pixel = o + s * value (y grows downward)
  if (log) {
    // Whole decades on both axes, same pixels per decade so slope 1 is drawn at 45 degrees.
    x_lo = std::floor(x_lo);
    x_hi = std::max(std::ceil(x_hi), x_lo + 1.0);
    y_lo = std::floor(y_lo);
    y_hi = std::max(std::ceil(y_hi), y_lo + 1.0);
    const double per_decade = std::min(plot_w / (x_hi - x_lo), plot_h / (y_hi - y_lo));
    sx = per_decade;
    sy = -per_decade;
    ox = left + 0.5 * (plot_w - per_decade * (x_hi - x_lo)) - sx * x_lo;
    oy = top + plot_h - 0.5 * (plot_h - per_decade * (y_hi - y_lo)) - sy * y_lo;
    for (double k = x_lo; k <= x_hi + 1e-9; k += 1.0) x_ticks.push_back(k);
    for (double k = y_lo; k <= y_hi + 1e-9; k += 1.0) y_ticks.push_back(k);
  } else {
    if (x_hi == x_lo) x_hi = x_lo + 1.0;
    if (y_hi == y_lo) y_hi = y_lo + 1.0;
    const double xs = detail::nice_step(x_hi - x_lo, 8), ys = detail::nice_step(y_hi - y_lo, 6);
    x_lo = std::floor(x_lo / xs) * xs;
    x_hi = std::ceil(x_hi / xs) * xs;
    y_lo = std::floor(y_lo / ys) * ys;
    y_hi = std::ceil(y_hi / ys) * ys;
    sx = plot_w / (x_hi - x_lo);
    sy = -plot_h / (y_hi - y_lo);
    ox = left - sx * x_lo;
    oy = top + plot_h - sy * y_lo;
    for (int i = 0; x_lo + i * xs <= x_hi + 1e-9 * xs; ++i) x_ticks.push_back(x_lo + i * xs);
    for (int i = 0; y_lo + i * ys <= y_hi + 1e-9 * ys; ++i) y_ticks.push_back(y_lo + i * ys);
  }
  auto px = [&](double v) { return ox + sx * (log ? std::log10(v) : v); };
  auto py = [&](double v) { return oy + sy * (log ? std::log10(v) : v); };
  auto tick_text = [&](double t) {
    return log ? "1e" + detail::tick_label(t) : detail::tick_label(t);
  };

  using detail::fixed2;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"600\" viewBox=\"0 0 800 600\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"800\" height=\"600\" fill=\"white\"/>\n";
  svg << "<text x=\"400\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
      << detail::xml_escape(spec.title) << "</text>\n";
  // Grid and ticks.
  for (double t : x_ticks) {
    const double x = ox + sx * t;
    svg << "<line x1=\"" << fixed2(x) << "\" y1=\"" << fixed2(top) << "\" x2=\"" << fixed2(x)
        << "\" y2=\"" << fixed2(top + plot_h) << "\" stroke=\"#e0e0e0\"/>\n";
    svg << "<text x=\"" << fixed2(x) << "\" y=\"" << fixed2(top + plot_h + 18)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << tick_text(t) << "</text>\n";
  }
  for (double t : y_ticks) {
    const double y = oy + sy * t;
    svg << "<line x1=\"" << fixed2(left) << "\" y1=\"" << fixed2(y) << "\" x2=\"" << fixed2(left + plot_w)
        << "\" y2=\"" << fixed2(y) << "\" stroke=\"#e0e0e0\"/>\n";
    svg << "<text x=\"" << fixed2(left - 6) << "\" y=\"" << fixed2(y + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << tick_text(t)
        << "</text>\n";
  }
  svg << "<rect x=\"" << fixed2(left) << "\" y=\"" << fixed2(top) << "\" width=\"" << fixed2(plot_w)
      << "\" height=\"" << fixed2(plot_h) << "\" fill=\"none\" stroke=\"black\"/>\n";
  svg << "<text x=\"400\" y=\"" << fixed2(H - 20)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
      << detail::xml_escape(spec.x_label) << "</text>\n";
  svg << "<text x=\"20\" y=\"300\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
         "transform=\"rotate(-90 20 300)\">"
      << detail::xml_escape(spec.y_label) << "</text>\n";

  // Series.
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    svg << "<polyline fill=\"none\" stroke=\"" << detail::palette(k) << "\" stroke-width=\"2\""
        << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << " points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      svg << (i ? " " : "") << fixed2(px(s.x[i])) << "," << fixed2(py(s.y[i]));
    }
    svg << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      svg << "<circle cx=\"" << fixed2(px(s.x[i])) << "\" cy=\"" << fixed2(py(s.y[i]))
          << "\" r=\"3\" fill=\"" << detail::palette(k) << "\"/>\n";
    }
  }

  // Legend, in input order.
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    std::string text = s.label;
    if (log && spec.annotate_slopes && s.x.size() >= 2) text += " (slope " + slope_text(series_slope(s)) + ")";
    const double y = top + 18 + 18 * static_cast<double>(k);
    svg << "<line class=\"legend\" x1=\"" << fixed2(left + 12) << "\" y1=\"" << fixed2(y - 4) << "\" x2=\""
        << fixed2(left + 36) << "\" y2=\"" << fixed2(y - 4) << "\" stroke=\"" << detail::palette(k)
        << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>\n";
    svg << "<text class=\"legend\" x=\"" << fixed2(left + 42) << "\" y=\"" << fixed2(y)
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << detail::xml_escape(text) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

inline void emit_plot(const std::vector<Series>& series, const PlotSpec& spec,
                      const std::filesystem::path& path) {
  write_text_file(path, render_plot(series, spec));
}

}  // namespace wassdiff
