#include "steersig/svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>

namespace steersig {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  std::string s = buf;
  if (s == "-0.000") s = "0.000";
  return s;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) {
      const double pad = std::max(1e-6, std::abs(lo) * 0.05);
      lo -= pad;
      hi += pad;
    }
  }
  double frac(double v) const { return (v - lo) / (hi - lo); }
};

// Blue to red through white.
std::string heat_color(double t) {
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  int r, g, b;
  if (t < 0.5) {
    const double u = t / 0.5;
    r = static_cast<int>(std::lround(49 + u * (255 - 49)));
    g = static_cast<int>(std::lround(54 + u * (255 - 54)));
    b = static_cast<int>(std::lround(149 + u * (255 - 149)));
  } else {
    const double u = (t - 0.5) / 0.5;
    r = static_cast<int>(std::lround(255 - u * (255 - 165)));
    g = static_cast<int>(std::lround(255 - u * 255));
    b = static_cast<int>(std::lround(255 - u * (255 - 38)));
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace

std::string palette_color(std::size_t i) {
  static constexpr std::array<const char*, 10> colors = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                         "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % colors.size()];
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
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

SvgDocument::SvgDocument(double width, double height) : width_(width), height_(height) {}

void SvgDocument::text(double x, double y, const std::string& s, double size, const std::string& anchor) {
  body_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" + num(size) + "\" text-anchor=\"" +
           anchor + "\">" + xml_escape(s) + "</text>\n";
}

void SvgDocument::line_chart(const LineChart& chart, double x, double y, double w, double h) {
  const double left = x + 60, right = x + w - 150, top = y + 30, bottom = y + h - 45;
  Range xr, yr;
  for (const auto& s : chart.series) {
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  xr.finish();
  yr.finish();
  const auto px = [&](double v) { return left + xr.frac(v) * (right - left); };
  const auto py = [&](double v) { return bottom - yr.frac(v) * (bottom - top); };

  body_ += "<g>\n";
  text(x + w / 2, y + 18, chart.title, 14, "middle");
  body_ += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(right - left) + "\" height=\"" +
           num(bottom - top) + "\" fill=\"none\" stroke=\"#000000\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    text(px(fx), bottom + 15, tick_label(fx), 10, "middle");
    text(left - 5, py(fy) + 3, tick_label(fy), 10, "end");
  }
  text((left + right) / 2, bottom + 35, chart.x_label, 12, "middle");
  body_ += "<text x=\"" + num(x + 14) + "\" y=\"" + num((top + bottom) / 2) +
           "\" font-size=\"12.000\" text-anchor=\"middle\" transform=\"rotate(-90 " + num(x + 14) + " " +
           num((top + bottom) / 2) + ")\">" + xml_escape(chart.y_label) + "</text>\n";

  for (std::size_t i = 0; i < chart.series.size(); ++i) {
    const auto& s = chart.series[i];
    std::string points;
    for (std::size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      if (!points.empty()) points += ' ';
      points += num(px(s.x[k])) + "," + num(py(s.y[k]));
    }
    body_ += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.500\"";
    if (s.dashed) body_ += " stroke-dasharray=\"6,4\"";
    body_ += " points=\"" + points + "\"/>\n";
    const double ly = top + 12 + 14.0 * static_cast<double>(i);
    body_ += "<line x1=\"" + num(right + 10) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(right + 30) +
             "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + s.color + "\" stroke-width=\"1.500\"";
    if (s.dashed) body_ += " stroke-dasharray=\"6,4\"";
    body_ += "/>\n";
    text(right + 34, ly, s.label, 10);
  }
  body_ += "</g>\n";
}

void SvgDocument::heatmap(const Heatmap& map, double x, double y, double w, double h) {
  const double left = x + 70, top = y + 30, right = x + w - 20, bottom = y + h - 40;
  const std::size_t rows = map.values.size();
  const std::size_t cols = rows == 0 ? 0 : map.values.front().size();
  Range r;
  for (const auto& row : map.values) {
    for (double v : row) r.add(v);
  }
  r.finish();
  body_ += "<g>\n";
  text(x + w / 2, y + 18, map.title, 14, "middle");
  if (rows == 0 || cols == 0) {
    body_ += "</g>\n";
    return;
  }
  const double cw = (right - left) / static_cast<double>(cols);
  const double ch = (bottom - top) / static_cast<double>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = map.values[i][j];
      const double cx = left + cw * static_cast<double>(j);
      const double cy = top + ch * static_cast<double>(i);
      body_ += "<rect x=\"" + num(cx) + "\" y=\"" + num(cy) + "\" width=\"" + num(cw) + "\" height=\"" + num(ch) +
               "\" fill=\"" + heat_color(r.frac(v)) + "\"/>\n";
      text(cx + cw / 2, cy + ch / 2 + 4, tick_label(v), 10, "middle");
    }
    if (i < map.row_labels.size()) text(left - 6, top + ch * (static_cast<double>(i) + 0.5) + 4, map.row_labels[i], 11, "end");
  }
  for (std::size_t j = 0; j < cols && j < map.col_labels.size(); ++j) {
    text(left + cw * (static_cast<double>(j) + 0.5), bottom + 16, map.col_labels[j], 11, "middle");
  }
  body_ += "</g>\n";
}

std::string SvgDocument::str() const {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         num(width_) + "\" height=\"" + num(height_) + "\" viewBox=\"0 0 " + num(width_) + " " + num(height_) +
         "\">\n<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n" + body_ + "</svg>\n";
}

}  // namespace steersig
