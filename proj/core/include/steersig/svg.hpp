#pragma once

#include <string>
#include <vector>

namespace steersig {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color;
  bool dashed = false;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
};

struct Heatmap {
  std::string title;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<std::vector<double>> values;  // [row][col]
};

// Fixed viewport; coordinates written with three decimals so identical
// inputs produce identical bytes.
class SvgDocument {
 public:
  SvgDocument(double width, double height);

  void line_chart(const LineChart& chart, double x, double y, double w, double h);
  void heatmap(const Heatmap& map, double x, double y, double w, double h);
  void text(double x, double y, const std::string& s, double size = 12, const std::string& anchor = "start");

  std::string str() const;

 private:
  double width_, height_;
  std::string body_;
};

// Deterministic palette, cycled by index.
std::string palette_color(std::size_t i);

std::string xml_escape(const std::string& s);

}  // namespace steersig
