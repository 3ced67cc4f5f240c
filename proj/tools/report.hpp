#pragma once

// CSV and static SVG output for the fmstat CLI.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace fmstat::cli {

/// Shortest round-trip-safe text for a double ("nan", "inf", "-inf" for
/// non-finite values).
std::string format_double(double v);

/// Header row plus string cells; numbers go through format_double.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  CsvTable& row(std::vector<std::string> cells);
  const std::vector<std::string>& header() const noexcept { return header_; }
  std::size_t rows() const noexcept { return rows_.size(); }

  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::string cell(double v);
std::string cell(std::size_t v);
std::string cell(bool v);
std::string cell(const std::string& v);

struct Series {
  enum class Kind { Line, Points, Bars };
  Kind kind = Kind::Line;
  std::vector<double> x, y;  // Bars: x holds bin edges (size y.size() + 1)
  std::string color = "#1f77b4";
  std::string label;
};

/// One plot panel with linear axes fitted to its data.
struct Panel {
  std::string title, xlabel, ylabel;
  std::vector<Series> series;
  bool diagonal = false;  // dashed y = x reference line

  Panel& line(std::vector<double> x, std::vector<double> y, std::string color, std::string label = "");
  Panel& points(std::vector<double> x, std::vector<double> y, std::string color, std::string label = "");
  Panel& bars(std::vector<double> edges, std::vector<double> heights, std::string color, std::string label = "");
};

/// Panels laid out left to right.
class SvgFigure {
 public:
  explicit SvgFigure(double panel_width = 360, double panel_height = 300);

  Panel& add_panel(std::string title);
  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  double w_, h_;
  std::vector<Panel> panels_;
};

/// Equal-width histogram over [lo, hi] as (edges, density).
std::pair<std::vector<double>, std::vector<double>> histogram(const std::vector<double>& v, double lo, double hi,
                                                              std::size_t bins);

/// Filled-cell heat map of values on a regular grid.
std::string svg_heatmap(const std::vector<double>& xs, const std::vector<double>& ys,
                        const std::vector<double>& values, double vmin, double vmax, const std::string& title);

}  // namespace fmstat::cli
