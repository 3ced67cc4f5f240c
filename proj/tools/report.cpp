#include "report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "fmstat/error.hpp"

namespace fmstat::cli {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";  // folds -0
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string cell(double v) { return format_double(v); }
std::string cell(std::size_t v) { return std::to_string(v); }
std::string cell(bool v) { return v ? "1" : "0"; }
std::string cell(const std::string& v) {
  if (v.find_first_of(",\"\n") == std::string::npos) return v;
  std::string q = "\"";
  for (char c : v) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

CsvTable& CsvTable::row(std::vector<std::string> cells) {
  require(cells.size() == header_.size(), ErrorCode::DimensionMismatch, "csv row width does not match header");
  rows_.push_back(std::move(cells));
  return *this;
}

std::string CsvTable::str() const {
  std::string out;
  const auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (j) out += ',';
      out += r[j];
    }
    out += '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::Io, "cannot open " + path.string() + " for writing");
  f << text;
  require(f.good(), ErrorCode::Io, "write failed for " + path.string());
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
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
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double pad = 0.04 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

}  // namespace

void CsvTable::write(const std::filesystem::path& path) const { write_text(path, str()); }

Panel& Panel::line(std::vector<double> x, std::vector<double> y, std::string color, std::string label) {
  series.push_back({Series::Kind::Line, std::move(x), std::move(y), std::move(color), std::move(label)});
  return *this;
}
Panel& Panel::points(std::vector<double> x, std::vector<double> y, std::string color, std::string label) {
  series.push_back({Series::Kind::Points, std::move(x), std::move(y), std::move(color), std::move(label)});
  return *this;
}
Panel& Panel::bars(std::vector<double> edges, std::vector<double> heights, std::string color, std::string label) {
  series.push_back({Series::Kind::Bars, std::move(edges), std::move(heights), std::move(color), std::move(label)});
  return *this;
}

SvgFigure::SvgFigure(double panel_width, double panel_height) : w_(panel_width), h_(panel_height) {}

Panel& SvgFigure::add_panel(std::string title) {
  panels_.push_back(Panel{});
  panels_.back().title = std::move(title);
  return panels_.back();
}

std::string SvgFigure::str() const {
  std::ostringstream s;
  const double total_w = w_ * static_cast<double>(std::max<std::size_t>(panels_.size(), 1));
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(total_w) << "\" height=\"" << num(h_)
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const double ml = 52, mr = 12, mt = 26, mb = 40;
  for (std::size_t p = 0; p < panels_.size(); ++p) {
    const Panel& panel = panels_[p];
    Range rx, ry;
    for (const auto& se : panel.series) {
      for (double v : se.x) rx.add(v);
      for (double v : se.y) ry.add(v);
      if (se.kind == Series::Kind::Bars) ry.add(0.0);
    }
    if (panel.diagonal) {
      const double lo = std::min(rx.lo, ry.lo), hi = std::max(rx.hi, ry.hi);
      rx.add(lo), rx.add(hi), ry.add(lo), ry.add(hi);
    }
    rx.finish();
    ry.finish();
    const double x0 = w_ * static_cast<double>(p) + ml, x1 = w_ * static_cast<double>(p + 1) - mr;
    const double y0 = h_ - mb, y1 = mt;
    const auto px = [&](double v) { return x0 + (v - rx.lo) / (rx.hi - rx.lo) * (x1 - x0); };
    const auto py = [&](double v) { return y0 + (v - ry.lo) / (ry.hi - ry.lo) * (y1 - y0); };

    s << "<g>\n<text x=\"" << num((x0 + x1) / 2) << "\" y=\"16\" text-anchor=\"middle\" font-size=\"13\">"
      << escape(panel.title) << "</text>\n";
    s << "<rect x=\"" << num(x0) << "\" y=\"" << num(y1) << "\" width=\"" << num(x1 - x0) << "\" height=\""
      << num(y0 - y1) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double vx = rx.lo + (rx.hi - rx.lo) * k / 4.0, vy = ry.lo + (ry.hi - ry.lo) * k / 4.0;
      s << "<text x=\"" << num(px(vx)) << "\" y=\"" << num(y0 + 14) << "\" text-anchor=\"middle\">"
        << tick_label(vx) << "</text>\n";
      s << "<text x=\"" << num(x0 - 4) << "\" y=\"" << num(py(vy) + 4) << "\" text-anchor=\"end\">"
        << tick_label(vy) << "</text>\n";
    }
    if (!panel.xlabel.empty())
      s << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(h_ - 8) << "\" text-anchor=\"middle\">"
        << escape(panel.xlabel) << "</text>\n";
    if (!panel.ylabel.empty())
      s << "<text transform=\"translate(" << num(w_ * static_cast<double>(p) + 12) << "," << num((y0 + y1) / 2)
        << ") rotate(-90)\" text-anchor=\"middle\">" << escape(panel.ylabel) << "</text>\n";
    if (panel.diagonal) {
      const double lo = std::max(rx.lo, ry.lo), hi = std::min(rx.hi, ry.hi);
      s << "<line x1=\"" << num(px(lo)) << "\" y1=\"" << num(py(lo)) << "\" x2=\"" << num(px(hi)) << "\" y2=\""
        << num(py(hi)) << "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
    }
    double legend_y = y1 + 14;
    for (const auto& se : panel.series) {
      switch (se.kind) {
        case Series::Kind::Line: {
          s << "<polyline fill=\"none\" stroke=\"" << se.color << "\" stroke-width=\"1.5\" points=\"";
          for (std::size_t i = 0; i < std::min(se.x.size(), se.y.size()); ++i) {
            if (!std::isfinite(se.x[i]) || !std::isfinite(se.y[i])) continue;
            s << num(px(se.x[i])) << ',' << num(py(se.y[i])) << ' ';
          }
          s << "\"/>\n";
          break;
        }
        case Series::Kind::Points:
          for (std::size_t i = 0; i < std::min(se.x.size(), se.y.size()); ++i) {
            if (!std::isfinite(se.x[i]) || !std::isfinite(se.y[i])) continue;
            s << "<circle cx=\"" << num(px(se.x[i])) << "\" cy=\"" << num(py(se.y[i])) << "\" r=\"1.6\" fill=\""
              << se.color << "\" fill-opacity=\"0.5\"/>\n";
          }
          break;
        case Series::Kind::Bars:
          for (std::size_t i = 0; i + 1 < se.x.size() && i < se.y.size(); ++i) {
            const double top = py(se.y[i]), base = py(0.0);
            s << "<rect x=\"" << num(px(se.x[i])) << "\" y=\"" << num(std::min(top, base)) << "\" width=\""
              << num(px(se.x[i + 1]) - px(se.x[i])) << "\" height=\"" << num(std::abs(base - top)) << "\" fill=\""
              << se.color << "\" fill-opacity=\"0.45\"/>\n";
          }
          break;
      }
      if (!se.label.empty()) {
        s << "<rect x=\"" << num(x1 - 110) << "\" y=\"" << num(legend_y - 8) << "\" width=\"10\" height=\"10\" fill=\""
          << se.color << "\"/>\n<text x=\"" << num(x1 - 96) << "\" y=\"" << num(legend_y + 1) << "\">"
          << escape(se.label) << "</text>\n";
        legend_y += 14;
      }
    }
    s << "</g>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void SvgFigure::write(const std::filesystem::path& path) const { write_text(path, str()); }

std::pair<std::vector<double>, std::vector<double>> histogram(const std::vector<double>& v, double lo, double hi,
                                                              std::size_t bins) {
  require(bins >= 1 && hi > lo, ErrorCode::InvalidArgument, "histogram: bad range");
  std::vector<double> edges(bins + 1), dens(bins, 0.0);
  const double w = (hi - lo) / static_cast<double>(bins);
  for (std::size_t k = 0; k <= bins; ++k) edges[k] = lo + w * static_cast<double>(k);
  for (double x : v) {
    if (!(x >= lo && x <= hi)) continue;
    const auto k = std::min(bins - 1, static_cast<std::size_t>((x - lo) / w));
    dens[k] += 1.0;
  }
  if (!v.empty())
    for (auto& d : dens) d /= static_cast<double>(v.size()) * w;
  return {edges, dens};
}

std::string svg_heatmap(const std::vector<double>& xs, const std::vector<double>& ys,
                        const std::vector<double>& values, double vmin, double vmax, const std::string& title) {
  require(xs.size() == ys.size() && xs.size() == values.size(), ErrorCode::DimensionMismatch,
          "heatmap: length mismatch");
  std::vector<double> ux(xs), uy(ys);
  std::sort(ux.begin(), ux.end());
  ux.erase(std::unique(ux.begin(), ux.end()), ux.end());
  std::sort(uy.begin(), uy.end());
  uy.erase(std::unique(uy.begin(), uy.end()), uy.end());
  const double cell_px = 28, ml = 44, mt = 28;
  const double w = ml + cell_px * static_cast<double>(ux.size()) + 70;
  const double h = std::max(mt + cell_px * static_cast<double>(uy.size()) + 30, mt + 135);
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\"" << num(h)
    << "\" font-family=\"sans-serif\" font-size=\"10\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << num(w / 2) << "\" y=\"16\" text-anchor=\"middle\" font-size=\"13\">" << escape(title)
    << "</text>\n";
  const auto colour = [&](double v) {
    double t = vmax > vmin ? (v - vmin) / (vmax - vmin) : 0.5;
    t = std::clamp(std::isfinite(t) ? t : 1.0, 0.0, 1.0);
    // white to dark red
    const int r = static_cast<int>(255 - 100 * t), g = static_cast<int>(255 - 235 * t),
              b = static_cast<int>(255 - 235 * t);
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return std::string(buf);
  };
  for (std::size_t k = 0; k < values.size(); ++k) {
    const auto i = static_cast<double>(std::lower_bound(ux.begin(), ux.end(), xs[k]) - ux.begin());
    const auto j = static_cast<double>(std::lower_bound(uy.begin(), uy.end(), ys[k]) - uy.begin());
    const double top = mt + cell_px * (static_cast<double>(uy.size()) - 1 - j);
    s << "<rect x=\"" << num(ml + cell_px * i) << "\" y=\"" << num(top) << "\" width=\"" << num(cell_px)
      << "\" height=\"" << num(cell_px) << "\" fill=\"" << colour(values[k]) << "\" stroke=\"#ccc\"/>\n";
  }
  for (std::size_t i = 0; i < ux.size(); i += std::max<std::size_t>(1, ux.size() / 5))
    s << "<text x=\"" << num(ml + cell_px * (static_cast<double>(i) + 0.5)) << "\" y=\""
      << num(h - 14) << "\" text-anchor=\"middle\">" << tick_label(ux[i]) << "</text>\n";
  for (std::size_t j = 0; j < uy.size(); j += std::max<std::size_t>(1, uy.size() / 5))
    s << "<text x=\"" << num(ml - 4) << "\" y=\""
      << num(mt + cell_px * (static_cast<double>(uy.size()) - 0.5 - static_cast<double>(j)) + 3)
      << "\" text-anchor=\"end\">" << tick_label(uy[j]) << "</text>\n";
  const double lx = ml + cell_px * static_cast<double>(ux.size()) + 14;
  for (int k = 0; k < 10; ++k) {
    const double v = vmax - (vmax - vmin) * k / 9.0;
    s << "<rect x=\"" << num(lx) << "\" y=\"" << num(mt + 12.0 * k) << "\" width=\"12\" height=\"12\" fill=\""
      << colour(v) << "\"/>\n";
  }
  s << "<text x=\"" << num(lx + 16) << "\" y=\"" << num(mt + 9) << "\">" << tick_label(vmax) << "</text>\n";
  s << "<text x=\"" << num(lx + 16) << "\" y=\"" << num(mt + 117) << "\">" << tick_label(vmin) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace fmstat::cli
