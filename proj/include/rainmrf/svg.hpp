#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "rainmrf/common.hpp"
#include "rainmrf/csv.hpp"
#include "rainmrf/data.hpp"
#include "rainmrf/model.hpp"

// Static SVG charts. Output depends only on the inputs, so reruns produce
// identical files.
namespace rainmrf::svg {

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v, int precision = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

// Categorical palette, one colour per series.
inline const char* series_colour(std::size_t i) {
  static const char* colours[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return colours[i % (sizeof colours / sizeof colours[0])];
}

class Document {
 public:
  Document(double width, double height) : width_(width), height_(height) {}

  void rect(double x, double y, double w, double h, const std::string& fill,
            const std::string& extra = "") {
    body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\""
          << num(h) << "\" fill=\"" << fill << "\"" << (extra.empty() ? "" : " " + extra) << "/>\n";
  }

  void line(double x1, double y1, double x2, double y2, const std::string& stroke = "#333") {
    body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\""
          << num(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\"1\"/>\n";
  }

  void text(double x, double y, const std::string& s, int size = 12, const std::string& anchor = "start") {
    body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-family=\"sans-serif\" font-size=\""
          << size << "\" text-anchor=\"" << anchor << "\">" << escape(s) << "</text>\n";
  }

  std::string str() const {
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width_, 0) << "\" height=\""
       << num(height_, 0) << "\" viewBox=\"0 0 " << num(width_, 0) << ' ' << num(height_, 0) << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << body_.str() << "</svg>\n";
    return os.str();
  }

 private:
  double width_, height_;
  std::ostringstream body_;
};

struct Series {
  std::string name;
  std::vector<double> values;  // one per category; NaN leaves a gap
};

// Grouped bar chart: one group per category, one bar per series.
inline std::string bar_chart(const std::string& title, const std::string& y_label,
                             const std::vector<std::string>& categories, const std::vector<Series>& series) {
  const double left = 70, right = 20, top = 40, bottom = 60;
  const double group_w = std::max(24.0, 12.0 * static_cast<double>(std::max<std::size_t>(series.size(), 1)) + 8.0);
  const double plot_w = std::max(240.0, group_w * static_cast<double>(categories.size()));
  const double plot_h = 260;
  Document doc(left + plot_w + right, top + plot_h + bottom + 18.0 * static_cast<double>(series.size()));

  double top_value = 0.0;
  for (const auto& s : series)
    for (double v : s.values)
      if (std::isfinite(v)) top_value = std::max(top_value, v);
  if (top_value <= 0.0) top_value = 1.0;

  doc.text(left + plot_w / 2, 22, title, 14, "middle");
  doc.line(left, top, left, top + plot_h);
  doc.line(left, top + plot_h, left + plot_w, top + plot_h);
  for (int i = 0; i <= 4; ++i) {
    const double v = top_value * i / 4.0;
    const double y = top + plot_h - plot_h * i / 4.0;
    doc.line(left - 4, y, left, y);
    doc.text(left - 6, y + 4, num(v, top_value < 10 ? 2 : 0), 10, "end");
  }
  doc.text(16, top + plot_h / 2, y_label, 11, "start");

  const double bar_w = (group_w - 8.0) / static_cast<double>(std::max<std::size_t>(series.size(), 1));
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const double gx = left + group_w * static_cast<double>(c) + 4.0;
    for (std::size_t k = 0; k < series.size(); ++k) {
      if (c >= series[k].values.size()) continue;
      const double v = series[k].values[c];
      if (!std::isfinite(v)) continue;
      const double h = plot_h * std::max(v, 0.0) / top_value;
      doc.rect(gx + bar_w * static_cast<double>(k), top + plot_h - h, bar_w, h, series_colour(k));
    }
    doc.text(gx + (group_w - 8.0) / 2, top + plot_h + 16, categories[c], 10, "middle");
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const double y = top + plot_h + 36 + 18.0 * static_cast<double>(k);
    doc.rect(left, y - 10, 12, 12, series_colour(k));
    doc.text(left + 18, y, series[k].name, 11);
  }
  return doc.str();
}

// Small multiples of the spatial patterns on the location lattice, one panel
// per cluster, annotated with the pattern's aggregate rainfall. With
// `discrete`, cells show the CDP state; otherwise the CRP value on a shared
// white-to-blue scale.
inline std::string pattern_grid(const std::string& title, const std::vector<GridCoord>& coords,
                                const PatternSet& p, bool discrete) {
  int min_x = 0, max_x = 0, min_y = 0, max_y = 0;
  if (!coords.empty()) {
    min_x = max_x = coords[0].x;
    min_y = max_y = coords[0].y;
  }
  for (const auto& c : coords) {
    min_x = std::min(min_x, c.x);
    max_x = std::max(max_x, c.x);
    min_y = std::min(min_y, c.y);
    max_y = std::max(max_y, c.y);
  }
  const int gw = max_x - min_x + 1, gh = max_y - min_y + 1;
  const double cell = std::clamp(160.0 / std::max(gw, gh), 2.0, 16.0);
  const double panel_w = cell * gw + 20, panel_h = cell * gh + 36;
  const int K = p.num_day_clusters();
  const int cols = std::max(1, std::min(K, 6));
  const int rows = (K + cols - 1) / cols;
  Document doc(std::max(panel_w * cols + 20, 300.0), panel_h * std::max(rows, 1) + 50);
  doc.text(10, 22, title, 14);

  const double top_value = p.crp.size() > 0 ? std::max(p.crp.maxCoeff(), kRainEpsilon) : 1.0;
  for (int u = 0; u < K; ++u) {
    const double ox = 10 + panel_w * (u % cols);
    const double oy = 40 + panel_h * (u / cols);
    const double volume = u < p.volume.size() ? p.volume(u) : 0.0;
    doc.text(ox, oy + 12, std::to_string(u + 1) + ": " + num(volume, 1) + " mm/day", 11);
    doc.rect(ox, oy + 18, cell * gw, cell * gh, "#ffffff", "stroke=\"#999\" stroke-width=\"0.5\"");
    for (std::size_t s = 0; s < coords.size(); ++s) {
      std::string fill;
      if (discrete) {
        fill = p.cdp(static_cast<Eigen::Index>(s), u) == kHigh ? "#2b6cb0" : "#e8e8e8";
      } else {
        const double f = std::clamp(p.crp(static_cast<Eigen::Index>(s), u) / top_value, 0.0, 1.0);
        char buf[16];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(255 - 212 * f),
                      static_cast<int>(255 - 147 * f), static_cast<int>(255 - 79 * f));
        fill = buf;
      }
      // Larger grid_y is drawn higher up.
      doc.rect(ox + cell * (coords[s].x - min_x), oy + 18 + cell * (max_y - coords[s].y), cell, cell, fill);
    }
  }
  return doc.str();
}

inline void write(const std::filesystem::path& path, const std::string& content) {
  auto out = csv::open_for_write(path);
  out << content;
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace rainmrf::svg
