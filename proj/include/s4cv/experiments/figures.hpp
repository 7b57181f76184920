#pragma once

// Plain SVG figures: line chart over a logarithmic x axis, annotated heatmap,
// and a cumulative step histogram.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "s4cv/core/errors.hpp"

namespace s4cv {

struct Series {
  std::string name;
  std::vector<double> y;  // NaN marks a missing point
};

namespace svg_detail {

inline std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else if (c == '"') o += "&quot;";
    else o += c;
  }
  return o;
}

inline std::string num(double v, int prec = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline std::string palette(std::size_t i) {
  static const char* p[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return p[i % 10];
}

// Viridis-like ramp on [0,1].
inline std::string ramp_color(double t) {
  static const std::array<std::array<double, 3>, 5> anchors{
      {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * 4.0;
  const auto i = std::min<std::size_t>(3, static_cast<std::size_t>(t));
  const double f = t - double(i);
  char buf[8];
  int c[3];
  for (int k = 0; k < 3; ++k) c[k] = int(std::lround(anchors[i][k] + f * (anchors[i + 1][k] - anchors[i][k])));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

inline void save(const std::string& path, const std::string& body, int w, int h) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write figure " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << body << "</svg>\n";
}

inline std::string text(double x, double y, const std::string& s, const char* anchor = "middle", int size = 12,
                        const std::string& extra = "") {
  std::ostringstream o;
  o << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" text-anchor=\"" << anchor << "\" font-size=\"" << size
    << "\"" << extra << ">" << esc(s) << "</text>\n";
  return o.str();
}

inline std::string line(double x1, double y1, double x2, double y2, const std::string& stroke = "#333",
                        double width = 1) {
  return "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) +
         "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\"/>\n";
}

}  // namespace svg_detail

// x must be positive (log10 axis).
inline void write_line_chart_logx(const std::string& path, const std::string& title, const std::vector<double>& x,
                                  const std::vector<std::string>& x_labels, const std::vector<Series>& series,
                                  const std::string& y_label) {
  using namespace svg_detail;
  if (x.empty()) throw ArgumentError("line chart needs at least one x value");
  for (double v : x)
    if (!(v > 0)) throw ArgumentError("log-scale x values must be positive");
  const int W = 720, H = 460, L = 70, R = 190, T = 40, B = 60;
  const double lx0 = std::log10(*std::min_element(x.begin(), x.end()));
  double lx1 = std::log10(*std::max_element(x.begin(), x.end()));
  if (lx1 - lx0 < 1e-12) lx1 = lx0 + 1;
  double y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (double v : s.y)
      if (std::isfinite(v)) y0 = std::min(y0, v), y1 = std::max(y1, v);
  if (y0 > y1) y0 = 0, y1 = 1;
  const double pad = std::max(0.02, 0.05 * (y1 - y0));
  y0 -= pad, y1 += pad;
  auto px = [&](double v) { return L + (std::log10(v) - lx0) / (lx1 - lx0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };

  std::string b = text(W / 2.0, 22, title, "middle", 15);
  b += line(L, H - B, W - R, H - B) + line(L, T, L, H - B);
  for (std::size_t i = 0; i < x.size(); ++i) {
    b += line(px(x[i]), H - B, px(x[i]), H - B + 5);
    b += text(px(x[i]), H - B + 20, i < x_labels.size() ? x_labels[i] : num(x[i], 3));
  }
  for (int k = 0; k <= 5; ++k) {
    const double v = y0 + (y1 - y0) * k / 5.0;
    b += line(L - 5, py(v), L, py(v)) + line(L, py(v), W - R, py(v), "#ddd", 0.5);
    b += text(L - 8, py(v) + 4, num(v, 3), "end");
  }
  b += text(L + (W - L - R) / 2.0, H - 15, "labeled ratio (log scale)");
  b += text(18, (T + H - B) / 2.0, y_label, "middle", 12,
            " transform=\"rotate(-90 18 " + num((T + H - B) / 2.0) + ")\"");
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto c = palette(s);
    std::string pts;
    for (std::size_t i = 0; i < x.size() && i < series[s].y.size(); ++i) {
      const double v = series[s].y[i];
      if (!std::isfinite(v)) continue;
      pts += num(px(x[i])) + "," + num(py(v)) + " ";
      b += "<circle cx=\"" + num(px(x[i])) + "\" cy=\"" + num(py(v)) + "\" r=\"3\" fill=\"" + c + "\"/>\n";
    }
    b += "<polyline fill=\"none\" stroke=\"" + c + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    const double ly = T + 10 + 20.0 * double(s);
    b += line(W - R + 15, ly, W - R + 40, ly, c, 2) + text(W - R + 46, ly + 4, series[s].name, "start");
  }
  save(path, b, W, H);
}

struct HeatmapGrid {
  std::vector<std::string> rows, cols;
  std::vector<std::vector<double>> values;  // NaN: no spec in this cell
  std::vector<std::vector<std::string>> labels;
};

inline void write_heatmap(const std::string& path, const std::string& title, const HeatmapGrid& g,
                          bool lower_is_better = false) {
  using namespace svg_detail;
  const int cw = 110, ch = 44, L = 150, T = 80;
  const int W = L + cw * int(g.cols.size()) + 30, H = T + ch * int(g.rows.size()) + 30;
  double lo = 1e300, hi = -1e300;
  for (const auto& r : g.values)
    for (double v : r)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  std::string b = text(W / 2.0, 24, title, "middle", 15);
  for (std::size_t c = 0; c < g.cols.size(); ++c)
    b += text(L + cw * (c + 0.5), T - 10, g.cols[c], "middle", 10);
  for (std::size_t r = 0; r < g.rows.size(); ++r) {
    b += text(L - 8, T + ch * (r + 0.5) + 4, g.rows[r], "end", 11);
    for (std::size_t c = 0; c < g.cols.size(); ++c) {
      const double v = g.values[r][c];
      const double x = L + cw * double(c), y = T + ch * double(r);
      std::string fill = "#eeeeee";
      if (std::isfinite(v)) {
        double t = hi > lo ? (v - lo) / (hi - lo) : 1.0;
        fill = ramp_color(lower_is_better ? 1 - t : t);
      }
      b += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + std::to_string(cw) + "\" height=\"" +
           std::to_string(ch) + "\" fill=\"" + fill + "\" stroke=\"white\"/>\n";
      const auto& label = g.labels.empty() ? std::string() : g.labels[r][c];
      if (!label.empty()) b += text(x + cw / 2.0, y + 17, label, "middle", 9);
      if (std::isfinite(v)) b += text(x + cw / 2.0, y + 33, num(v, 4), "middle", 11);
    }
  }
  save(path, b, W, H);
}

// counts[i] = number of values >= thresholds[i].
inline std::vector<int> cumulative_counts(const std::vector<double>& values, const std::vector<double>& thresholds) {
  std::vector<int> out;
  for (double t : thresholds)
    out.push_back(static_cast<int>(std::count_if(values.begin(), values.end(), [t](double v) { return v >= t; })));
  return out;
}

// Thresholds 0, 1/bins, ..., 1.
inline std::vector<double> unit_thresholds(int bins = 20) {
  std::vector<double> t;
  for (int i = 0; i <= bins; ++i) t.push_back(double(i) / bins);
  return t;
}

inline void write_cumulative_histogram(const std::string& path, const std::string& title,
                                       const std::vector<double>& thresholds,
                                       const std::vector<std::pair<std::string, std::vector<int>>>& series) {
  using namespace svg_detail;
  if (thresholds.size() < 2) throw ArgumentError("histogram needs at least two thresholds");
  const int W = 720, H = 440, L = 60, R = 180, T = 40, B = 55;
  int ymax = 1;
  for (const auto& [_, c] : series)
    for (int v : c) ymax = std::max(ymax, v);
  const double t0 = thresholds.front(), t1 = thresholds.back();
  auto px = [&](double v) { return L + (v - t0) / (t1 - t0) * (W - L - R); };
  auto py = [&](double v) { return H - B - v / ymax * (H - T - B); };
  std::string b = text(W / 2.0, 22, title, "middle", 15);
  b += line(L, H - B, W - R, H - B) + line(L, T, L, H - B);
  for (int k = 0; k <= 10; ++k) {
    const double v = t0 + (t1 - t0) * k / 10.0;
    b += line(px(v), H - B, px(v), H - B + 5) + text(px(v), H - B + 18, num(v, 1));
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = ymax * k / 4.0;
    b += line(L - 5, py(v), L, py(v)) + text(L - 8, py(v) + 4, num(v, 0), "end");
  }
  b += text(L + (W - L - R) / 2.0, H - 12, "IOU threshold");
  b += text(16, (T + H - B) / 2.0, "images with IOU >= threshold", "middle", 12,
            " transform=\"rotate(-90 16 " + num((T + H - B) / 2.0) + ")\"");
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto c = palette(s);
    const auto& counts = series[s].second;
    std::string pts;
    for (std::size_t i = 0; i < thresholds.size() && i < counts.size(); ++i) {
      const double xr = i + 1 < thresholds.size() ? thresholds[i + 1] : thresholds[i];
      pts += num(px(thresholds[i])) + "," + num(py(counts[i])) + " " + num(px(xr)) + "," + num(py(counts[i])) + " ";
    }
    b += "<polyline fill=\"none\" stroke=\"" + c + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    const double ly = T + 10 + 20.0 * double(s);
    b += line(W - R + 15, ly, W - R + 40, ly, c, 2) + text(W - R + 46, ly + 4, series[s].first, "start");
  }
  save(path, b, W, H);
}

}  // namespace s4cv
