#pragma once

// Dependency-free SVG line charts from tidy CSV.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace udgnn {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::invalid_argument("CSV has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

/// Plain comma-separated text; no quoting. Blank lines are skipped.
inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> f;
    std::string cur;
    for (char c : l) {
      if (c == ',') {
        f.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur += c;
      }
    }
    f.push_back(cur);
    return f;
  };
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    if (first) {
      t.header = split(line);
      first = false;
    } else {
      auto r = split(line);
      if (r.size() != t.header.size()) throw std::invalid_argument("CSV row has the wrong number of fields: " + line);
      t.rows.push_back(std::move(r));
    }
  }
  if (first) throw std::invalid_argument("CSV is empty");
  return t;
}

struct LineSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;  // sorted by x
};

/// Groups rows by `group`, averaging y over rows that share (group, x).
inline std::vector<LineSeries> series_from_csv(const CsvTable& t, const std::string& x, const std::string& y,
                                               const std::string& group) {
  const std::size_t xi = t.column(x), yi = t.column(y), gi = t.column(group);
  if (t.rows.empty()) throw std::invalid_argument("CSV has a header but no data rows");
  std::map<std::string, std::map<double, std::pair<double, int>>> acc;
  for (const auto& r : t.rows) {
    auto& cell = acc[r[gi]][std::stod(r[xi])];
    cell.first += std::stod(r[yi]);
    cell.second += 1;
  }
  std::vector<LineSeries> out;
  for (const auto& [name, pts] : acc) {
    LineSeries s{name, {}};
    for (const auto& [xv, sum] : pts) s.points.emplace_back(xv, sum.first / sum.second);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string render_line_chart(const std::vector<LineSeries>& series, const std::string& x_label,
                                     const std::string& y_label) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  constexpr double W = 640, H = 420, L = 70, R = 170, T = 30, B = 60;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (!(x1 > x0)) x0 -= 0.5, x1 += 0.5;
  if (!(y1 > y0)) y0 -= 0.5, y1 += 0.5;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  auto num = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f", v);
    return std::string(b);
  };
  auto tick = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.4g", v);
    return std::string(b);
  };
  auto esc = [](const std::string& s) {
    std::string o;
    for (char c : s) {
      if (c == '<') o += "&lt;";
      else if (c == '>') o += "&gt;";
      else if (c == '&') o += "&amp;";
      else o += c;
    }
    return o;
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) + "\" viewBox=\"0 0 " +
         num(W) + " " + num(H) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<line x1=\"" + num(L) + "\" y1=\"" + num(H - B) + "\" x2=\"" + num(W - R) + "\" y2=\"" + num(H - B) +
         "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + num(L) + "\" y1=\"" + num(T) + "\" x2=\"" + num(L) + "\" y2=\"" + num(H - B) +
         "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    svg += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(H - B + 18) + "\" font-size=\"11\" text-anchor=\"middle\">" +
           tick(xv) + "</text>\n";
    svg += "<text x=\"" + num(L - 6) + "\" y=\"" + num(py(yv) + 4) + "\" font-size=\"11\" text-anchor=\"end\">" +
           tick(yv) + "</text>\n";
  }
  svg += "<text x=\"" + num((L + W - R) / 2) + "\" y=\"" + num(H - 15) +
         "\" font-size=\"13\" text-anchor=\"middle\">" + esc(x_label) + "</text>\n";
  svg += "<text x=\"18\" y=\"" + num((T + H - B) / 2) + "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
         num((T + H - B) / 2) + ")\">" + esc(y_label) + "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = palette[k % std::size(palette)];
    std::string pts;
    for (const auto& [x, y] : series[k].points) {
      if (!pts.empty()) pts += ' ';
      pts += num(px(x)) + "," + num(py(y));
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    const double ly = T + 16.0 * static_cast<double>(k);
    svg += "<line x1=\"" + num(W - R + 15) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(W - R + 35) + "\" y2=\"" + num(ly) +
           "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + num(W - R + 40) + "\" y=\"" + num(ly + 4) + "\" font-size=\"11\">" + esc(series[k].name) +
           "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace udgnn
