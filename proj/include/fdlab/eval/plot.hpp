#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fdlab/core/csv.hpp"

namespace fdlab::plot {

namespace fs = std::filesystem;

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (x, y); a single point with x < 0 is drawn as a level line
  bool level = false;
};

struct LineChart {
  std::string title, x_label, y_label;
  double y_min = 0, y_max = 1;
  std::vector<Series> series;
};

inline std::string escape_xml(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

inline std::string timestamp_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[64];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

/// Renders an SVG line chart. With `timestamp` set, a generation comment is
/// embedded; leaving it empty makes the output a pure function of the data.
inline std::string render_svg(const LineChart& c, const std::string& timestamp = {}) {
  const double W = 640, H = 400, L = 60, R = 170, Tm = 40, B = 50;
  const double pw = W - L - R, ph = H - Tm - B;
  double x_max = 1;
  for (const auto& s : c.series)
    for (const auto& [x, y] : s.points) x_max = std::max(x_max, x);
  auto sx = [&](double x) { return L + pw * x / x_max; };
  auto sy = [&](double y) { return Tm + ph * (1 - (y - c.y_min) / std::max(1e-12, c.y_max - c.y_min)); };
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  if (!timestamp.empty()) o << "<!-- generated " << timestamp << " -->\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
    << escape_xml(c.title) << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << Tm + ph << "\" x2=\"" << L + pw << "\" y2=\"" << Tm + ph
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << Tm << "\" x2=\"" << L << "\" y2=\"" << Tm + ph << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = c.y_min + (c.y_max - c.y_min) * k / 4.0;
    o << "<text x=\"" << L - 6 << "\" y=\"" << sy(y) + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
      << "font-size=\"11\">" << y << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << sy(y) << "\" x2=\"" << L + pw << "\" y2=\"" << sy(y)
      << "\" stroke=\"#ddd\"/>\n";
  }
  for (int x = 0; x <= int(x_max); ++x)
    o << "<text x=\"" << sx(x) << "\" y=\"" << Tm + ph + 16 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"11\">" << x << "</text>\n";
  o << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"12\">" << escape_xml(c.x_label) << "</text>\n";
  o << "<text transform=\"translate(16," << Tm + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\" "
    << "font-family=\"sans-serif\" font-size=\"12\">" << escape_xml(c.y_label) << "</text>\n";
  for (std::size_t i = 0; i < c.series.size(); ++i) {
    const auto& s = c.series[i];
    if (s.points.empty()) continue;
    if (s.level) {
      const double y = s.points.front().second;
      o << "<line x1=\"" << sx(0) << "\" y1=\"" << sy(y) << "\" x2=\"" << sx(x_max) << "\" y2=\"" << sy(y)
        << "\" stroke=\"" << palette(i) << "\" stroke-dasharray=\"6,4\" stroke-width=\"1.5\"/>\n";
    } else {
      o << "<polyline fill=\"none\" stroke=\"" << palette(i) << "\" stroke-width=\"2\" points=\"";
      for (const auto& [x, y] : s.points) o << sx(x) << "," << sy(y) << " ";
      o << "\"/>\n";
      for (const auto& [x, y] : s.points)
        o << "<circle cx=\"" << sx(x) << "\" cy=\"" << sy(y) << "\" r=\"3\" fill=\"" << palette(i) << "\"/>\n";
    }
    const double ly = Tm + 14 + 18.0 * double(i);
    o << "<line x1=\"" << L + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << L + pw + 34 << "\" y2=\"" << ly
      << "\" stroke=\"" << palette(i) << "\" stroke-width=\"2\"" << (s.level ? " stroke-dasharray=\"6,4\"" : "")
      << "/>\n";
    o << "<text x=\"" << L + pw + 40 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
      << escape_xml(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw LoadError("cannot write " + p.string());
  out << s;
}

/// Metric-vs-tap charts for every (whitebox, blackbox) pair of a sweep CSV:
/// one file per metric, one curve per (variant, epsilon), baselines dashed.
inline std::vector<fs::path> render_transfer_plots(const fs::path& csv, const fs::path& out_dir, bool timestamps) {
  const auto t = read_csv(csv);
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> pairs;
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    if (t.at(i, "status") == "ok") pairs[{t.at(i, "whitebox"), t.at(i, "blackbox")}].push_back(i);
  const std::vector<std::pair<std::string, std::string>> metrics{
      {"error", "error"}, {"tsuc", "tSuc"}, {"utr", "uTR"}, {"ttr", "tTR"}};
  std::vector<fs::path> files;
  const std::string stamp = timestamps ? timestamp_now() : "";
  for (const auto& [pair, rows] : pairs) {
    for (const auto& [col, name] : metrics) {
      LineChart c;
      c.title = pair.first + " -> " + pair.second + ": " + name;
      c.x_label = "relative tap depth";
      c.y_label = name;
      std::map<std::string, Series> by;
      std::vector<std::string> order;
      for (std::size_t i : rows) {
        // Seeds are averaged per point.
        const std::string label = t.at(i, "variant") + " eps=" + t.at(i, "epsilon").substr(0, 6);
        if (!by.count(label)) order.push_back(label);
        auto& s = by[label];
        s.label = label;
        const double y = std::stod(t.at(i, col));
        if (t.at(i, "tap") == "logit") {
          s.level = true;
          s.points.push_back({0.0, y});
        } else {
          s.points.push_back({std::stod(t.at(i, "tap")), y});
        }
      }
      for (const auto& label : order) {
        auto s = by[label];
        std::map<double, std::pair<double, int>> acc;
        for (const auto& [x, y] : s.points) {
          acc[x].first += y;
          acc[x].second += 1;
        }
        s.points.clear();
        for (const auto& [x, a] : acc) s.points.push_back({x, a.first / a.second});
        c.series.push_back(s);
      }
      const fs::path p = out_dir / (pair.first + "__" + pair.second + "__" + col + ".svg");
      write_text(p, render_svg(c, stamp));
      files.push_back(p);
    }
  }
  return files;
}

}  // namespace fdlab::plot
