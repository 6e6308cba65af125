#pragma once

#include "tightfit/common.hpp"

#include <algorithm>
#include <cstdio>

namespace tightfit::svg {

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Frame {
  double width = 480, height = 320, margin = 48;
  double x0, x1, y0, y1;
  double px(double x) const { return margin + (x - x0) / (x1 - x0) * (width - 2 * margin); }
  double py(double y) const { return height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin); }
};

inline std::string open(const Frame& f, const std::string& title, const std::string& xlabel, const std::string& ylabel) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(f.width) + "\" height=\"" + num(f.height) +
                  "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(f.width / 2) + "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" + escape(title) + "</text>\n";
  s += "<line x1=\"" + num(f.margin) + "\" y1=\"" + num(f.height - f.margin) + "\" x2=\"" + num(f.width - f.margin) +
       "\" y2=\"" + num(f.height - f.margin) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(f.margin) + "\" y1=\"" + num(f.margin) + "\" x2=\"" + num(f.margin) + "\" y2=\"" +
       num(f.height - f.margin) + "\" stroke=\"black\"/>\n";
  s += "<text x=\"" + num(f.width / 2) + "\" y=\"" + num(f.height - 12) + "\" text-anchor=\"middle\">" + escape(xlabel) + "</text>\n";
  s += "<text x=\"14\" y=\"" + num(f.height / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
       num(f.height / 2) + ")\">" + escape(ylabel) + "</text>\n";
  for (double t : {0.0, 0.5, 1.0}) {
    const double xv = f.x0 + t * (f.x1 - f.x0), yv = f.y0 + t * (f.y1 - f.y0);
    s += "<text x=\"" + num(f.px(xv)) + "\" y=\"" + num(f.height - f.margin + 14) + "\" text-anchor=\"middle\">" + num(xv) + "</text>\n";
    s += "<text x=\"" + num(f.margin - 4) + "\" y=\"" + num(f.py(yv) + 4) + "\" text-anchor=\"end\">" + num(yv) + "</text>\n";
  }
  return s;
}

}  // namespace detail

/// Polyline plot of y against its index.
inline std::string line_plot(const std::vector<double>& y, const std::string& title, const std::string& xlabel,
                             const std::string& ylabel) {
  detail::Frame f;
  f.x0 = 0;
  f.x1 = std::max<double>(1, static_cast<double>(y.size()) - 1);
  f.y0 = y.empty() ? 0 : *std::min_element(y.begin(), y.end());
  f.y1 = y.empty() ? 1 : *std::max_element(y.begin(), y.end());
  if (!(f.y1 > f.y0)) f.y1 = f.y0 + 1;
  std::string s = detail::open(f, title, xlabel, ylabel);
  s += "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
  for (size_t i = 0; i < y.size(); ++i) s += detail::num(f.px(static_cast<double>(i))) + "," + detail::num(f.py(y[i])) + " ";
  s += "\"/>\n</svg>\n";
  return s;
}

/// Histogram with `bins` equal-width bins over [min, max] of the values.
inline std::string histogram(const std::vector<double>& values, int bins, const std::string& title,
                             const std::string& xlabel) {
  TIGHTFIT_CHECK(bins >= 1, "histogram needs at least one bin");
  detail::Frame f;
  f.x0 = values.empty() ? 0 : *std::min_element(values.begin(), values.end());
  f.x1 = values.empty() ? 1 : *std::max_element(values.begin(), values.end());
  if (!(f.x1 > f.x0)) f.x1 = f.x0 + 1;
  std::vector<int> counts(static_cast<size_t>(bins), 0);
  for (double v : values) {
    const int b = std::clamp(static_cast<int>((v - f.x0) / (f.x1 - f.x0) * bins), 0, bins - 1);
    ++counts[static_cast<size_t>(b)];
  }
  f.y0 = 0;
  f.y1 = std::max(1, *std::max_element(counts.begin(), counts.end()));
  std::string s = detail::open(f, title, xlabel, "count");
  const double bw = (f.x1 - f.x0) / bins;
  for (int b = 0; b < bins; ++b) {
    const double left = f.px(f.x0 + b * bw), right = f.px(f.x0 + (b + 1) * bw);
    const double top = f.py(counts[static_cast<size_t>(b)]), base = f.py(0);
    s += "<rect x=\"" + detail::num(left) + "\" y=\"" + detail::num(top) + "\" width=\"" +
         detail::num(std::max(0.0, right - left - 1)) + "\" height=\"" + detail::num(base - top) +
         "\" fill=\"steelblue\"/>\n";
  }
  return s + "</svg>\n";
}

}  // namespace tightfit::svg
