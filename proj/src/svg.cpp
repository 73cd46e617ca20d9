// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "raterbayes/error.hpp"

namespace raterbayes {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;
const char* const kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52",
                                "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
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

// "--" may not appear inside an XML comment.
std::string comment_safe(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '-' && !out.empty() && out.back() == '-') out += ' ';
    out += c;
  }
  return out;
}

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::string header(const std::string& title, const std::vector<Series>& series) {
  std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!-- data\n";
  for (const auto& ser : series) {
    s += comment_safe(ser.label) + ":";
    for (double v : ser.values) s += " " + num(v);
    s += "\n";
  }
  s += "-->\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" +
       num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + px(kWidth / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"15\">" + escape(title) + "</text>\n";
  return s;
}

struct Axis {
  double lo, hi;
  double map(double v, double a, double b) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

Axis axis_for(double lo, double hi) {
  if (!(hi > lo)) {
    const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
    return {lo - pad, hi + pad};
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

std::string y_axis(const Axis& ax, const std::string& label) {
  const double y0 = kHeight - kBottom, y1 = kTop;
  std::string s = "<line x1=\"" + px(kLeft) + "\" y1=\"" + px(y0) + "\" x2=\"" + px(kLeft) +
                  "\" y2=\"" + px(y1) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = ax.lo + (ax.hi - ax.lo) * i / 5.0;
    const double y = ax.map(v, y0, y1);
    s += "<line x1=\"" + px(kLeft - 4) + "\" y1=\"" + px(y) + "\" x2=\"" + px(kLeft) + "\" y2=\"" +
         px(y) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + px(kLeft - 6) + "\" y=\"" + px(y + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + num(v) + "</text>\n";
  }
  s += "<text transform=\"translate(16," + px((y0 + y1) / 2) +
       ") rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
       escape(label) + "</text>\n";
  return s;
}

} // namespace

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw DataError("box_stats: empty series");
  std::sort(values.begin(), values.end());
  BoxStats b;
  b.min = values.front();
  b.max = values.back();
  b.q1 = quantile(values, 0.25);
  b.median = quantile(values, 0.5);
  b.q3 = quantile(values, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo = b.q1 - 1.5 * iqr, hi = b.q3 + 1.5 * iqr;
  b.whisker_lo = b.max;
  b.whisker_hi = b.min;
  for (double v : values) {
    if (v < lo || v > hi) {
      b.outliers.push_back(v);
    } else {
      b.whisker_lo = std::min(b.whisker_lo, v);
      b.whisker_hi = std::max(b.whisker_hi, v);
    }
  }
  return b;
}

std::string svg_box_plot(const std::string& title, const std::string& y_label,
                         const std::vector<Series>& series) {
  if (series.empty()) throw DataError("svg_box_plot: no series");
  double lo = INFINITY, hi = -INFINITY;
  std::vector<BoxStats> stats;
  for (const auto& s : series) {
    stats.push_back(box_stats(s.values));
    lo = std::min(lo, stats.back().min);
    hi = std::max(hi, stats.back().max);
  }
  const Axis ax = axis_for(lo, hi);
  std::string out = header(title, series) + y_axis(ax, y_label);
  const double y0 = kHeight - kBottom, y1 = kTop;
  const double slot = (kWidth - kLeft - kRight) / static_cast<double>(series.size());
  const double half = std::min(40.0, slot * 0.3);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& b = stats[i];
    const double cx = kLeft + slot * (static_cast<double>(i) + 0.5);
    const char* color = kPalette[i % std::size(kPalette)];
    auto y = [&](double v) { return px(ax.map(v, y0, y1)); };
    out += "<g stroke=\"black\">\n";
    out += "<line x1=\"" + px(cx) + "\" y1=\"" + y(b.whisker_lo) + "\" x2=\"" + px(cx) + "\" y2=\"" +
           y(b.q1) + "\"/>\n";
    out += "<line x1=\"" + px(cx) + "\" y1=\"" + y(b.q3) + "\" x2=\"" + px(cx) + "\" y2=\"" +
           y(b.whisker_hi) + "\"/>\n";
    for (double w : {b.whisker_lo, b.whisker_hi}) {
      out += "<line x1=\"" + px(cx - half / 2) + "\" y1=\"" + y(w) + "\" x2=\"" + px(cx + half / 2) +
             "\" y2=\"" + y(w) + "\"/>\n";
    }
    const double top = ax.map(b.q3, y0, y1), bottom = ax.map(b.q1, y0, y1);
    out += "<rect x=\"" + px(cx - half) + "\" y=\"" + px(top) + "\" width=\"" + px(2 * half) +
           "\" height=\"" + px(std::max(bottom - top, 0.5)) + "\" fill=\"" + color +
           "\" fill-opacity=\"0.6\"/>\n";
    out += "<line x1=\"" + px(cx - half) + "\" y1=\"" + y(b.median) + "\" x2=\"" + px(cx + half) +
           "\" y2=\"" + y(b.median) + "\" stroke-width=\"2\"/>\n";
    for (double o : b.outliers) {
      out += "<circle cx=\"" + px(cx) + "\" cy=\"" + y(o) + "\" r=\"2.5\" fill=\"none\"/>\n";
    }
    out += "</g>\n";
    out += "<text x=\"" + px(cx) + "\" y=\"" + px(y0 + 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
           escape(series[i].label) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

std::string svg_histograms(const std::string& title, const std::string& x_label,
                           const std::vector<Series>& series, std::size_t bins) {
  if (series.empty()) throw DataError("svg_histograms: no series");
  if (bins < 1) throw ConfigError("svg_histograms: need at least one bin");
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : series) {
    if (s.values.empty()) throw DataError("svg_histograms: empty series '" + s.label + "'");
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(hi > lo)) hi = lo + 1.0;
  const double width = (hi - lo) / static_cast<double>(bins);

  std::vector<std::vector<double>> density;
  double peak = 0.0;
  for (const auto& s : series) {
    std::vector<double> counts(bins, 0.0);
    for (double v : s.values) {
      const auto b = std::min(bins - 1, static_cast<std::size_t>((v - lo) / width));
      counts[b] += 1.0;
    }
    for (auto& c : counts) {
      c /= static_cast<double>(s.values.size());
      peak = std::max(peak, c);
    }
    density.push_back(std::move(counts));
  }

  const Axis yx{0.0, peak * 1.05};
  const Axis xx{lo, hi};
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::string out = header(title, series) + y_axis(yx, "fraction of images");
  out += "<line x1=\"" + px(x0) + "\" y1=\"" + px(y0) + "\" x2=\"" + px(x1) + "\" y2=\"" + px(y0) +
         "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i <= bins; i += std::max<std::size_t>(1, bins / 5)) {
    const double v = lo + width * static_cast<double>(i);
    const double x = xx.map(v, x0, x1);
    out += "<text x=\"" + px(x) + "\" y=\"" + px(y0 + 16) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + num(v) + "</text>\n";
  }
  out += "<text x=\"" + px((x0 + x1) / 2) + "\" y=\"" + px(kHeight - 14) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + escape(x_label) +
         "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    std::string path = "M " + px(x0) + " " + px(y0);
    for (std::size_t b = 0; b < bins; ++b) {
      const double xa = xx.map(lo + width * static_cast<double>(b), x0, x1);
      const double xb = xx.map(lo + width * static_cast<double>(b + 1), x0, x1);
      const double y = yx.map(density[s][b], y0, y1);
      path += " L " + px(xa) + " " + px(y) + " L " + px(xb) + " " + px(y);
    }
    path += " L " + px(x1) + " " + px(y0);
    out += "<path d=\"" + path + "\" fill=\"" + color + "\" fill-opacity=\"0.25\" stroke=\"" + color +
           "\" stroke-width=\"1.5\"/>\n";
    const double ly = kTop + 14.0 * static_cast<double>(s);
    out += "<rect x=\"" + px(x1 - 150) + "\" y=\"" + px(ly) + "\" width=\"10\" height=\"10\" fill=\"" +
           color + "\"/>\n";
    out += "<text x=\"" + px(x1 - 135) + "\" y=\"" + px(ly + 9) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + escape(series[s].label) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

} // namespace raterbayes
