// SPDX-License-Identifier: Apache-2.0
//
// Standalone SVG charts. Output depends only on the inputs; the plotted data
// is repeated as a table in a leading comment.
#pragma once

#include <string>
#include <vector>

namespace raterbayes {

struct Series {
  std::string label;
  std::vector<double> values;
};

/// Quartiles by linear interpolation between order statistics.
struct BoxStats {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
  double whisker_lo = 0, whisker_hi = 0;  // furthest points within 1.5 IQR
  std::vector<double> outliers;
};

/// DataError for an empty series.
BoxStats box_stats(std::vector<double> values);

/// One box per series on a shared vertical axis.
std::string svg_box_plot(const std::string& title, const std::string& y_label,
                         const std::vector<Series>& series);

/// Overlaid step histograms with common bins spanning all values.
std::string svg_histograms(const std::string& title, const std::string& x_label,
                           const std::vector<Series>& series, std::size_t bins);

} // namespace raterbayes
