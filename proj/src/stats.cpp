// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/stats.hpp"

#include <algorithm>
#include <cmath>

#include "raterbayes/error.hpp"

namespace raterbayes {

double exact_sum(std::span<const double> values) {
  std::vector<double> partials;
  partials.reserve(8);
  for (double x : values) {
    if (!std::isfinite(x)) throw NumericError("exact_sum: non-finite term");
    std::size_t i = 0;
    for (double y : partials) {
      if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }

  // Round the partials to nearest, ties to even.
  std::size_t n = partials.size();
  if (n == 0) return 0.0;
  double hi = partials[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials[--n];
    hi = x + y;
    const double yr = hi - x;
    lo = y - yr;
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    const double yr = x - hi;
    if (y == yr) hi = x;
  }
  return hi;
}

double exact_mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return exact_sum(values) / static_cast<double>(values.size());
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double mean = exact_mean(values);
  std::vector<double> sq;
  sq.reserve(values.size());
  for (double v : values) sq.push_back((v - mean) * (v - mean));
  return std::sqrt(exact_sum(sq) / static_cast<double>(values.size() - 1));
}

MeanStd summarize(std::span<const double> values) {
  return {exact_mean(values), sample_std(values), values.size()};
}

double overlap_coefficient(std::span<const double> a, std::span<const double> b,
                           std::size_t bins) {
  if (a.empty() || b.empty()) throw UsageError("overlap_coefficient: empty sample");
  if (bins == 0) throw UsageError("overlap_coefficient: zero bins");
  const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
  const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
  const double lo = std::min(*amin, *bmin);
  const double hi = std::max(*amax, *bmax);
  if (hi == lo) return 1.0;
  const double width = (hi - lo) / static_cast<double>(bins);

  auto histogram = [&](std::span<const double> xs) {
    std::vector<double> h(bins, 0.0);
    for (double x : xs) {
      auto k = static_cast<std::size_t>((x - lo) / width);
      h[std::min(k, bins - 1)] += 1.0 / static_cast<double>(xs.size());
    }
    return h;
  };
  const auto ha = histogram(a);
  const auto hb = histogram(b);
  double ovl = 0.0;
  for (std::size_t k = 0; k < bins; ++k) ovl += std::min(ha[k], hb[k]);
  return ovl;
}

} // namespace raterbayes
