// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace raterbayes {

/// Correctly rounded sum of the inputs (Shewchuk / msum partials). The
/// result does not depend on the order of the terms, which is what makes
/// ensemble means and all-pairs expectations permutation invariant bit for
/// bit.
double exact_sum(std::span<const double> values);

/// exact_sum(values) / values.size(); 0 for an empty span.
double exact_mean(std::span<const double> values);

/// Unbiased (n-1) standard deviation; 0 when fewer than two values.
double sample_std(std::span<const double> values);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

MeanStd summarize(std::span<const double> values);

/// Histogram overlap coefficient of two samples: sum over shared
/// equal-width bins of min(p_a, p_b), bins spanning the pooled range.
/// Returns 1 when both samples are constant and equal.
double overlap_coefficient(std::span<const double> a, std::span<const double> b,
                           std::size_t bins);

} // namespace raterbayes
