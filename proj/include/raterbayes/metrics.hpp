// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "raterbayes/mask.hpp"

namespace raterbayes {

/// 2|A n B| / (|A| + |B|); 1 when both masks are empty.
double dice(const Mask& a, const Mask& b);

/// |A n B| / |A u B|; 1 when both masks are empty.
double iou(const Mask& a, const Mask& b);

/// 1 - iou(a, b).
double iou_distance(const Mask& a, const Mask& b);

/// Generalized energy distance between predictive samples S and rater
/// masks Y with d = 1 - IoU:
///   ged = 2 E[d(S, Y)] - E[d(S, S')] - E[d(Y, Y')].
/// Every expectation is the exact mean over all ordered pairs of the two
/// finite sets, self-pairs included, so that identical sets give 0. The
/// *_distinct fields repeat the within-set terms over pairs i != j only.
struct GedReport {
  double d_cross = 0.0;
  double d_pred = 0.0;
  double d_raters = 0.0;
  double ged = 0.0;
  double d_pred_distinct = 0.0;
  double d_raters_distinct = 0.0;
  double ged_distinct = 0.0;
  std::size_t samples = 0;  // T
  std::size_t raters = 0;   // R
};

/// UsageError when either set has fewer than two masks.
GedReport ged(const MaskEnsemble& samples, const MaskEnsemble& raters);

struct DiceSummary {
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;  // n - 1 denominator, 0 for a single mask
};

DiceSummary dice_distribution(const MaskEnsemble& masks, const Mask& reference);

} // namespace raterbayes
