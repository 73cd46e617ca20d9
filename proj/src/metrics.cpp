// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/metrics.hpp"

#include <bit>
#include <cstdint>

#include "raterbayes/error.hpp"
#include "raterbayes/stats.hpp"

namespace raterbayes {

namespace {

struct Overlap {
  std::size_t a = 0, b = 0, both = 0;
};

Overlap overlap(const Mask& a, const Mask& b, const char* op) {
  require_same_shape(a, b, op);
  Overlap o;
  for (std::size_t i = 0; i < a.px.size(); ++i) {
    o.a += a.px[i];
    o.b += b.px[i];
    o.both += a.px[i] & b.px[i];
  }
  return o;
}

// Masks packed 64 pixels per word for the all-pairs loops.
struct PackedMask {
  std::vector<std::uint64_t> words;
  std::size_t count = 0;
};

PackedMask pack(const Mask& m) {
  PackedMask p;
  p.words.assign((m.px.size() + 63) / 64, 0);
  for (std::size_t i = 0; i < m.px.size(); ++i) {
    if (m.px[i]) p.words[i / 64] |= std::uint64_t{1} << (i % 64);
  }
  p.count = m.count();
  return p;
}

double packed_distance(const PackedMask& a, const PackedMask& b) {
  std::size_t both = 0;
  for (std::size_t w = 0; w < a.words.size(); ++w) {
    both += static_cast<std::size_t>(std::popcount(a.words[w] & b.words[w]));
  }
  const std::size_t uni = a.count + b.count - both;
  if (uni == 0) return 0.0;
  return 1.0 - static_cast<double>(both) / static_cast<double>(uni);
}

std::vector<PackedMask> pack_all(const MaskEnsemble& e) {
  std::vector<PackedMask> out;
  out.reserve(e.size());
  for (const auto& m : e.masks) out.push_back(pack(m));
  return out;
}

struct WithinSet {
  double all = 0.0;
  double distinct = 0.0;
};

WithinSet within(const std::vector<PackedMask>& set) {
  const std::size_t n = set.size();
  std::vector<double> all, distinct;
  all.reserve(n * n);
  distinct.reserve(n * (n - 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = packed_distance(set[i], set[j]);
      all.push_back(d);
      if (i != j) distinct.push_back(d);
    }
  }
  return {exact_mean(all), exact_mean(distinct)};
}

} // namespace

double dice(const Mask& a, const Mask& b) {
  const auto o = overlap(a, b, "dice");
  if (o.a + o.b == 0) return 1.0;
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
}

double iou(const Mask& a, const Mask& b) {
  const auto o = overlap(a, b, "iou");
  const std::size_t uni = o.a + o.b - o.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.both) / static_cast<double>(uni);
}

double iou_distance(const Mask& a, const Mask& b) { return 1.0 - iou(a, b); }

GedReport ged(const MaskEnsemble& samples, const MaskEnsemble& raters) {
  if (samples.size() < 2 || raters.size() < 2) {
    throw UsageError("ged: need at least two samples and two rater masks (got " +
                     std::to_string(samples.size()) + " and " + std::to_string(raters.size()) +
                     ")");
  }
  samples.validate();
  raters.validate();
  require_same_shape(samples.masks.front(), raters.masks.front(), "ged");

  const auto s = pack_all(samples);
  const auto y = pack_all(raters);
  std::vector<double> cross;
  cross.reserve(s.size() * y.size());
  for (const auto& a : s)
    for (const auto& b : y) cross.push_back(packed_distance(a, b));

  GedReport r;
  r.samples = s.size();
  r.raters = y.size();
  r.d_cross = exact_mean(cross);
  const auto ws = within(s);
  const auto wy = within(y);
  r.d_pred = ws.all;
  r.d_raters = wy.all;
  r.d_pred_distinct = ws.distinct;
  r.d_raters_distinct = wy.distinct;
  r.ged = 2.0 * r.d_cross - r.d_pred - r.d_raters;
  r.ged_distinct = 2.0 * r.d_cross - r.d_pred_distinct - r.d_raters_distinct;
  return r;
}

DiceSummary dice_distribution(const MaskEnsemble& masks, const Mask& reference) {
  if (masks.size() == 0) throw UsageError("dice_distribution: empty ensemble");
  DiceSummary out;
  for (const auto& m : masks.masks) out.values.push_back(dice(m, reference));
  out.mean = exact_mean(out.values);
  out.std = sample_std(out.values);
  return out;
}

} // namespace raterbayes
