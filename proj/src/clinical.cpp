// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/clinical.hpp"

#include <algorithm>
#include <cmath>

#include "raterbayes/error.hpp"

namespace raterbayes {

double area(const Mask& mask) { return static_cast<double>(mask.count()); }

double plaque_burden(double eem_area, double lumen_area) {
  if (!std::isfinite(eem_area) || !std::isfinite(lumen_area)) {
    throw MeasurementError("plaque burden: non-finite area");
  }
  if (eem_area <= 0.0) throw MeasurementError("plaque burden: EEM area is zero");
  const double lumen = std::clamp(lumen_area, 0.0, eem_area);
  return (eem_area - lumen) / eem_area;
}

ValidatedPair validate_pair(const VesselMaskPair& pair) {
  require_same_shape(pair.lumen, pair.eem, "vessel pair");
  ValidatedPair out{pair, 0, {}};
  auto& lumen = out.pair.lumen.px;
  const auto& eem = pair.eem.px;
  std::size_t inside = 0;
  for (std::size_t i = 0; i < lumen.size(); ++i) {
    if (lumen[i] && !eem[i]) {
      lumen[i] = 0;
      ++out.clipped;
    }
    inside += lumen[i];
  }
  if (out.clipped > 0 && inside == 0) {
    out.warnings.push_back("lumen lies entirely outside the EEM; effective lumen is empty");
  }
  return out;
}

MeasurementDistribution measure_ensemble(const std::vector<VesselMaskPair>& pairs) {
  if (pairs.empty()) throw MeasurementError("measure_ensemble: no samples");
  MeasurementDistribution d;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto v = validate_pair(pairs[i]);
    const double eem = area(v.pair.eem);
    if (eem == 0.0) {
      ++d.excluded;
      d.warnings.push_back("sample " + std::to_string(i) + ": empty EEM, excluded");
      continue;
    }
    const double lumen = area(v.pair.lumen);
    d.lumen_areas.push_back(lumen);
    d.eem_areas.push_back(eem);
    d.burdens.push_back(plaque_burden(eem, lumen));
    d.clipped_pixels += v.clipped;
    for (auto& w : v.warnings) d.warnings.push_back("sample " + std::to_string(i) + ": " + w);
  }
  if (d.lumen_areas.empty()) {
    throw MeasurementError("measure_ensemble: every sample has an empty EEM");
  }
  d.n = d.lumen_areas.size();
  d.lumen = summarize(d.lumen_areas);
  d.eem = summarize(d.eem_areas);
  d.burden = summarize(d.burdens);
  return d;
}

} // namespace raterbayes
