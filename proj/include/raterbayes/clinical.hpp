// SPDX-License-Identifier: Apache-2.0
//
// Lumen area, EEM area and plaque burden over mask ensembles. Areas are raw
// pixel counts; burden is a fraction in [0, 1].
#pragma once

#include <string>
#include <vector>

#include "raterbayes/mask.hpp"
#include "raterbayes/stats.hpp"

namespace raterbayes {

/// Foreground pixel count.
double area(const Mask& mask);

/// (eem - lumen) / eem with lumen clamped to [0, eem]. MeasurementError when
/// eem_area <= 0.
double plaque_burden(double eem_area, double lumen_area);

struct VesselMaskPair {
  Mask lumen;
  Mask eem;
};

struct ValidatedPair {
  VesselMaskPair pair;          // lumen clipped to the EEM
  std::size_t clipped = 0;      // lumen pixels outside the EEM
  std::vector<std::string> warnings;
};

/// DimensionError when the two masks differ in shape.
ValidatedPair validate_pair(const VesselMaskPair& pair);

struct MeasurementDistribution {
  MeanStd lumen;
  MeanStd eem;
  MeanStd burden;
  std::size_t n = 0;               // samples measured
  std::size_t excluded = 0;        // samples dropped for an empty EEM
  std::size_t clipped_pixels = 0;  // summed over measured samples
  std::vector<double> lumen_areas;
  std::vector<double> eem_areas;
  std::vector<double> burdens;
  std::vector<std::string> warnings;
};

/// Per-sample measurements and their mean and (n-1) standard deviation.
/// Samples with an empty EEM are excluded and counted; MeasurementError if
/// nothing remains.
MeasurementDistribution measure_ensemble(const std::vector<VesselMaskPair>& pairs);

} // namespace raterbayes
