// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-rater phantoms. A vessel phantom has two nested structures
// (eem, lumen) on an ultrasound-like image; a blob phantom has one. Each rater
// redraws the true boundary with a fixed radial offset plus smooth angular
// jitter, so raters disagree coherently along the contour.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "raterbayes/dataset.hpp"
#include "raterbayes/mask.hpp"
#include "raterbayes/netpbm.hpp"
#include "raterbayes/rng.hpp"

namespace raterbayes {

enum class PhantomTask { vessel, blob };

std::string to_string(PhantomTask t);
/// ConfigError for unknown names.
PhantomTask parse_phantom_task(const std::string& s);
/// Structure names, outermost first.
std::vector<std::string> phantom_structures(PhantomTask t);

/// Star-shaped contour around (cx, cy):
///   r(theta) = r0 + sum_k a_k cos(k theta) + b_k sin(k theta),  k = 1..n
/// clamped at zero. Coordinates are in pixels with pixel (y, x) centred at
/// (x + 0.5, y + 0.5).
struct RadialShape {
  double cx = 0.0;
  double cy = 0.0;
  double r0 = 1.0;
  std::vector<std::array<double, 2>> harmonics;  // {a_k, b_k}

  double radius(double theta) const;
  nlohmann::json to_json() const;
  static RadialShape from_json(const nlohmann::json& j);
};

/// Foreground iff the pixel centre lies inside the contour.
Mask render_radial_mask(const RadialShape& shape, std::size_t h, std::size_t w);

/// Foreground iff the pixel centre lies inside the ellipse with semi-axes
/// (axes[0], axes[1]) rotated by `rotation` radians. ConfigError unless both
/// axes are positive.
Mask render_ellipse_mask(std::array<double, 2> center, std::array<double, 2> axes,
                         double rotation, std::size_t size);

/// Order of the angular jitter series.
inline constexpr std::size_t kJitterOrder = 4;

/// A rater's redrawing of `truth`: the radius shifted by `offset` and jittered
/// by a random Fourier series of orders 1..kJitterOrder with equal variance per
/// order, so the perturbation at any angle has standard deviation `jitter`.
RadialShape rater_contour(const RadialShape& truth, double offset, double jitter, Rng& rng);

struct PhantomConfig {
  std::size_t size = 64;
  PhantomTask task = PhantomTask::vessel;
  std::size_t num_raters = 4;
  std::size_t repeats_per_rater = 1;
  double rater_bias = 1.0;  // raters get offsets spread evenly over [-bias, bias]
  std::vector<double> rater_offsets;  // explicit signed offsets; overrides rater_bias
  double rater_jitter = 0.75;
  double noise = 0.25;  // std of the multiplicative speckle
  std::size_t train = 40;
  std::size_t validation = 8;
  std::size_t test = 20;
  std::uint64_t seed = 0;

  /// ConfigError on violation.
  void validate() const;
  /// Radial offset of each rater.
  std::vector<double> offsets() const;
  std::size_t num_cases() const { return train + validation + test; }
  Split split_of(std::size_t case_index) const;

  nlohmann::json to_json() const;
  /// Missing keys keep defaults; unknown keys are a ConfigError.
  static PhantomConfig from_json(const nlohmann::json& j);
};

struct PhantomCase {
  std::string id;
  Split split = Split::train;
  GrayImage image;
  std::vector<RadialShape> truth;  // per structure
  std::vector<Annotation> annotations;
};

/// Case `index` of the dataset described by cfg. Pure function of (cfg, index).
PhantomCase generate_case(const PhantomConfig& cfg, std::size_t index);

/// True structure masks of a case, inner structures clipped to the outer.
std::vector<Mask> truth_masks(const PhantomCase& c);

/// Writes images, annotations and manifest.json under `root`. IoError when
/// the directory cannot be written.
DatasetManifest generate_dataset(const PhantomConfig& cfg, const std::filesystem::path& root);

} // namespace raterbayes
