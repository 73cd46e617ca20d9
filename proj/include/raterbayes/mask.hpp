// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace raterbayes {

/// Binary H x W mask, row-major, values in {0, 1}.
struct Mask {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> px;

  Mask() = default;
  Mask(std::size_t h_, std::size_t w_) : h(h_), w(w_), px(h_ * w_, 0) {}
  /// Throws DataError unless px has h*w entries, all 0 or 1.
  Mask(std::size_t h_, std::size_t w_, std::vector<std::uint8_t> values);

  std::uint8_t at(std::size_t y, std::size_t x) const { return px[y * w + x]; }
  void set(std::size_t y, std::size_t x, bool on) { px[y * w + x] = on ? 1 : 0; }
  std::size_t count() const;
  bool same_shape(const Mask& o) const { return h == o.h && w == o.w; }
  bool operator==(const Mask&) const = default;
};

/// Throws DimensionError naming `op` when the shapes differ.
void require_same_shape(const Mask& a, const Mask& b, const char* op);

enum class EnsembleSource { predictive, raters };

std::string to_string(EnsembleSource s);
EnsembleSource parse_ensemble_source(const std::string& s);

/// A set of masks over one image: predictive samples or rater annotations.
struct MaskEnsemble {
  std::vector<Mask> masks;
  EnsembleSource source = EnsembleSource::predictive;
  std::string image_id;

  std::size_t size() const { return masks.size(); }
  /// Throws DimensionError if masks disagree in shape, DataError if any
  /// value is not binary.
  void validate() const;
};

} // namespace raterbayes
