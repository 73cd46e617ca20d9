// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/mask.hpp"

#include <algorithm>

#include "raterbayes/error.hpp"

namespace raterbayes {

Mask::Mask(std::size_t h_, std::size_t w_, std::vector<std::uint8_t> values)
    : h(h_), w(w_), px(std::move(values)) {
  if (px.size() != h * w) {
    throw DataError("mask: " + std::to_string(px.size()) + " values for " + std::to_string(h) +
                    "x" + std::to_string(w));
  }
  if (std::any_of(px.begin(), px.end(), [](std::uint8_t v) { return v > 1; })) {
    throw DataError("mask: non-binary value");
  }
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(px.begin(), px.end(), std::uint8_t{1}));
}

void require_same_shape(const Mask& a, const Mask& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": mask shapes differ (" + std::to_string(a.h) + "x" +
                         std::to_string(a.w) + " vs " + std::to_string(b.h) + "x" +
                         std::to_string(b.w) + ")");
  }
}

std::string to_string(EnsembleSource s) {
  return s == EnsembleSource::predictive ? "predictive" : "raters";
}

EnsembleSource parse_ensemble_source(const std::string& s) {
  if (s == "predictive") return EnsembleSource::predictive;
  if (s == "raters") return EnsembleSource::raters;
  throw DataError("unknown ensemble source '" + s + "'");
}

void MaskEnsemble::validate() const {
  for (const auto& m : masks) {
    require_same_shape(masks.front(), m, "mask ensemble");
    if (m.px.size() != m.h * m.w) throw DataError("mask ensemble: size mismatch");
    if (std::any_of(m.px.begin(), m.px.end(), [](std::uint8_t v) { return v > 1; })) {
      throw DataError("mask ensemble " + image_id + ": non-binary value");
    }
  }
}

} // namespace raterbayes
