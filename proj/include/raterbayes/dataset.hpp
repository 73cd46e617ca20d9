// SPDX-License-Identifier: Apache-2.0
//
// Multi-rater segmentation datasets on disk.
//
//   <root>/manifest.json
//   <root>/images/<case>/image.pgm                      8-bit graymap
//   <root>/annotations/<case>/<structure>_r<rater>.pbm  bitmap per rater
//
// With several annotations per rater the mask files carry a _k<repeat>
// suffix. Structures are listed outermost first and must be nested (for
// vessels: eem, then lumen); class c of the per-pixel label map is the
// number of structures containing the pixel.
//
// Manifest (format "raterbayes-dataset", version 1):
//   { "format", "version", "task", "height", "width",
//     "structures": [names], "num_raters", "generator": {...} | null,
//     "cases": [ { "id", "split": "train" | "validation" | "test",
//                  "image": relative path,
//                  "annotations": [ { "rater", "repeat",
//                                     "masks": { structure: relative path } } ],
//                  "truth": {...} | null } ] }
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "raterbayes/mask.hpp"

namespace raterbayes {

inline constexpr const char* kDatasetFormat = "raterbayes-dataset";
inline constexpr int kDatasetVersion = 1;

enum class Split { train, validation, test };

std::string to_string(Split s);
/// DataError for unknown names.
Split parse_split(const std::string& s);

struct AnnotationEntry {
  std::size_t rater = 0;
  std::size_t repeat = 0;
  std::vector<std::string> masks;  // one relative path per structure, manifest order
};

struct CaseEntry {
  std::string id;
  Split split = Split::train;
  std::string image;
  std::vector<AnnotationEntry> annotations;
  nlohmann::json truth;  // generator ground truth, null for external data
};

struct DatasetManifest {
  std::string task;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::string> structures;
  std::size_t num_raters = 0;
  nlohmann::json generator;
  std::vector<CaseEntry> cases;

  nlohmann::json to_json() const;
  /// DataError on schema violations.
  static DatasetManifest from_json(const nlohmann::json& j);
};

/// One annotation: a mask per structure, manifest order.
struct Annotation {
  std::size_t rater = 0;
  std::size_t repeat = 0;
  std::vector<Mask> structures;
};

struct MultiRaterCase {
  std::string id;
  Split split = Split::train;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> image;  // [0, 1], row-major
  std::vector<Annotation> annotations;
  nlohmann::json truth;

  /// Masks of structure s across all annotations, as an ensemble.
  MaskEnsemble structure_ensemble(std::size_t s) const;
};

struct MultiRaterDataset {
  std::filesystem::path root;
  DatasetManifest manifest;
  std::vector<MultiRaterCase> cases;

  std::size_t num_structures() const { return manifest.structures.size(); }
  std::size_t num_classes() const { return manifest.structures.size() + 1; }
  std::vector<std::size_t> indices(Split split) const;
  /// Like indices() but DataError when the split is empty.
  std::vector<std::size_t> require_split(Split split) const;
  const MultiRaterCase* find(const std::string& id) const;
};

/// Reads the manifest and every referenced file. Errors name the case.
MultiRaterDataset load_dataset(const std::filesystem::path& manifest_path);

/// Per-pixel class ids of nested structure masks: the number of leading
/// structures that contain the pixel (an inner structure only counts inside
/// the outer one).
std::vector<std::int32_t> nested_labels(const std::vector<Mask>& structures);

} // namespace raterbayes
