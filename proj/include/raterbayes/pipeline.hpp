// SPDX-License-Identifier: Apache-2.0
//
// Pipeline commands behind the CLI verbs. Each reads its inputs, writes its
// outputs atomically under the given directory (plus the resolved config)
// and returns what it wrote.
//
// Mask sets are the interchange format between sampling, evaluation and
// measurement. Model samples and rater annotations use the same layout, so
// both flow through one code path:
//
//   <dir>/index.json  { "format": "raterbayes-masks", "version": 1,
//                       "source": "predictive" | "raters", "name",
//                       "structures": [...], "height", "width",
//                       "images": [ { "id", "masks": [ { structure: path } ] } ] }
//   <dir>/<id>/m<k>_<structure>.pbm
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "raterbayes/clinical.hpp"
#include "raterbayes/dataset.hpp"
#include "raterbayes/mask.hpp"
#include "raterbayes/metrics.hpp"
#include "raterbayes/run_config.hpp"

namespace raterbayes {

// ---- mask sets ------------------------------------------------------------

struct ImageMasks {
  std::string id;
  std::vector<std::vector<Mask>> members;  // [member][structure]

  MaskEnsemble structure(std::size_t s, EnsembleSource source) const;
};

struct MaskSet {
  EnsembleSource source = EnsembleSource::predictive;
  std::string name;  // scheme, or "raters"
  std::vector<std::string> structures;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<ImageMasks> images;

  std::size_t structure_index(const std::string& s) const;  // DataError if absent
};

void save_mask_set(const std::filesystem::path& dir, const MaskSet& set);
/// DataError on schema violations, missing files or extent mismatches.
MaskSet load_mask_set(const std::filesystem::path& dir);

/// Rater annotations of the split as a mask set.
MaskSet rater_mask_set(const MultiRaterDataset& data, Split split);

/// Binarized predictive samples of every image of the split. Image i of the
/// split uses sampler seed Rng::derive(cfg.seed, i).
MaskSet predictive_mask_set(const PosteriorModel& posterior, const MultiRaterDataset& data,
                            Split split, const SamplerConfig& cfg);

// ---- evaluation -----------------------------------------------------------

struct StructureEval {
  std::string structure;
  GedReport ged;
  DiceSummary sample_dice;  // predictive masks vs rater consensus
  DiceSummary rater_dice;   // rater masks vs their own consensus
};

struct ImageEval {
  std::string id;
  std::vector<StructureEval> structures;
  double ged = 0.0;  // mean over structures
};

struct EvalReport {
  std::string name;
  EnsembleSource source = EnsembleSource::predictive;
  std::vector<std::string> structures;
  std::vector<ImageEval> images;
  MeanStd ged;                      // over images
  std::vector<MeanStd> ged_by_structure;
  MeanStd sample_dice_std;          // per-image std of sample Dice, over images and structures
  MeanStd rater_dice_std;

  nlohmann::json to_json() const;
  std::string to_csv() const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// GED and Dice distributions of `samples` against the dataset's raters.
/// DataError when images or structures do not match the dataset.
EvalReport evaluate(const MaskSet& samples, const MultiRaterDataset& data);

// ---- measurement ----------------------------------------------------------

struct ImageMeasure {
  std::string id;
  MeasurementDistribution dist;
};

struct MeasureReport {
  std::string name;
  EnsembleSource source = EnsembleSource::predictive;
  std::vector<ImageMeasure> images;
  std::optional<double> mm2_per_pixel;
  bool burden_percent = false;

  /// Per-image standard deviations of one quantity ("lumen", "eem",
  /// "burden") in report units.
  std::vector<double> stds(const std::string& quantity) const;
  nlohmann::json to_json() const;
  std::string to_csv() const;
  static MeasureReport from_json(const nlohmann::json& j);
};

/// Lumen, EEM and burden distributions per image. The set needs "eem" and
/// "lumen" structures (DataError otherwise).
MeasureReport measure(const MaskSet& set, const ReportConfig& cfg);

// ---- commands -------------------------------------------------------------

/// Dataset under `dataset_dir`.
DatasetManifest cmd_generate(const RunConfig& cfg, const std::filesystem::path& dataset_dir);

/// Trains cfg.train.scheme on the dataset and saves the posterior.
TrainedPosterior cmd_train(const RunConfig& cfg, const std::filesystem::path& manifest,
                           const std::filesystem::path& model_dir,
                           const TrainProgress& progress = {});

/// Predictive mask set of the split under `out_dir`.
MaskSet cmd_sample(const RunConfig& cfg, const std::filesystem::path& model_dir,
                   const std::filesystem::path& manifest, Split split,
                   const std::filesystem::path& out_dir);

/// Rater annotations of the split exported as a mask set.
MaskSet cmd_export_raters(const RunConfig& cfg, const std::filesystem::path& manifest, Split split,
                          const std::filesystem::path& out_dir);

/// <out_dir>/<name>.csv and .json.
EvalReport cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& sample_dir,
                        const std::filesystem::path& manifest, const std::filesystem::path& out_dir);

/// <out_dir>/<name>.csv and .json.
MeasureReport cmd_measure(const RunConfig& cfg, const std::filesystem::path& sample_dir,
                          const std::filesystem::path& out_dir);

struct ReportSummary {
  std::vector<std::string> files;  // written, relative to the report dir
  nlohmann::json summary;
};

/// Plots and a summary from every evaluation and measurement JSON found in
/// eval_dir and measure_dir.
ReportSummary cmd_report(const RunConfig& cfg, const std::filesystem::path& eval_dir,
                         const std::filesystem::path& measure_dir,
                         const std::filesystem::path& out_dir);

} // namespace raterbayes
