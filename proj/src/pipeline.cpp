// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

#include "raterbayes/error.hpp"
#include "raterbayes/io.hpp"
#include "raterbayes/netpbm.hpp"
#include "raterbayes/rng.hpp"
#include "raterbayes/svg.hpp"

namespace raterbayes {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kMaskFormat = "raterbayes-masks";
constexpr const char* kEvalFormat = "raterbayes-eval";
constexpr const char* kMeasureFormat = "raterbayes-measure";
constexpr int kVersion = 1;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string display(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f ± %.3f", m.mean, m.std);
  return buf;
}

json mean_std_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}, {"n", m.n}}; }

MeanStd mean_std_from(const json& j) {
  return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("n").get<std::size_t>()};
}

json dice_json(const DiceSummary& d) {
  return {{"values", d.values}, {"mean", d.mean}, {"std", d.std}};
}

DiceSummary dice_from(const json& j) {
  return {j.at("values").get<std::vector<double>>(), j.at("mean").get<double>(),
          j.at("std").get<double>()};
}

void check_format(const json& j, const char* format, const std::string& where) {
  if (!j.is_object() || j.value("format", "") != format) {
    throw DataError(where + ": not a " + std::string(format) + " file");
  }
  if (j.value("version", 0) != kVersion) {
    throw DataError(where + ": unsupported version " + j.value("version", json()).dump());
  }
}

json parse_json_file(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// JSON reports of one kind in a directory, in file-name order.
std::vector<std::pair<fs::path, json>> collect(const fs::path& dir, const char* format) {
  std::vector<std::pair<fs::path, json>> out;
  if (dir.empty() || !fs::is_directory(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    json j = parse_json_file(f);
    if (j.is_object() && j.value("format", "") == format) {
      check_format(j, format, f.string());
      out.emplace_back(f, std::move(j));
    }
  }
  return out;
}

std::string file_safe(std::string s) {
  for (char& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) c = '_';
  }
  return s;
}

} // namespace

// ---- mask sets ------------------------------------------------------------

MaskEnsemble ImageMasks::structure(std::size_t s, EnsembleSource source) const {
  MaskEnsemble e;
  e.source = source;
  e.image_id = id;
  for (const auto& m : members) {
    if (s >= m.size()) throw DataError("image " + id + ": missing structure " + std::to_string(s));
    e.masks.push_back(m[s]);
  }
  return e;
}

std::size_t MaskSet::structure_index(const std::string& s) const {
  const auto it = std::find(structures.begin(), structures.end(), s);
  if (it == structures.end()) throw DataError("mask set '" + name + "' has no structure '" + s + "'");
  return static_cast<std::size_t>(it - structures.begin());
}

void save_mask_set(const fs::path& dir, const MaskSet& set) {
  json images = json::array();
  for (const auto& img : set.images) {
    json masks = json::array();
    for (std::size_t k = 0; k < img.members.size(); ++k) {
      if (img.members[k].size() != set.structures.size()) {
        throw DimensionError("image " + img.id + ": member " + std::to_string(k) +
                             " has the wrong number of structures");
      }
      json entry = json::object();
      for (std::size_t s = 0; s < set.structures.size(); ++s) {
        char name[64];
        std::snprintf(name, sizeof name, "m%02zu_", k);
        const std::string rel = img.id + "/" + name + set.structures[s] + ".pbm";
        write_pbm(dir / rel, img.members[k][s]);
        entry[set.structures[s]] = rel;
      }
      masks.push_back(std::move(entry));
    }
    images.push_back({{"id", img.id}, {"masks", std::move(masks)}});
  }
  const json index = {{"format", kMaskFormat},
                      {"version", kVersion},
                      {"source", to_string(set.source)},
                      {"name", set.name},
                      {"structures", set.structures},
                      {"height", set.height},
                      {"width", set.width},
                      {"images", std::move(images)}};
  write_file_atomic(dir / "index.json", index.dump(2) + "\n");
}

MaskSet load_mask_set(const fs::path& dir) {
  const fs::path index_path = dir / "index.json";
  const json j = parse_json_file(index_path);
  check_format(j, kMaskFormat, index_path.string());
  MaskSet set;
  try {
    set.source = parse_ensemble_source(j.at("source").get<std::string>());
    set.name = j.at("name").get<std::string>();
    set.structures = j.at("structures").get<std::vector<std::string>>();
    set.height = j.at("height").get<std::size_t>();
    set.width = j.at("width").get<std::size_t>();
    for (const auto& ji : j.at("images")) {
      ImageMasks img;
      img.id = ji.at("id").get<std::string>();
      for (const auto& jm : ji.at("masks")) {
        std::vector<Mask> member;
        for (const auto& s : set.structures) {
          const auto rel = jm.at(s).get<std::string>();
          Mask m = read_mask(dir / rel);
          if (m.h != set.height || m.w != set.width) {
            throw DimensionError(rel + ": " + std::to_string(m.h) + "x" + std::to_string(m.w) +
                                 ", index says " + std::to_string(set.height) + "x" +
                                 std::to_string(set.width));
          }
          member.push_back(std::move(m));
        }
        img.members.push_back(std::move(member));
      }
      if (img.members.empty()) throw DataError("image " + img.id + ": no masks");
      set.images.push_back(std::move(img));
    }
  } catch (const json::exception& e) {
    throw DataError(index_path.string() + ": " + e.what());
  }
  return set;
}

MaskSet rater_mask_set(const MultiRaterDataset& data, Split split) {
  MaskSet set;
  set.source = EnsembleSource::raters;
  set.name = "raters";
  set.structures = data.manifest.structures;
  set.height = data.manifest.height;
  set.width = data.manifest.width;
  for (std::size_t i : data.require_split(split)) {
    const auto& c = data.cases[i];
    ImageMasks img;
    img.id = c.id;
    for (const auto& a : c.annotations) img.members.push_back(a.structures);
    set.images.push_back(std::move(img));
  }
  return set;
}

MaskSet predictive_mask_set(const PosteriorModel& posterior, const MultiRaterDataset& data,
                            Split split, const SamplerConfig& cfg) {
  MaskSet set;
  set.source = EnsembleSource::predictive;
  set.name = to_string(posterior.scheme);
  set.structures = data.manifest.structures;
  set.height = data.manifest.height;
  set.width = data.manifest.width;
  const auto cases = data.require_split(split);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    SamplerConfig image_cfg = cfg;
    image_cfg.seed = Rng::derive(cfg.seed, i).next_u64();
    const auto maps = sample_predictive(posterior, stack_images(data, {cases[i]}), image_cfg);
    ImageMasks img;
    img.id = data.cases[cases[i]].id;
    for (const auto& p : maps) {
      std::vector<Mask> member;
      for (std::size_t s = 0; s < set.structures.size(); ++s) {
        member.push_back(binarize(p, 0, cfg.binarize_threshold, s));
      }
      img.members.push_back(std::move(member));
    }
    set.images.push_back(std::move(img));
  }
  return set;
}

// ---- evaluation -----------------------------------------------------------

EvalReport evaluate(const MaskSet& samples, const MultiRaterDataset& data) {
  if (samples.structures != data.manifest.structures) {
    throw DataError("mask set '" + samples.name + "' structures do not match the dataset");
  }
  if (samples.images.empty()) throw DataError("mask set '" + samples.name + "' has no images");
  EvalReport r;
  r.name = samples.name;
  r.source = samples.source;
  r.structures = samples.structures;
  const std::size_t S = r.structures.size();
  std::vector<double> geds, sample_stds, rater_stds;
  std::vector<std::vector<double>> by_structure(S);
  for (const auto& img : samples.images) {
    const MultiRaterCase* c = data.find(img.id);
    if (c == nullptr) throw DataError("image '" + img.id + "' is not in the dataset");
    const auto consensus = case_consensus(*c);
    ImageEval ie;
    ie.id = img.id;
    std::vector<double> per_structure;
    for (std::size_t s = 0; s < S; ++s) {
      StructureEval se;
      se.structure = r.structures[s];
      const auto pred = img.structure(s, samples.source);
      const auto raters = c->structure_ensemble(s);
      se.ged = ged(pred, raters);
      se.sample_dice = dice_distribution(pred, consensus[s]);
      se.rater_dice = dice_distribution(raters, consensus[s]);
      per_structure.push_back(se.ged.ged);
      by_structure[s].push_back(se.ged.ged);
      sample_stds.push_back(se.sample_dice.std);
      rater_stds.push_back(se.rater_dice.std);
      ie.structures.push_back(std::move(se));
    }
    ie.ged = exact_mean(per_structure);
    geds.push_back(ie.ged);
    r.images.push_back(std::move(ie));
  }
  r.ged = summarize(geds);
  for (const auto& v : by_structure) r.ged_by_structure.push_back(summarize(v));
  r.sample_dice_std = summarize(sample_stds);
  r.rater_dice_std = summarize(rater_stds);
  return r;
}

json EvalReport::to_json() const {
  json imgs = json::array();
  for (const auto& ie : images) {
    json ss = json::array();
    for (const auto& se : ie.structures) {
      ss.push_back({{"structure", se.structure},
                    {"ged", se.ged.ged},
                    {"d_cross", se.ged.d_cross},
                    {"d_pred", se.ged.d_pred},
                    {"d_raters", se.ged.d_raters},
                    {"ged_distinct", se.ged.ged_distinct},
                    {"d_pred_distinct", se.ged.d_pred_distinct},
                    {"d_raters_distinct", se.ged.d_raters_distinct},
                    {"samples", se.ged.samples},
                    {"raters", se.ged.raters},
                    {"sample_dice", dice_json(se.sample_dice)},
                    {"rater_dice", dice_json(se.rater_dice)}});
    }
    imgs.push_back({{"id", ie.id}, {"ged", ie.ged}, {"structures", std::move(ss)}});
  }
  json by_s = json::object();
  for (std::size_t s = 0; s < structures.size(); ++s) {
    by_s[structures[s]] = mean_std_json(ged_by_structure[s]);
  }
  return {{"format", kEvalFormat},
          {"version", kVersion},
          {"name", name},
          {"source", to_string(source)},
          {"structures", structures},
          {"aggregate",
           {{"ged", mean_std_json(ged)},
            {"ged_display", display(ged)},
            {"ged_by_structure", std::move(by_s)},
            {"sample_dice_std", mean_std_json(sample_dice_std)},
            {"rater_dice_std", mean_std_json(rater_dice_std)}}},
          {"images", std::move(imgs)}};
}

EvalReport EvalReport::from_json(const json& j) {
  check_format(j, kEvalFormat, "evaluation report");
  EvalReport r;
  try {
    r.name = j.at("name").get<std::string>();
    r.source = parse_ensemble_source(j.at("source").get<std::string>());
    r.structures = j.at("structures").get<std::vector<std::string>>();
    const auto& a = j.at("aggregate");
    r.ged = mean_std_from(a.at("ged"));
    for (const auto& s : r.structures) r.ged_by_structure.push_back(mean_std_from(a.at("ged_by_structure").at(s)));
    r.sample_dice_std = mean_std_from(a.at("sample_dice_std"));
    r.rater_dice_std = mean_std_from(a.at("rater_dice_std"));
    for (const auto& ji : j.at("images")) {
      ImageEval ie;
      ie.id = ji.at("id").get<std::string>();
      ie.ged = ji.at("ged").get<double>();
      for (const auto& js : ji.at("structures")) {
        StructureEval se;
        se.structure = js.at("structure").get<std::string>();
        se.ged.ged = js.at("ged").get<double>();
        se.ged.d_cross = js.at("d_cross").get<double>();
        se.ged.d_pred = js.at("d_pred").get<double>();
        se.ged.d_raters = js.at("d_raters").get<double>();
        se.ged.ged_distinct = js.at("ged_distinct").get<double>();
        se.ged.d_pred_distinct = js.at("d_pred_distinct").get<double>();
        se.ged.d_raters_distinct = js.at("d_raters_distinct").get<double>();
        se.ged.samples = js.at("samples").get<std::size_t>();
        se.ged.raters = js.at("raters").get<std::size_t>();
        se.sample_dice = dice_from(js.at("sample_dice"));
        se.rater_dice = dice_from(js.at("rater_dice"));
        ie.structures.push_back(std::move(se));
      }
      r.images.push_back(std::move(ie));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("evaluation report: ") + e.what());
  }
  return r;
}

std::string EvalReport::to_csv() const {
  std::string out =
      "image,structure,ged,d_cross,d_pred,d_raters,sample_dice_mean,sample_dice_std,"
      "rater_dice_mean,rater_dice_std\n";
  for (const auto& ie : images) {
    for (const auto& se : ie.structures) {
      out += ie.id + "," + se.structure + "," + fmt(se.ged.ged) + "," + fmt(se.ged.d_cross) + "," +
             fmt(se.ged.d_pred) + "," + fmt(se.ged.d_raters) + "," + fmt(se.sample_dice.mean) + "," +
             fmt(se.sample_dice.std) + "," + fmt(se.rater_dice.mean) + "," + fmt(se.rater_dice.std) +
             "\n";
    }
  }
  out += "mean,all," + fmt(ged.mean) + ",,,,," + fmt(sample_dice_std.mean) + ",," +
         fmt(rater_dice_std.mean) + "\n";
  out += "std,all," + fmt(ged.std) + ",,,,," + fmt(sample_dice_std.std) + ",," +
         fmt(rater_dice_std.std) + "\n";
  return out;
}

// ---- measurement ----------------------------------------------------------

MeasureReport measure(const MaskSet& set, const ReportConfig& cfg) {
  cfg.validate();
  const std::size_t eem = set.structure_index("eem");
  const std::size_t lumen = set.structure_index("lumen");
  MeasureReport r;
  r.name = set.name;
  r.source = set.source;
  r.mm2_per_pixel = cfg.mm2_per_pixel;
  r.burden_percent = cfg.burden_percent;
  for (const auto& img : set.images) {
    std::vector<VesselMaskPair> pairs;
    for (const auto& m : img.members) pairs.push_back({m[lumen], m[eem]});
    try {
      r.images.push_back({img.id, measure_ensemble(pairs)});
    } catch (const MeasurementError& e) {
      throw MeasurementError("image " + img.id + ": " + e.what());
    }
  }
  return r;
}

namespace {

double unit_scale(const MeasureReport& r, const std::string& quantity) {
  if (quantity == "burden") return r.burden_percent ? 100.0 : 1.0;
  if (quantity == "lumen" || quantity == "eem") return r.mm2_per_pixel.value_or(1.0);
  throw UsageError("unknown measurement '" + quantity + "'");
}

std::string unit_name(const MeasureReport& r, const std::string& quantity) {
  if (quantity == "burden") return r.burden_percent ? "percent" : "fraction";
  return r.mm2_per_pixel ? "mm2" : "pixels";
}

const MeanStd& pick(const MeasurementDistribution& d, const std::string& quantity) {
  if (quantity == "lumen") return d.lumen;
  if (quantity == "eem") return d.eem;
  return d.burden;
}

const char* const kQuantities[] = {"lumen", "eem", "burden"};

} // namespace

std::vector<double> MeasureReport::stds(const std::string& quantity) const {
  const double k = unit_scale(*this, quantity);
  std::vector<double> out;
  for (const auto& im : images) out.push_back(pick(im.dist, quantity).std * k);
  return out;
}

json MeasureReport::to_json() const {
  json imgs = json::array();
  for (const auto& im : images) {
    const auto& d = im.dist;
    json q = json::object();
    for (const char* name : kQuantities) {
      const double k = unit_scale(*this, name);
      const auto& ms = pick(d, name);
      q[name] = {{"mean", ms.mean * k}, {"std", ms.std * k}};
    }
    imgs.push_back({{"id", im.id},
                    {"n", d.n},
                    {"excluded", d.excluded},
                    {"clipped_pixels", d.clipped_pixels},
                    {"report", std::move(q)},
                    {"lumen_areas", d.lumen_areas},
                    {"eem_areas", d.eem_areas},
                    {"burdens", d.burdens},
                    {"warnings", d.warnings}});
  }
  json units = json::object();
  for (const char* name : kQuantities) units[name] = unit_name(*this, name);
  return {{"format", kMeasureFormat},
          {"version", kVersion},
          {"name", name},
          {"source", to_string(source)},
          {"mm2_per_pixel", mm2_per_pixel ? json(*mm2_per_pixel) : json()},
          {"burden_percent", burden_percent},
          {"units", std::move(units)},
          {"images", std::move(imgs)}};
}

MeasureReport MeasureReport::from_json(const json& j) {
  check_format(j, kMeasureFormat, "measurement report");
  MeasureReport r;
  try {
    r.name = j.at("name").get<std::string>();
    r.source = parse_ensemble_source(j.at("source").get<std::string>());
    if (!j.at("mm2_per_pixel").is_null()) r.mm2_per_pixel = j.at("mm2_per_pixel").get<double>();
    r.burden_percent = j.at("burden_percent").get<bool>();
    for (const auto& ji : j.at("images")) {
      MeasurementDistribution d;
      d.n = ji.at("n").get<std::size_t>();
      d.excluded = ji.at("excluded").get<std::size_t>();
      d.clipped_pixels = ji.at("clipped_pixels").get<std::size_t>();
      d.lumen_areas = ji.at("lumen_areas").get<std::vector<double>>();
      d.eem_areas = ji.at("eem_areas").get<std::vector<double>>();
      d.burdens = ji.at("burdens").get<std::vector<double>>();
      d.warnings = ji.at("warnings").get<std::vector<std::string>>();
      // Summaries are recomputed from the raw samples, in pixel units.
      d.lumen = summarize(d.lumen_areas);
      d.eem = summarize(d.eem_areas);
      d.burden = summarize(d.burdens);
      r.images.push_back({ji.at("id").get<std::string>(), std::move(d)});
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("measurement report: ") + e.what());
  }
  return r;
}

std::string MeasureReport::to_csv() const {
  std::string out = "image,quantity,unit,mean,std,n,excluded,clipped_pixels\n";
  for (const auto& im : images) {
    for (const char* q : kQuantities) {
      const double k = unit_scale(*this, q);
      const auto& ms = pick(im.dist, q);
      out += im.id + "," + q + "," + unit_name(*this, q) + "," + fmt(ms.mean * k) + "," +
             fmt(ms.std * k) + "," + std::to_string(im.dist.n) + "," +
             std::to_string(im.dist.excluded) + "," + std::to_string(im.dist.clipped_pixels) + "\n";
    }
  }
  return out;
}

// ---- commands -------------------------------------------------------------

DatasetManifest cmd_generate(const RunConfig& cfg, const fs::path& dataset_dir) {
  auto manifest = generate_dataset(cfg.data, dataset_dir);
  archive_config(cfg, dataset_dir);
  return manifest;
}

TrainedPosterior cmd_train(const RunConfig& cfg, const fs::path& manifest, const fs::path& model_dir,
                           const TrainProgress& progress) {
  const auto data = load_dataset(manifest);
  auto trained = train(data, cfg.model, cfg.train, progress);
  save_posterior(model_dir, trained);
  archive_config(cfg, model_dir);
  return trained;
}

MaskSet cmd_sample(const RunConfig& cfg, const fs::path& model_dir, const fs::path& manifest,
                   Split split, const fs::path& out_dir) {
  const auto posterior = load_posterior(model_dir);
  const auto data = load_dataset(manifest);
  if (posterior.config().num_classes != data.num_classes()) {
    throw DataError("model in " + model_dir.string() + " predicts " +
                    std::to_string(posterior.config().num_classes) + " classes, dataset has " +
                    std::to_string(data.num_classes()));
  }
  auto set = predictive_mask_set(posterior, data, split, cfg.sampler);
  save_mask_set(out_dir, set);
  archive_config(cfg, out_dir);
  return set;
}

MaskSet cmd_export_raters(const RunConfig& cfg, const fs::path& manifest, Split split,
                          const fs::path& out_dir) {
  const auto data = load_dataset(manifest);
  auto set = rater_mask_set(data, split);
  save_mask_set(out_dir, set);
  archive_config(cfg, out_dir);
  return set;
}

EvalReport cmd_evaluate(const RunConfig& cfg, const fs::path& sample_dir, const fs::path& manifest,
                        const fs::path& out_dir) {
  const auto set = load_mask_set(sample_dir);
  const auto data = load_dataset(manifest);
  auto report = evaluate(set, data);
  const std::string base = file_safe(report.name);
  write_file_atomic(out_dir / (base + ".csv"), report.to_csv());
  write_file_atomic(out_dir / (base + ".json"), report.to_json().dump(2) + "\n");
  archive_config(cfg, out_dir);
  return report;
}

MeasureReport cmd_measure(const RunConfig& cfg, const fs::path& sample_dir, const fs::path& out_dir) {
  const auto set = load_mask_set(sample_dir);
  auto report = measure(set, cfg.report);
  const std::string base = file_safe(report.name);
  write_file_atomic(out_dir / (base + ".csv"), report.to_csv());
  write_file_atomic(out_dir / (base + ".json"), report.to_json().dump(2) + "\n");
  archive_config(cfg, out_dir);
  return report;
}

ReportSummary cmd_report(const RunConfig& cfg, const fs::path& eval_dir, const fs::path& measure_dir,
                         const fs::path& out_dir) {
  std::vector<EvalReport> evals;
  for (const auto& [path, j] : collect(eval_dir, kEvalFormat)) evals.push_back(EvalReport::from_json(j));
  std::vector<MeasureReport> measures;
  for (const auto& [path, j] : collect(measure_dir, kMeasureFormat)) {
    measures.push_back(MeasureReport::from_json(j));
  }
  if (evals.empty() && measures.empty()) {
    throw DataError("nothing to report: no evaluation or measurement JSON in " + eval_dir.string() +
                    " or " + measure_dir.string());
  }
  // Re-apply the configured units so the plots follow the current config.
  for (auto& m : measures) {
    m.mm2_per_pixel = cfg.report.mm2_per_pixel;
    m.burden_percent = cfg.report.burden_percent;
  }

  ReportSummary out;
  json summary = {{"format", "raterbayes-report"}, {"version", kVersion}};

  // Machine-readable summaries first.
  json jevals = json::object();
  std::string ged_csv = "name,ged_mean,ged_std,images,sample_dice_std_mean,rater_dice_std_mean\n";
  for (const auto& e : evals) {
    json by_s = json::object();
    for (std::size_t s = 0; s < e.structures.size(); ++s) {
      by_s[e.structures[s]] = mean_std_json(e.ged_by_structure[s]);
    }
    jevals[e.name] = {{"ged", mean_std_json(e.ged)},
                      {"ged_display", display(e.ged)},
                      {"ged_by_structure", std::move(by_s)},
                      {"sample_dice_std", mean_std_json(e.sample_dice_std)},
                      {"rater_dice_std", mean_std_json(e.rater_dice_std)}};
    ged_csv += e.name + "," + fmt(e.ged.mean) + "," + fmt(e.ged.std) + "," +
               std::to_string(e.ged.n) + "," + fmt(e.sample_dice_std.mean) + "," +
               fmt(e.rater_dice_std.mean) + "\n";
  }
  summary["evaluations"] = std::move(jevals);

  const MeasureReport* raters = nullptr;
  for (const auto& m : measures) {
    if (m.source == EnsembleSource::raters) raters = &m;
  }
  json jmeas = json::object();
  for (const auto& m : measures) {
    json q = json::object();
    for (const char* name : kQuantities) {
      const auto s = m.stds(name);
      q[name] = {{"std_mean", exact_mean(s)}, {"std_std", sample_std(s)}, {"unit", unit_name(m, name)}};
      if (raters != nullptr && &m != raters) {
        q[name]["overlap_with_raters"] =
            overlap_coefficient(s, raters->stds(name), cfg.report.histogram_bins);
      }
    }
    jmeas[m.name] = {{"source", to_string(m.source)}, {"images", m.images.size()}, {"stds", std::move(q)}};
  }
  summary["measurements"] = std::move(jmeas);

  if (!evals.empty()) {
    write_file_atomic(out_dir / "ged_summary.csv", ged_csv);
    out.files.push_back("ged_summary.csv");
  }
  write_file_atomic(out_dir / "report.json", summary.dump(2) + "\n");
  out.files.push_back("report.json");

  // Dice of each ensemble against the rater consensus, one plot per structure.
  if (!evals.empty()) {
    for (std::size_t s = 0; s < evals.front().structures.size(); ++s) {
      const std::string& structure = evals.front().structures[s];
      std::vector<Series> series;
      for (const auto& e : evals) {
        for (const auto& ie : e.images) {
          if (s >= ie.structures.size() || ie.structures[s].structure != structure) {
            throw DataError("evaluation '" + e.name + "' does not cover structure '" + structure + "'");
          }
        }
        // A rater set evaluated against itself repeats the rater series below.
        if (e.source == EnsembleSource::raters) continue;
        Series ser{e.name, {}};
        for (const auto& ie : e.images) {
          const auto& v = ie.structures[s].sample_dice.values;
          ser.values.insert(ser.values.end(), v.begin(), v.end());
        }
        series.push_back(std::move(ser));
      }
      Series rater_series{"raters", {}};
      for (const auto& ie : evals.front().images) {
        const auto& rv = ie.structures[s].rater_dice.values;
        rater_series.values.insert(rater_series.values.end(), rv.begin(), rv.end());
      }
      series.push_back(std::move(rater_series));
      const std::string file = "dice_boxplot_" + file_safe(structure) + ".svg";
      write_file_atomic(out_dir / file,
                        svg_box_plot("Dice against rater consensus: " + structure,
                                     "Dice coefficient", series));
      out.files.push_back(file);
    }
  }

  // Per-image measurement standard deviations, one plot per quantity.
  if (!measures.empty()) {
    for (const char* name : kQuantities) {
      std::vector<Series> series;
      for (const auto& m : measures) series.push_back({m.name, m.stds(name)});
      const std::string file = std::string("measurement_std_") + name + ".svg";
      write_file_atomic(out_dir / file,
                        svg_histograms(std::string("Per-image std of ") + name,
                                       std::string("std of ") + name + " (" +
                                           unit_name(measures.front(), name) + ")",
                                       series, cfg.report.histogram_bins));
      out.files.push_back(file);
    }
  }

  archive_config(cfg, out_dir);
  summary["files"] = out.files;
  out.summary = std::move(summary);
  return out;
}

} // namespace raterbayes
