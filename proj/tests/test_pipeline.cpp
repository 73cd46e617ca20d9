// SPDX-License-Identifier: Apache-2.0
#include <map>

#include "doctest.h"
#include "raterbayes/error.hpp"
#include "raterbayes/io.hpp"
#include "raterbayes/pipeline.hpp"
#include "raterbayes/rng.hpp"
#include "raterbayes/svg.hpp"
#include "raterbayes/synth.hpp"
#include "scratch_dir.hpp"

using namespace raterbayes;
using raterbayes::testing::ScratchDir;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

RunConfig small_run(std::uint64_t seed = 5) {
  RunConfig c;
  c.seed = seed;
  c.data.size = 32;
  c.data.num_raters = 3;
  c.data.train = 2;
  c.data.validation = 1;
  c.data.test = 3;
  c.model.depth = 2;
  c.model.base_channels = 4;
  c.model.head_features = 8;
  c.sampler.samples = 3;
  c.resolve();
  return c;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

PosteriorModel untrained(const RunConfig& cfg) {
  Rng rng(cfg.seed);
  PosteriorModel p;
  p.scheme = Scheme::mc_dropout;
  p.models.push_back(UNetModel::build(cfg.model, rng));
  return p;
}

} // namespace

TEST_CASE("run config: round trip and seed propagation") {
  RunConfig c = small_run(42);
  c.report.mm2_per_pixel = 0.01;
  c.train.strategy = SamplingStrategy::parse("per_expert:1");
  const json j = c.to_json();
  CHECK_FALSE(j.at("data").contains("seed"));
  CHECK_FALSE(j.at("train").contains("seed"));
  RunConfig back = RunConfig::from_json(j);
  back.resolve();
  CHECK(back.to_json() == j);
  CHECK(back.data.seed == 42);
  CHECK(back.train.seed == 42);
  CHECK(back.sampler.seed == 42);
  CHECK(back.model.num_classes == 3);

  c.data.task = PhantomTask::blob;
  c.resolve();
  CHECK(c.model.num_classes == 2);
}

TEST_CASE("run config: unknown keys and bad values are config errors") {
  const json base = small_run().to_json();
  for (const char* section : {"", "data", "model", "train", "sampler", "report"}) {
    json j = base;
    (std::string(section).empty() ? j : j[section])["colour"] = "blue";
    CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);
  }
  json j = base;
  j["data"]["seed"] = 3;
  CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);
  j = base;
  j["train"]["seed"] = 3;
  CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);
  j = base;
  j["model"]["num_classes"] = 4;
  CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);
  j = base;
  j["model"]["depth"] = "three";
  CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);
  j = base;
  j["report"]["mm2_per_pixel"] = -1.0;
  RunConfig bad = RunConfig::from_json(j);
  CHECK_THROWS_AS(bad.resolve(), ConfigError);

  RunConfig c = small_run();
  c.model.depth = 6;  // 32 is not divisible by 64
  CHECK_THROWS_AS(c.resolve(), ConfigError);
}

TEST_CASE("run config: file loading") {
  ScratchDir dir("runcfg");
  write_file_atomic(dir.path() / "ok.json", R"({"seed": 9, "data": {"size": 32}})");
  const RunConfig c = load_run_config(dir.path() / "ok.json");
  CHECK(c.data.seed == 9);
  CHECK(c.data.size == 32);
  write_file_atomic(dir.path() / "broken.json", "{\"seed\": ");
  CHECK_THROWS_AS(load_run_config(dir.path() / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_run_config(dir.path() / "absent.json"), IoError);

  archive_config(c, dir.path() / "out");
  const auto archived = json::parse(read_file(dir.path() / "out" / "config.resolved.json"));
  CHECK(archived == c.to_json());
}

TEST_CASE("mask sets: round trip and validation") {
  ScratchDir dir("maskset");
  const RunConfig cfg = small_run();
  generate_dataset(cfg.data, dir.path() / "data");
  const auto data = load_dataset(dir.path() / "data" / "manifest.json");
  const MaskSet set = rater_mask_set(data, Split::test);
  REQUIRE(set.images.size() == 3);
  CHECK(set.images[0].members.size() == 3);
  CHECK(set.structure_index("lumen") == 1);
  CHECK_THROWS_AS(set.structure_index("plaque"), DataError);

  save_mask_set(dir.path() / "set", set);
  const MaskSet back = load_mask_set(dir.path() / "set");
  CHECK(back.source == EnsembleSource::raters);
  CHECK(back.name == "raters");
  CHECK(back.structures == set.structures);
  REQUIRE(back.images.size() == set.images.size());
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    CHECK(back.images[i].id == set.images[i].id);
    CHECK(back.images[i].members == set.images[i].members);
  }

  // The index governs the extents.
  auto index = json::parse(read_file(dir.path() / "set" / "index.json"));
  index["width"] = 16;
  write_file_atomic(dir.path() / "set" / "index.json", index.dump());
  CHECK_THROWS_AS(load_mask_set(dir.path() / "set"), DimensionError);
  index["width"] = 32;
  index["format"] = "something-else";
  write_file_atomic(dir.path() / "set" / "index.json", index.dump());
  CHECK_THROWS_AS(load_mask_set(dir.path() / "set"), DataError);
  CHECK_THROWS_AS(load_mask_set(dir.path() / "nowhere"), IoError);
}

TEST_CASE("predictive mask set: image i uses the derived seed") {
  ScratchDir dir("predset");
  RunConfig cfg = small_run();
  generate_dataset(cfg.data, dir.path() / "data");
  const auto data = load_dataset(dir.path() / "data" / "manifest.json");
  const auto posterior = untrained(cfg);
  const MaskSet set = predictive_mask_set(posterior, data, Split::test, cfg.sampler);
  REQUIRE(set.images.size() == 3);
  CHECK(set.source == EnsembleSource::predictive);
  CHECK(set.name == "mc_dropout");

  const auto cases = data.indices(Split::test);
  SamplerConfig one = cfg.sampler;
  one.seed = Rng::derive(cfg.sampler.seed, 2).next_u64();
  const auto maps = sample_predictive(posterior, stack_images(data, {cases[2]}), one);
  REQUIRE(maps.size() == set.images[2].members.size());
  for (std::size_t t = 0; t < maps.size(); ++t) {
    for (std::size_t s = 0; s < 2; ++s) {
      CHECK(set.images[2].members[t][s] == binarize(maps[t], 0, one.binarize_threshold, s));
    }
  }
}

TEST_CASE("evaluate: raters as samples give zero GED") {
  ScratchDir dir("evalraters");
  const RunConfig cfg = small_run();
  cmd_generate(cfg, dir.path() / "data");
  const fs::path manifest = dir.path() / "data" / "manifest.json";
  cmd_export_raters(cfg, manifest, Split::test, dir.path() / "raters");
  const EvalReport r = cmd_evaluate(cfg, dir.path() / "raters", manifest, dir.path() / "eval");
  CHECK(r.source == EnsembleSource::raters);
  CHECK(r.images.size() == 3);
  CHECK(std::abs(r.ged.mean) <= 1e-12);
  CHECK(std::abs(r.ged.std) <= 1e-12);
  for (const auto& ie : r.images) {
    for (const auto& se : ie.structures) {
      CHECK(std::abs(se.ged.ged) <= 1e-12);
      CHECK(se.sample_dice.values == se.rater_dice.values);
    }
  }
  CHECK(r.sample_dice_std.mean == r.rater_dice_std.mean);
  CHECK(fs::exists(dir.path() / "eval" / "raters.csv"));
  CHECK(fs::exists(dir.path() / "eval" / "config.resolved.json"));

  // JSON is lossless.
  const auto j = json::parse(read_file(dir.path() / "eval" / "raters.json"));
  CHECK(EvalReport::from_json(j).to_json() == j);
  CHECK(j.at("aggregate").at("ged_display") == "0.000 ± 0.000");
}

TEST_CASE("evaluate: samples must match the dataset") {
  ScratchDir dir("evalmismatch");
  const RunConfig cfg = small_run();
  generate_dataset(cfg.data, dir.path() / "data");
  const auto data = load_dataset(dir.path() / "data" / "manifest.json");
  MaskSet set = rater_mask_set(data, Split::test);
  set.images[1].id = "case9999";
  CHECK_THROWS_AS(evaluate(set, data), DataError);
  set = rater_mask_set(data, Split::test);
  set.structures = {"lumen", "eem"};
  CHECK_THROWS_AS(evaluate(set, data), DataError);
  set = rater_mask_set(data, Split::test);
  for (auto& img : set.images) img.members.resize(1);
  CHECK_THROWS_AS(evaluate(set, data), UsageError);  // GED needs two masks
}

TEST_CASE("measure: noiseless raters have zero spread") {
  ScratchDir dir("measure0");
  RunConfig cfg = small_run();
  cfg.data.rater_bias = 0.0;
  cfg.data.rater_jitter = 0.0;
  cfg.resolve();
  generate_dataset(cfg.data, dir.path() / "data");
  const auto data = load_dataset(dir.path() / "data" / "manifest.json");
  const MeasureReport r = measure(rater_mask_set(data, Split::test), cfg.report);
  REQUIRE(r.images.size() == 3);
  for (const char* q : {"lumen", "eem", "burden"}) {
    for (double s : r.stds(q)) CHECK(s == 0.0);
  }
  for (const auto& im : r.images) {
    CHECK(im.dist.n == 3);
    CHECK(im.dist.lumen.mean > 0.0);
    CHECK(im.dist.burden.mean > 0.0);
    CHECK(im.dist.burden.mean < 1.0);
  }
}

TEST_CASE("measure: units and requirements") {
  ScratchDir dir("measureunits");
  RunConfig cfg = small_run();
  generate_dataset(cfg.data, dir.path() / "data");
  const auto data = load_dataset(dir.path() / "data" / "manifest.json");
  const MaskSet set = rater_mask_set(data, Split::test);
  const MeasureReport px = measure(set, cfg.report);
  ReportConfig scaled;
  scaled.mm2_per_pixel = 0.25;
  scaled.burden_percent = true;
  const MeasureReport mm = measure(set, scaled);
  const auto a = px.stds("lumen"), b = mm.stds("lumen");
  const auto c = px.stds("burden"), d = mm.stds("burden");
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(b[i] == a[i] * 0.25);
    CHECK(d[i] == c[i] * 100.0);
  }
  CHECK_THROWS_AS(px.stds("plaque"), UsageError);
  const json j = mm.to_json();
  CHECK(MeasureReport::from_json(j).to_json() == j);
  CHECK(j.at("units").at("lumen") == "mm2");
  CHECK(j.at("units").at("burden") == "percent");

  RunConfig blob = small_run();
  blob.data.task = PhantomTask::blob;
  blob.resolve();
  generate_dataset(blob.data, dir.path() / "blob");
  const auto bdata = load_dataset(dir.path() / "blob" / "manifest.json");
  CHECK_THROWS_AS(measure(rater_mask_set(bdata, Split::test), blob.report), DataError);
}

TEST_CASE("commands are idempotent and leave their inputs alone") {
  ScratchDir dir("idem");
  const RunConfig cfg = small_run();
  cmd_generate(cfg, dir.path() / "data");
  const fs::path manifest = dir.path() / "data" / "manifest.json";
  const auto data = load_dataset(manifest);
  TrainedPosterior trained{untrained(cfg), {TrainHistory{}}};
  save_posterior(dir.path() / "model", trained);

  const auto data_before = read_tree(dir.path() / "data");
  const auto model_before = read_tree(dir.path() / "model");
  std::map<std::string, std::string> first;
  for (int pass = 0; pass < 2; ++pass) {
    const fs::path out = dir.path() / "out";
    cmd_sample(cfg, dir.path() / "model", manifest, Split::test, out / "samples" / "mc_dropout");
    cmd_export_raters(cfg, manifest, Split::test, out / "samples" / "raters");
    for (const char* s : {"mc_dropout", "raters"}) {
      cmd_evaluate(cfg, out / "samples" / s, manifest, out / "eval");
      cmd_measure(cfg, out / "samples" / s, out / "measure");
    }
    cmd_report(cfg, out / "eval", out / "measure", out / "report");
    const auto tree = read_tree(out);
    if (pass == 0) {
      first = tree;
      fs::remove_all(out);
    } else {
      CHECK(tree == first);
    }
  }
  CHECK(read_tree(dir.path() / "data") == data_before);
  CHECK(read_tree(dir.path() / "model") == model_before);
  CHECK(first.count("report/report.json") == 1);
  CHECK(first.count("report/dice_boxplot_lumen.svg") == 1);
  CHECK(first.count("report/measurement_std_lumen.svg") == 1);
  CHECK(first.count("samples/mc_dropout/index.json") == 1);

  const auto summary = json::parse(first.at("report/report.json"));
  CHECK(summary.at("evaluations").contains("mc_dropout"));
  CHECK(summary.at("measurements").at("mc_dropout").at("stds").at("lumen").contains("overlap_with_raters"));
}

TEST_CASE("report: nothing to report is a data error") {
  ScratchDir dir("emptyreport");
  CHECK_THROWS_AS(cmd_report(small_run(), dir.path() / "eval", dir.path() / "measure", dir.path() / "r"),
                  DataError);
}

TEST_CASE("box stats: interpolated quartiles and fences") {
  const BoxStats b = box_stats({9, 1, 8, 2, 7, 3, 6, 4, 5});
  CHECK(b.min == 1);
  CHECK(b.max == 9);
  CHECK(b.q1 == 3);
  CHECK(b.median == 5);
  CHECK(b.q3 == 7);
  CHECK(b.outliers.empty());
  CHECK(b.whisker_lo == 1);
  CHECK(b.whisker_hi == 9);

  // Sorted positions (n - 1) q = 2.25, 4.5, 6.75.
  const BoxStats o = box_stats({1, 2, 3, 4, 5, 6, 7, 8, 9, 100});
  CHECK(o.q1 == doctest::Approx(3.25));
  CHECK(o.median == doctest::Approx(5.5));
  CHECK(o.q3 == doctest::Approx(7.75));
  REQUIRE(o.outliers.size() == 1);
  CHECK(o.outliers[0] == 100);
  CHECK(o.whisker_hi == 9);

  const BoxStats single = box_stats({0.5});
  CHECK(single.q1 == 0.5);
  CHECK(single.q3 == 0.5);
  CHECK_THROWS_AS(box_stats({}), DataError);
}

TEST_CASE("svg: deterministic, data table embedded, well-formed comment") {
  const std::vector<Series> series = {{"deep--ensemble", {0.91, 0.88, 0.93}}, {"raters", {0.9, 0.95}}};
  const std::string a = svg_box_plot("Dice", "score", series);
  CHECK(a == svg_box_plot("Dice", "score", series));
  CHECK(a.find("raters: 0.9 0.95") != std::string::npos);
  CHECK(a.find("deep- -ensemble: 0.91 0.88 0.93") != std::string::npos);
  const auto body = a.substr(a.find("<!--") + 4, a.find("-->") - a.find("<!--") - 4);
  CHECK(body.find("--") == std::string::npos);
  CHECK(a.find("<svg") != std::string::npos);
  CHECK(a.substr(a.size() - 7) == "</svg>\n");

  const std::string h = svg_histograms("stds", "pixels", series, 4);
  CHECK(h == svg_histograms("stds", "pixels", series, 4));
  CHECK(h.find("<path") != std::string::npos);
  CHECK_THROWS_AS(svg_histograms("x", "y", {{"empty", {}}}, 4), DataError);
  CHECK_THROWS_AS(svg_histograms("x", "y", series, 0), ConfigError);
  CHECK_THROWS_AS(svg_box_plot("x", "y", {}), DataError);
  // Constant data still yields a finite axis.
  const std::string flat = svg_box_plot("flat", "y", {{"a", {1.0, 1.0}}});
  CHECK(flat.find("nan") == std::string::npos);
  CHECK(flat.find("inf") == std::string::npos);
}
