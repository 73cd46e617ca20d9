// SPDX-License-Identifier: Apache-2.0
//
// raterbayes: generate | train | sample | evaluate | measure | report
//
// Default layout under --out (overridable per verb):
//   dataset/                    generate
//   models/<scheme>/            train
//   samples/<scheme>/           sample
//   samples/raters/             sample --raters
//   eval/<name>.{csv,json}      evaluate
//   measure/<name>.{csv,json}   measure
//   report/                     report
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "raterbayes/error.hpp"
#include "raterbayes/io.hpp"
#include "raterbayes/pipeline.hpp"
#include "raterbayes/runtime.hpp"

namespace fs = std::filesystem;
using namespace raterbayes;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string scheme;
  std::string strategy;
  std::string dataset;
  std::string split = "test";
  bool quiet = false;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg;
  if (!g.config.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(g.config));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(g.config + ": " + e.what());
    }
    cfg = RunConfig::from_json(j);
  }
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.output_dir = g.out;
  if (!g.scheme.empty()) cfg.train.scheme = parse_scheme(g.scheme);
  if (!g.strategy.empty()) cfg.train.strategy = SamplingStrategy::parse(g.strategy);
  if (const char* env = std::getenv("RATERBAYES_THREADS")) {
    char* end = nullptr;
    const unsigned long cap = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0' || cap == 0) {
      throw ConfigError("RATERBAYES_THREADS must be a positive integer, got '" + std::string(env) + "'");
    }
    cfg.train.threads = std::min<std::size_t>(cfg.train.threads, cap);
  }
  cfg.resolve();
  return cfg;
}

fs::path manifest_path(const Globals& g, const RunConfig& cfg) {
  const fs::path d = g.dataset.empty() ? cfg.output_dir / "dataset" : fs::path(g.dataset);
  return fs::is_directory(d) ? d / "manifest.json" : d;
}

// Every mask set under <out>/samples, or the explicit list.
std::vector<fs::path> sample_dirs(const std::vector<std::string>& given, const RunConfig& cfg) {
  std::vector<fs::path> dirs(given.begin(), given.end());
  if (!dirs.empty()) return dirs;
  const fs::path root = cfg.output_dir / "samples";
  if (fs::is_directory(root)) {
    for (const auto& e : fs::directory_iterator(root)) {
      if (fs::exists(e.path() / "index.json")) dirs.push_back(e.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError("no mask sets under " + root.string() + "; run 'sample' first");
  return dirs;
}

} // namespace

int main(int argc, char** argv) {
  configure_allocator();

  CLI::App app{"Multi-rater Bayesian segmentation pipeline on synthetic phantoms"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for data, training and sampling");
  app.add_option("--out", g.out, "Output root directory");
  app.add_option("--scheme", g.scheme, "neural_linear | mc_dropout | deep_ensemble | deterministic");
  app.add_option("--strategy", g.strategy, "per_expert:N | per_member | all_experts | consensus");
  app.add_option("--dataset", g.dataset, "Dataset directory or manifest (default <out>/dataset)");
  app.add_option("--split", g.split, "Split to sample or export (train | validation | test)");
  app.add_flag("--quiet", g.quiet, "No progress output");

  auto* generate = app.add_subcommand("generate", "Write the synthetic multi-rater dataset");

  std::string model_dir;
  auto* train = app.add_subcommand("train", "Train the configured scheme");
  train->add_option("--models", model_dir, "Model directory (default <out>/models/<scheme>)");

  bool raters = false;
  std::string sample_out;
  auto* sample = app.add_subcommand("sample", "Predictive mask ensembles of a split");
  sample->add_option("--models", model_dir, "Model directory (default <out>/models/<scheme>)");
  sample->add_flag("--raters", raters, "Export the rater annotations instead");
  sample->add_option("--samples", sample_out, "Output mask set directory");

  std::vector<std::string> inputs;
  std::string eval_dir, measure_dir, report_dir;
  auto* evaluate = app.add_subcommand("evaluate", "GED and Dice distributions against the raters");
  evaluate->add_option("--samples", inputs, "Mask set directories (default: all under <out>/samples)");
  evaluate->add_option("--eval", eval_dir, "Output directory (default <out>/eval)");

  auto* measure = app.add_subcommand("measure", "Lumen, EEM and plaque burden distributions");
  measure->add_option("--samples", inputs, "Mask set directories (default: all under <out>/samples)");
  measure->add_option("--measure", measure_dir, "Output directory (default <out>/measure)");

  auto* report = app.add_subcommand("report", "Summary JSON/CSV and SVG plots");
  report->add_option("--eval", eval_dir, "Evaluation directory (default <out>/eval)");
  report->add_option("--measure", measure_dir, "Measurement directory (default <out>/measure)");
  report->add_option("--report", report_dir, "Output directory (default <out>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const RunConfig cfg = resolve_config(g);
    const fs::path out = cfg.output_dir;
    const std::string scheme = to_string(cfg.train.scheme);
    const fs::path models = model_dir.empty() ? out / "models" / scheme : fs::path(model_dir);
    auto log = [&](const std::string& s) {
      if (!g.quiet) std::cerr << s << "\n";
    };

    if (generate->parsed()) {
      const fs::path dir = g.dataset.empty() ? out / "dataset" : fs::path(g.dataset);
      const auto m = cmd_generate(cfg, dir);
      log("wrote " + std::to_string(m.cases.size()) + " cases to " + dir.string());
    } else if (train->parsed()) {
      TrainProgress progress;
      if (!g.quiet) {
        progress = [](std::size_t member, std::size_t epoch, double loss, double val) {
          std::fprintf(stderr, "member %zu epoch %zu loss %.5f val_dice %.4f\n", member, epoch, loss, val);
        };
      }
      const auto t = cmd_train(cfg, manifest_path(g, cfg), models, progress);
      log("saved " + std::to_string(t.posterior.models.size()) + " model(s) to " + models.string());
    } else if (sample->parsed()) {
      const Split split = parse_split(g.split);
      if (raters) {
        const fs::path dir = sample_out.empty() ? out / "samples" / "raters" : fs::path(sample_out);
        const auto s = cmd_export_raters(cfg, manifest_path(g, cfg), split, dir);
        log("exported raters of " + std::to_string(s.images.size()) + " images to " + dir.string());
      } else {
        const fs::path dir = sample_out.empty() ? out / "samples" / scheme : fs::path(sample_out);
        const auto s = cmd_sample(cfg, models, manifest_path(g, cfg), split, dir);
        log("sampled " + std::to_string(s.images.size()) + " images to " + dir.string());
      }
    } else if (evaluate->parsed()) {
      const fs::path dir = eval_dir.empty() ? out / "eval" : fs::path(eval_dir);
      for (const auto& s : sample_dirs(inputs, cfg)) {
        const auto r = cmd_evaluate(cfg, s, manifest_path(g, cfg), dir);
        char line[160];
        std::snprintf(line, sizeof line, "%-14s GED %.4f ± %.4f over %zu images", r.name.c_str(),
                      r.ged.mean, r.ged.std, r.ged.n);
        log(line);
      }
    } else if (measure->parsed()) {
      const fs::path dir = measure_dir.empty() ? out / "measure" : fs::path(measure_dir);
      for (const auto& s : sample_dirs(inputs, cfg)) {
        const auto r = cmd_measure(cfg, s, dir);
        log("measured " + r.name + " (" + std::to_string(r.images.size()) + " images)");
      }
    } else if (report->parsed()) {
      const fs::path dir = report_dir.empty() ? out / "report" : fs::path(report_dir);
      const auto r = cmd_report(cfg, eval_dir.empty() ? out / "eval" : fs::path(eval_dir),
                                measure_dir.empty() ? out / "measure" : fs::path(measure_dir), dir);
      for (const auto& f : r.files) log("wrote " + (dir / f).string());
    }
  } catch (const Error& e) {
    std::cerr << "raterbayes: " << e.kind() << ": " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "raterbayes: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
