// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/run_config.hpp"

#include <cmath>

#include "raterbayes/error.hpp"
#include "raterbayes/io.hpp"

namespace raterbayes {

using nlohmann::json;

namespace {

void require_object(const json& j, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
}

void reject_seed(const json& j, const std::string& section) {
  if (j.contains("seed")) {
    throw ConfigError(section + ": unknown key 'seed' (use the top-level seed)");
  }
}

} // namespace

void ReportConfig::validate() const {
  if (mm2_per_pixel && (!(*mm2_per_pixel > 0.0) || !std::isfinite(*mm2_per_pixel))) {
    throw ConfigError("report.mm2_per_pixel must be positive");
  }
  if (histogram_bins < 1) throw ConfigError("report.histogram_bins must be at least 1");
}

json unet_config_to_json(const UNetConfig& c) {
  json j = {{"depth", c.depth},
            {"base_channels", c.base_channels},
            {"head_features", c.head_features},
            {"dropout_rate", c.dropout_rate}};
  j["dropout_sites"] = c.dropout_sites ? json(*c.dropout_sites) : json();
  return j;
}

UNetConfig unet_config_from_json(const json& j) {
  require_object(j, "model");
  UNetConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "depth") c.depth = v.get<std::size_t>();
      else if (key == "base_channels") c.base_channels = v.get<std::size_t>();
      else if (key == "head_features") c.head_features = v.get<std::size_t>();
      else if (key == "dropout_rate") c.dropout_rate = v.get<double>();
      else if (key == "dropout_sites") {
        if (v.is_null()) c.dropout_sites.reset();
        else c.dropout_sites = v.get<std::set<std::string>>();
      } else throw ConfigError("model: unknown key '" + key + "'");
    } catch (const json::exception&) {
      throw ConfigError("model: bad value for '" + key + "'");
    }
  }
  return c;
}

json sampler_config_to_json(const SamplerConfig& c) {
  return {{"samples", c.samples},
          {"members", c.members},
          {"binarize_threshold", c.binarize_threshold},
          {"head_sampling", to_string(c.head_sampling)}};
}

SamplerConfig sampler_config_from_json(const json& j) {
  require_object(j, "sampler");
  SamplerConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "samples") c.samples = v.get<std::size_t>();
      else if (key == "members") c.members = v.get<std::size_t>();
      else if (key == "binarize_threshold") c.binarize_threshold = v.get<double>();
      else if (key == "head_sampling") c.head_sampling = parse_head_sampling(v.get<std::string>());
      else throw ConfigError("sampler: unknown key '" + key + "'");
    } catch (const json::exception&) {
      throw ConfigError("sampler: bad value for '" + key + "'");
    }
  }
  return c;
}

void RunConfig::resolve() {
  data.seed = seed;
  train.seed = seed;
  sampler.seed = seed;
  model.num_classes = phantom_structures(data.task).size() + 1;
  model.input_channels = 1;
  data.validate();
  model.validate();
  train.validate();
  sampler.validate();
  report.validate();
  if (data.size % model.spatial_multiple() != 0) {
    throw ConfigError("data.size " + std::to_string(data.size) + " is not divisible by 2^depth = " +
                      std::to_string(model.spatial_multiple()));
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

json RunConfig::to_json() const {
  json d = data.to_json();
  d.erase("seed");
  json t = train.to_json();
  t.erase("seed");
  json r = {{"mm2_per_pixel", report.mm2_per_pixel ? json(*report.mm2_per_pixel) : json()},
            {"burden_percent", report.burden_percent},
            {"histogram_bins", report.histogram_bins}};
  return {{"seed", seed},
          {"output_dir", output_dir.string()},
          {"data", d},
          {"model", unet_config_to_json(model)},
          {"train", t},
          {"sampler", sampler_config_to_json(sampler)},
          {"report", r}};
}

RunConfig RunConfig::from_json(const json& j) {
  require_object(j, "run config");
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "output_dir") c.output_dir = v.get<std::string>();
      else if (key == "data") {
        require_object(v, "data");
        reject_seed(v, "data");
        c.data = PhantomConfig::from_json(v);
      } else if (key == "model") {
        c.model = unet_config_from_json(v);
      } else if (key == "train") {
        require_object(v, "train");
        reject_seed(v, "train");
        c.train = TrainConfig::from_json(v);
      } else if (key == "sampler") {
        c.sampler = sampler_config_from_json(v);
      } else if (key == "report") {
        require_object(v, "report");
        for (const auto& [rk, rv] : v.items()) {
          if (rk == "mm2_per_pixel") {
            c.report.mm2_per_pixel = rv.is_null() ? std::nullopt : std::optional(rv.get<double>());
          } else if (rk == "burden_percent") {
            c.report.burden_percent = rv.get<bool>();
          } else if (rk == "histogram_bins") {
            c.report.histogram_bins = rv.get<std::size_t>();
          } else {
            throw ConfigError("report: unknown key '" + rk + "'");
          }
        }
      } else {
        throw ConfigError("run config: unknown key '" + key + "'");
      }
    } catch (const json::exception&) {
      throw ConfigError("run config: bad value under '" + key + "'");
    }
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  auto cfg = RunConfig::from_json(j);
  cfg.resolve();
  return cfg;
}

void archive_config(const RunConfig& cfg, const std::filesystem::path& dir) {
  write_file_atomic(dir / "config.resolved.json", cfg.to_json().dump(2) + "\n");
}

} // namespace raterbayes
