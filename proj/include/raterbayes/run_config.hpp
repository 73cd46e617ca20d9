// SPDX-License-Identifier: Apache-2.0
//
// Run configuration (JSON). Every key is optional; unknown keys are a
// ConfigError.
//
//   {
//     "seed": 0,                      one seed for data, training and sampling
//     "output_dir": "runs/demo",
//     "data":    { size, task, num_raters, repeats_per_rater, rater_bias,
//                  rater_offsets, rater_jitter, noise, train, validation, test },
//     "model":   { depth, base_channels, head_features, dropout_rate,
//                  dropout_sites },
//     "train":   { scheme, strategy, learning_rate, lr_min, epochs, batch_size,
//                  mc_samples, kl_scale, ensemble_members, validation_samples,
//                  binarize_threshold, prior_mean, prior_std, init_mu_std,
//                  init_rho_mean, init_rho_std, threads },
//     "sampler": { samples, members, binarize_threshold, head_sampling },
//     "report":  { mm2_per_pixel, burden_percent, histogram_bins }
//   }
//
// The model's class count follows from the data task (structures + 1) and
// the input is single-channel, so neither is configurable here.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "raterbayes/bayes_heads.hpp"
#include "raterbayes/synth.hpp"
#include "raterbayes/trainer.hpp"
#include "raterbayes/unet.hpp"

namespace raterbayes {

struct ReportConfig {
  std::optional<double> mm2_per_pixel;  // physical area of one pixel
  bool burden_percent = false;
  std::size_t histogram_bins = 10;

  void validate() const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "raterbayes_out";
  PhantomConfig data;
  UNetConfig model;
  TrainConfig train;
  SamplerConfig sampler;
  ReportConfig report;

  /// Copies the top-level seed into every component and derives the class
  /// count from the task; then validates everything.
  void resolve();
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

nlohmann::json unet_config_to_json(const UNetConfig& c);
/// `num_classes` and `input_channels` are not accepted (see above).
UNetConfig unet_config_from_json(const nlohmann::json& j);
nlohmann::json sampler_config_to_json(const SamplerConfig& c);
SamplerConfig sampler_config_from_json(const nlohmann::json& j);

/// Parses and resolves a config file. ConfigError on syntax or schema errors,
/// IoError when unreadable.
RunConfig load_run_config(const std::filesystem::path& path);

/// Writes the resolved config as <dir>/config.resolved.json.
void archive_config(const RunConfig& cfg, const std::filesystem::path& dir);

} // namespace raterbayes
