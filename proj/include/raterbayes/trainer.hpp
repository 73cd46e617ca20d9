// SPDX-License-Identifier: Apache-2.0
//
// Training for all schemes. Neural linear minimizes the negative ELBO of the
// Gaussian head on top of a deterministic backbone; dropout, ensemble and
// deterministic models minimize pixelwise cross-entropy. Adam with a cosine
// learning-rate schedule; the parameters with the best validation Dice
// against the rater consensus are kept.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "raterbayes/bayes_heads.hpp"
#include "raterbayes/dataset.hpp"
#include "raterbayes/unet.hpp"

namespace raterbayes {

// ---- objectives -----------------------------------------------------------

/// Negative ELBO on one batch:
///   (1/T) sum_t CE(softmax(head_t(z)), y) + kl_scale * KL(q || p)
/// with z the backbone features (computed once) and head_t a local
/// reparameterization draw. ConfigError when T < 1.
Tensor elbo_loss(Graph& g, const UNetModel& backbone, const MeanFieldGaussianHead& head,
                 const Tensor& x, const LabelMap& y, std::size_t T, double kl_scale, Rng& rng);

/// Cross-entropy of the model's own output head; dropout is active only when
/// `dropout_active` is set.
Tensor cross_entropy_loss(Graph& g, const UNetModel& model, const Tensor& x, const LabelMap& y,
                          bool dropout_active, Rng& rng);

// ---- optimization ---------------------------------------------------------

/// lr_min + (lr_max - lr_min)(1 + cos(pi epoch / total)) / 2.
/// UsageError unless 0 <= epoch <= total and total >= 1.
double cosine_lr(std::size_t epoch, std::size_t total, double lr_max, double lr_min = 0.0);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;

  /// Zero moments matching the given parameters.
  static AdamState for_parameters(std::span<const Tensor> params);
};

/// One bias-corrected Adam update of every parameter from its gradient.
/// DimensionError when the state does not match the parameters.
void adam_step(std::span<Tensor> params, AdamState& state, double lr, const AdamConfig& cfg = {});

/// Scales every gradient by min(1, max_norm / ||g||) where ||g|| is the L2
/// norm over all tensors together. Returns ||g|| before scaling.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

// ---- multi-rater targets --------------------------------------------------

enum class SamplingKind {
  per_expert,   // one fixed rater for every model
  per_member,   // ensemble member j learns rater j mod R
  all_experts,  // a uniformly drawn annotation, fresh every epoch
  consensus,    // the majority-vote mask
};

struct SamplingStrategy {
  SamplingKind kind = SamplingKind::all_experts;
  std::size_t rater = 0;  // per_expert only

  /// "per_expert:<r>", "per_member", "all_experts" or "consensus";
  /// ConfigError otherwise.
  static SamplingStrategy parse(const std::string& s);
  std::string to_string() const;
  bool operator==(const SamplingStrategy&) const = default;
};

/// Pixelwise majority vote: foreground iff at least floor(R/2) + 1 masks mark
/// the pixel, so ties at even R go to background. DimensionError when shapes
/// differ, DataError when the list is empty.
Mask build_consensus(const std::vector<Mask>& masks);

/// Consensus of every structure of a case, inner structures clipped to the
/// outer consensus.
std::vector<Mask> case_consensus(const MultiRaterCase& c);

/// Index of the annotation used as target. Draws from rng only for the
/// sampling kinds that need it. ConfigError when the requested rater has no
/// annotation; `member` selects the rater for per_member.
std::size_t draw_annotation(const MultiRaterCase& c, const SamplingStrategy& s, Rng& rng,
                            std::size_t member = 0);

/// Training target (one mask per structure) for a case.
std::vector<Mask> draw_training_target(const MultiRaterCase& c, const std::vector<Mask>& consensus,
                                       const SamplingStrategy& s, Rng& rng, std::size_t member = 0);

// ---- training runs --------------------------------------------------------

struct TrainConfig {
  Scheme scheme = Scheme::neural_linear;
  SamplingStrategy strategy;
  double learning_rate = 1e-3;
  double lr_min = 0.0;
  std::size_t epochs = 300;
  std::size_t batch_size = 8;
  std::size_t mc_samples = 1;  // T of the training ELBO
  /// Weight of the KL term per batch. Unset means 1 / (training images x
  /// pixels per image), matching the pixel-averaged likelihood.
  std::optional<double> kl_scale;
  /// Rescale the joint gradient to at most this L2 norm before each step.
  std::optional<double> grad_clip_norm;
  std::size_t ensemble_members = 20;
  std::size_t validation_samples = 5;  // passes for the validation mean map
  double binarize_threshold = 0.5;
  PriorConfig prior;
  HeadInit head_init;
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // concurrent ensemble members

  /// ConfigError on violation.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep defaults; unknown keys are a ConfigError.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainHistory {
  std::vector<double> loss;      // mean training loss per epoch
  std::vector<double> val_dice;  // mean validation Dice vs consensus per epoch
  std::vector<double> lr;
  std::size_t best_epoch = 0;

  nlohmann::json to_json() const;
  static TrainHistory from_json(const nlohmann::json& j);
};

struct TrainedPosterior {
  PosteriorModel posterior;
  std::vector<TrainHistory> histories;  // one per trained model
};

/// Optional progress sink: (member, epoch, loss, validation Dice).
using TrainProgress = std::function<void(std::size_t, std::size_t, double, double)>;

/// Trains the scheme of `tcfg` on the train split, early-stopping on the
/// validation split. Ensemble member j uses seed Rng::derive(seed, j) and is
/// otherwise identical to a single run. DataError when a split is empty.
TrainedPosterior train(const MultiRaterDataset& data, const UNetConfig& ucfg,
                       const TrainConfig& tcfg, const TrainProgress& progress = {});

/// Mean Dice against the consensus over cases and structures, using the mean
/// predictive map of `validation_samples` passes.
double validation_dice(const PosteriorModel& posterior, const MultiRaterDataset& data,
                       const std::vector<std::size_t>& cases, std::size_t samples,
                       double threshold, std::uint64_t seed);

/// Images of the given cases as an [N, 1, H, W] tensor.
Tensor stack_images(const MultiRaterDataset& data, const std::vector<std::size_t>& cases);

// ---- artifacts ------------------------------------------------------------
//
// <dir>/posterior.json      {"format": "raterbayes-posterior", "version": 1,
//                            "scheme", "members": [file...], "prior",
//                            "histories": [file...]}
// <dir>/model_<j>.rbay      checkpoint; neural linear adds head.* tensors
// <dir>/history_<j>.json

void save_posterior(const std::filesystem::path& dir, const TrainedPosterior& trained);
/// DataError when files are missing or inconsistent.
PosteriorModel load_posterior(const std::filesystem::path& dir);

} // namespace raterbayes
