// SPDX-License-Identifier: Apache-2.0
//
// Approximate posteriors over the segmentation network: a mean-field
// Gaussian 1x1 output layer on top of the feature extractor, MC dropout and
// deep ensembles, plus the predictive sampling they share.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "raterbayes/mask.hpp"
#include "raterbayes/rng.hpp"
#include "raterbayes/tensor.hpp"
#include "raterbayes/unet.hpp"

namespace raterbayes {

enum class Scheme { neural_linear, mc_dropout, deep_ensemble, deterministic };

std::string to_string(Scheme s);
/// Throws ConfigError for unknown names.
Scheme parse_scheme(const std::string& s);

/// ln(1 + e^rho) without overflow; returns rho itself above 30.
double softplus_sigma(double rho);

struct PriorConfig {
  double mean = 0.0;
  double std = 1.0;

  void validate() const;
  bool operator==(const PriorConfig&) const = default;
};

/// Initial distribution of the variational parameters. The spreads are
/// standard deviations.
struct HeadInit {
  double mu_std = 0.05;
  double rho_mean = -4.0;
  double rho_std = 0.05;
};

inline constexpr const char* kHeadMu = "head.mu";
inline constexpr const char* kHeadRho = "head.rho";
inline constexpr const char* kHeadBias = "head.bias";

/// Factorized Gaussian over the weights of a 1x1 convolution from I feature
/// channels to O classes. The bias is a point estimate.
struct MeanFieldGaussianHead {
  Tensor mu;    // [I, O]
  Tensor rho;   // [I, O], sigma = softplus(rho)
  Tensor bias;  // [O]
  PriorConfig prior;

  static MeanFieldGaussianHead create(std::size_t in_features, std::size_t classes, Rng& rng,
                                      const PriorConfig& prior = {}, const HeadInit& init = {});
  /// Reads the reserved head.* tensors; DataError if absent or misshapen.
  static MeanFieldGaussianHead from_tensors(const std::vector<NamedTensor>& tensors,
                                            const PriorConfig& prior = {});

  std::size_t in_features() const { return mu.dim(0); }
  std::size_t out_features() const { return mu.dim(1); }
  void validate() const;
  std::vector<NamedTensor> named_tensors() const;
  std::vector<Tensor> parameters() const { return {mu, rho, bias}; }
  MeanFieldGaussianHead clone() const;
};

/// Closed-form sum over weights of KL[q(w) || prior]; differentiable in mu
/// and rho.
Tensor kl_mean_field(Graph& g, const MeanFieldGaussianHead& head);

/// Samples head activations directly: per pixel and class, mean
/// sum_i z_i mu_ij + b_j and std sqrt(sum_i z_i^2 sigma_ij^2), with fresh
/// standard normal noise for every (sample, class, pixel).
Tensor local_reparam_forward(Graph& g, const Tensor& features, const MeanFieldGaussianHead& head,
                             Rng& rng);

/// One weight-space draw w ~ q shared by every pixel, applied as a 1x1 conv.
Tensor weight_sample_forward(Graph& g, const Tensor& features, const MeanFieldGaussianHead& head,
                             Rng& rng);

/// The head with every weight at its mean.
Tensor mean_head_forward(Graph& g, const Tensor& features, const MeanFieldGaussianHead& head);

/// How predictive passes of the neural-linear scheme perturb the head.
enum class HeadSampling { weights, activations };

std::string to_string(HeadSampling s);
HeadSampling parse_head_sampling(const std::string& s);

struct SamplerConfig {
  std::size_t samples = 20;   // T
  std::size_t members = 20;   // J
  double binarize_threshold = 0.5;
  HeadSampling head_sampling = HeadSampling::weights;
  std::uint64_t seed = 0;

  void validate() const;
};

/// A trained approximate posterior: one model (plus the Gaussian head for
/// neural_linear) or J ensemble members.
struct PosteriorModel {
  Scheme scheme = Scheme::deterministic;
  std::vector<UNetModel> models;
  std::optional<MeanFieldGaussianHead> head;

  /// ConfigError when the pieces do not fit the scheme.
  void validate() const;
  const UNetConfig& config() const { return models.front().config(); }
};

/// Predictive probability maps [N, K, H, W] from T stochastic passes (J
/// member passes for ensembles, J capped by cfg.members). Pass t draws its
/// noise from Rng::derive(cfg.seed, t), so the set does not depend on the
/// order in which passes run.
std::vector<Tensor> sample_predictive(const PosteriorModel& posterior, const Tensor& x,
                                      const SamplerConfig& cfg);

struct EnsemblePrediction {
  std::vector<Tensor> members;  // one [N, K, H, W] map per member
  Tensor mean;                  // exactly rounded elementwise average
};

/// One deterministic pass per member.
EnsemblePrediction ensemble_predict(const std::vector<UNetModel>& models, const Tensor& x);

/// Elementwise mean of equally shaped maps, correctly rounded, so the result
/// does not depend on the order of `maps`.
Tensor mean_map(const std::vector<Tensor>& maps);

/// Mask of image n of a [N, K, H, W] probability map. Classes are nested:
/// structure s is foreground where P(class > s) exceeds the threshold.
/// With two classes and s = 0 this is P(class 1) > threshold.
Mask binarize(const Tensor& probs, std::size_t n, double threshold, std::size_t structure = 0);

} // namespace raterbayes
