// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/bayes_heads.hpp"

#include <cmath>
#include <vector>

#include "raterbayes/error.hpp"
#include "raterbayes/stats.hpp"

namespace raterbayes {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_head_input(const Tensor& features, const MeanFieldGaussianHead& head,
                        const char* op) {
  if (features.ndim() != 4) {
    throw DimensionError(std::string(op) + ": features must be [N, I, H, W], got " +
                         shape_str(features.shape()));
  }
  if (features.dim(1) != head.in_features()) {
    throw DimensionError(std::string(op) + ": head expects " +
                         std::to_string(head.in_features()) + " feature channels, got " +
                         std::to_string(features.dim(1)));
  }
}

// Shared body of the mean head and the local reparameterization: with
// rng == nullptr the output is the activation mean only.
Tensor head_activation(Graph& g, const Tensor& features, const MeanFieldGaussianHead& head,
                       Rng* rng, const char* op) {
  require_head_input(features, head, op);
  const std::size_t n = features.dim(0), in = head.in_features(), out = head.out_features();
  const std::size_t pix = features.dim(2) * features.dim(3);
  const double* z = features.data().data();
  const double* mu = head.mu.data().data();
  const double* b = head.bias.data().data();

  std::vector<double> var2;  // sigma^2 per weight
  if (rng) {
    var2.resize(in * out);
    const double* rho = head.rho.data().data();
    for (std::size_t k = 0; k < in * out; ++k) {
      const double s = softplus_sigma(rho[k]);
      var2[k] = s * s;
    }
  }

  Tensor y = Tensor::zeros({n, out, features.dim(2), features.dim(3)});
  // std and noise are kept for the backward pass.
  std::vector<double> sd(rng ? n * out * pix : 0), eps(rng ? n * out * pix : 0);
  double* yd = y.data().data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < out; ++j) {
      double* row = yd + (s * out + j) * pix;
      std::fill(row, row + pix, b[j]);
      for (std::size_t i = 0; i < in; ++i) {
        const double w = mu[i * out + j];
        const double* zi = z + (s * in + i) * pix;
        for (std::size_t p = 0; p < pix; ++p) row[p] += w * zi[p];
      }
      if (!rng) continue;
      double* sdr = sd.data() + (s * out + j) * pix;
      for (std::size_t i = 0; i < in; ++i) {
        const double v = var2[i * out + j];
        const double* zi = z + (s * in + i) * pix;
        for (std::size_t p = 0; p < pix; ++p) sdr[p] += zi[p] * zi[p] * v;
      }
      double* er = eps.data() + (s * out + j) * pix;
      for (std::size_t p = 0; p < pix; ++p) {
        sdr[p] = std::sqrt(sdr[p]);
        er[p] = rng->normal();
        row[p] += er[p] * sdr[p];
      }
    }
  }
  require_finite(y.data(), op);

  if (g.tracks({&features, &head.mu, &head.rho, &head.bias})) {
    g.record(op, y,
             [features = features, mu_t = head.mu, rho_t = head.rho, bias_t = head.bias, y,
              var2 = std::move(var2), sd = std::move(sd), eps = std::move(eps), n, in, out,
              pix]() mutable {
               const bool noisy = !sd.empty();
               const double* dy = y.grad().data();
               const double* z = features.data().data();
               const double* mu = mu_t.data().data();
               const double* rho = rho_t.data().data();
               // dv = dL/d(variance) per output element.
               std::vector<double> dv(noisy ? n * out * pix : 0);
               for (std::size_t k = 0; k < dv.size(); ++k) {
                 dv[k] = sd[k] > 0.0 ? dy[k] * eps[k] / (2.0 * sd[k]) : 0.0;
               }
               if (bias_t.requires_grad()) {
                 auto db = bias_t.grad();
                 for (std::size_t s = 0; s < n; ++s)
                   for (std::size_t j = 0; j < out; ++j) {
                     const double* r = dy + (s * out + j) * pix;
                     for (std::size_t p = 0; p < pix; ++p) db[j] += r[p];
                   }
               }
               if (mu_t.requires_grad() || (noisy && rho_t.requires_grad())) {
                 for (std::size_t i = 0; i < in; ++i) {
                   for (std::size_t j = 0; j < out; ++j) {
                     double gm = 0.0, gv = 0.0;
                     for (std::size_t s = 0; s < n; ++s) {
                       const double* zi = z + (s * in + i) * pix;
                       const double* r = dy + (s * out + j) * pix;
                       for (std::size_t p = 0; p < pix; ++p) gm += r[p] * zi[p];
                       if (!noisy) continue;
                       const double* dvr = dv.data() + (s * out + j) * pix;
                       for (std::size_t p = 0; p < pix; ++p) gv += dvr[p] * zi[p] * zi[p];
                     }
                     const std::size_t k = i * out + j;
                     if (mu_t.requires_grad()) mu_t.grad()[k] += gm;
                     if (noisy && rho_t.requires_grad()) {
                       // d var / d rho = 2 sigma sigmoid(rho)
                       const double sigma = softplus_sigma(rho[k]);
                       rho_t.grad()[k] += gv * 2.0 * sigma * sigmoid(rho[k]);
                     }
                   }
                 }
               }
               if (features.requires_grad()) {
                 auto dz = features.grad();
                 for (std::size_t s = 0; s < n; ++s) {
                   for (std::size_t i = 0; i < in; ++i) {
                     const double* zi = z + (s * in + i) * pix;
                     double* dzi = dz.data() + (s * in + i) * pix;
                     for (std::size_t j = 0; j < out; ++j) {
                       const double w = mu[i * out + j];
                       const double* r = dy + (s * out + j) * pix;
                       for (std::size_t p = 0; p < pix; ++p) dzi[p] += r[p] * w;
                       if (!noisy) continue;
                       const double v2 = 2.0 * var2[i * out + j];
                       const double* dvr = dv.data() + (s * out + j) * pix;
                       for (std::size_t p = 0; p < pix; ++p) dzi[p] += dvr[p] * v2 * zi[p];
                     }
                   }
                 }
               }
             });
  }
  return y;
}

Tensor softmax_probs(const Tensor& logits) {
  Graph g(Graph::Mode::inference);
  return softmax_channels(g, logits);
}

} // namespace

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::neural_linear: return "neural_linear";
    case Scheme::mc_dropout: return "mc_dropout";
    case Scheme::deep_ensemble: return "deep_ensemble";
    case Scheme::deterministic: return "deterministic";
  }
  return "unknown";
}

Scheme parse_scheme(const std::string& s) {
  for (auto v : {Scheme::neural_linear, Scheme::mc_dropout, Scheme::deep_ensemble,
                 Scheme::deterministic}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown scheme '" + s +
                    "' (expected neural_linear, mc_dropout, deep_ensemble or deterministic)");
}

std::string to_string(HeadSampling s) {
  return s == HeadSampling::weights ? "weights" : "activations";
}

HeadSampling parse_head_sampling(const std::string& s) {
  if (s == "weights") return HeadSampling::weights;
  if (s == "activations") return HeadSampling::activations;
  throw ConfigError("unknown head sampling '" + s + "' (expected weights or activations)");
}

double softplus_sigma(double rho) {
  if (rho > 30.0) return rho;
  return std::log1p(std::exp(rho));
}

void PriorConfig::validate() const {
  if (!std::isfinite(mean)) throw ConfigError("prior mean must be finite");
  if (!(std > 0.0) || !std::isfinite(std)) {
    throw ConfigError("prior std must be > 0");
  }
}

MeanFieldGaussianHead MeanFieldGaussianHead::create(std::size_t in_features, std::size_t classes,
                                                    Rng& rng, const PriorConfig& prior,
                                                    const HeadInit& init) {
  prior.validate();
  if (in_features == 0 || classes < 2) {
    throw ConfigError("gaussian head needs >= 1 input feature and >= 2 classes");
  }
  MeanFieldGaussianHead h;
  h.prior = prior;
  h.mu = Tensor::zeros({in_features, classes}, true);
  h.rho = Tensor::zeros({in_features, classes}, true);
  h.bias = Tensor::zeros({classes}, true);
  for (auto& v : h.mu.data()) v = rng.normal(0.0, init.mu_std);
  for (auto& v : h.rho.data()) v = rng.normal(init.rho_mean, init.rho_std);
  return h;
}

MeanFieldGaussianHead MeanFieldGaussianHead::from_tensors(const std::vector<NamedTensor>& tensors,
                                                          const PriorConfig& prior) {
  MeanFieldGaussianHead h;
  h.prior = prior;
  for (const auto& t : tensors) {
    if (t.name == kHeadMu) h.mu = t.value.clone();
    if (t.name == kHeadRho) h.rho = t.value.clone();
    if (t.name == kHeadBias) h.bias = t.value.clone();
  }
  if (!h.mu.defined() || !h.rho.defined() || !h.bias.defined()) {
    throw DataError("gaussian head: missing head.mu, head.rho or head.bias");
  }
  try {
    h.validate();
  } catch (const Error& e) {
    throw DataError(std::string("gaussian head: ") + e.what());
  }
  h.mu.set_requires_grad(true);
  h.rho.set_requires_grad(true);
  h.bias.set_requires_grad(true);
  return h;
}

void MeanFieldGaussianHead::validate() const {
  prior.validate();
  if (mu.ndim() != 2 || rho.shape() != mu.shape() || bias.ndim() != 1 ||
      bias.dim(0) != mu.dim(1)) {
    throw DimensionError("gaussian head: expected mu, rho [I, O] and bias [O]");
  }
  require_finite(mu.data(), "gaussian head mu");
  require_finite(rho.data(), "gaussian head rho");
}

std::vector<NamedTensor> MeanFieldGaussianHead::named_tensors() const {
  return {{kHeadMu, mu}, {kHeadRho, rho}, {kHeadBias, bias}};
}

MeanFieldGaussianHead MeanFieldGaussianHead::clone() const {
  MeanFieldGaussianHead h;
  h.prior = prior;
  h.mu = mu.clone();
  h.rho = rho.clone();
  h.bias = bias.clone();
  h.mu.set_requires_grad(mu.requires_grad());
  h.rho.set_requires_grad(rho.requires_grad());
  h.bias.set_requires_grad(bias.requires_grad());
  return h;
}

Tensor kl_mean_field(Graph& g, const MeanFieldGaussianHead& head) {
  head.validate();
  const double mp = head.prior.mean, sp = head.prior.std;
  const auto mu = head.mu.data();
  const auto rho = head.rho.data();
  std::vector<double> terms(mu.size());
  for (std::size_t k = 0; k < mu.size(); ++k) {
    const double r = softplus_sigma(rho[k]) / sp;
    const double d = (mu[k] - mp) / sp;
    terms[k] = 0.5 * (r * r + d * d - 1.0) - std::log(r);
  }
  Tensor out = Tensor::scalar(exact_sum(terms));
  require_finite(out.data(), "kl_mean_field");
  if (g.tracks({&head.mu, &head.rho})) {
    g.record("kl_mean_field", out, [mu_t = head.mu, rho_t = head.rho, out, mp, sp]() mutable {
      const double go = out.grad()[0];
      const auto mu = mu_t.data();
      const auto rho = rho_t.data();
      for (std::size_t k = 0; k < mu.size(); ++k) {
        if (mu_t.requires_grad()) mu_t.grad()[k] += go * (mu[k] - mp) / (sp * sp);
        if (rho_t.requires_grad()) {
          const double sigma = softplus_sigma(rho[k]);
          const double dsigma = sigma / (sp * sp) - 1.0 / sigma;
          rho_t.grad()[k] += go * dsigma * sigmoid(rho[k]);
        }
      }
    });
  }
  return out;
}

Tensor local_reparam_forward(Graph& g, const Tensor& features, const MeanFieldGaussianHead& head,
                             Rng& rng) {
  return head_activation(g, features, head, &rng, "local_reparam_forward");
}

Tensor mean_head_forward(Graph& g, const Tensor& features, const MeanFieldGaussianHead& head) {
  return head_activation(g, features, head, nullptr, "mean_head_forward");
}

Tensor weight_sample_forward(Graph& g, const Tensor& features, const MeanFieldGaussianHead& head,
                             Rng& rng) {
  require_head_input(features, head, "weight_sample_forward");
  const std::size_t in = head.in_features(), out = head.out_features();
  Tensor kernel = Tensor::zeros({out, in, 1, 1});
  std::vector<double> eps(in * out);
  const auto mu = head.mu.data();
  const auto rho = head.rho.data();
  auto k = kernel.data();
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t j = 0; j < out; ++j) {
      eps[i * out + j] = rng.normal();
      k[j * in + i] = mu[i * out + j] + softplus_sigma(rho[i * out + j]) * eps[i * out + j];
    }
  }
  // Recorded before the conv so that its backward runs after the conv's.
  if (g.tracks({&head.mu, &head.rho})) {
    g.record("weight_sample", kernel,
             [mu_t = head.mu, rho_t = head.rho, kernel, eps = std::move(eps), in, out]() mutable {
               const auto dk = kernel.grad();
               const auto rho_v = rho_t.data();
               for (std::size_t i = 0; i < in; ++i) {
                 for (std::size_t j = 0; j < out; ++j) {
                   const double gk = dk[j * in + i];
                   const std::size_t w = i * out + j;
                   if (mu_t.requires_grad()) mu_t.grad()[w] += gk;
                   // d sigma / d rho = sigmoid(rho)
                   if (rho_t.requires_grad()) rho_t.grad()[w] += gk * eps[w] * sigmoid(rho_v[w]);
                 }
               }
             });
  }
  return conv2d(g, features, kernel, head.bias);
}

void SamplerConfig::validate() const {
  if (samples < 1) throw ConfigError("sampler: T must be >= 1");
  if (members < 1) throw ConfigError("sampler: J must be >= 1");
  if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0)) {
    throw ConfigError("sampler: binarize threshold must lie in (0, 1)");
  }
}

void PosteriorModel::validate() const {
  const std::string name = to_string(scheme);
  if (models.empty()) throw ConfigError(name + ": no model");
  if (scheme != Scheme::deep_ensemble && models.size() != 1) {
    throw ConfigError(name + ": expects exactly one model, got " + std::to_string(models.size()));
  }
  if (scheme == Scheme::neural_linear) {
    if (!head) throw ConfigError("neural_linear: gaussian head missing");
    const auto& m = models.front();
    if (m.has_output_head()) {
      throw ConfigError("neural_linear: feature extractor must not carry a deterministic head");
    }
    if (head->in_features() != m.config().head_features ||
        head->out_features() != m.config().num_classes) {
      throw ConfigError("neural_linear: head shape does not match the feature extractor");
    }
    return;
  }
  if (head) throw ConfigError(name + ": unexpected gaussian head");
  for (const auto& m : models) {
    if (!m.has_output_head()) throw ConfigError(name + ": model lacks its output head");
    if (!(m.config() == models.front().config())) {
      throw ConfigError(name + ": ensemble members have different configurations");
    }
  }
}

std::vector<Tensor> sample_predictive(const PosteriorModel& posterior, const Tensor& x,
                                      const SamplerConfig& cfg) {
  cfg.validate();
  posterior.validate();
  std::vector<Tensor> maps;
  Graph g(Graph::Mode::inference);
  Rng unused(0);
  switch (posterior.scheme) {
    case Scheme::neural_linear: {
      const Tensor features = posterior.models.front().forward_features(g, x, false, unused);
      for (std::size_t t = 0; t < cfg.samples; ++t) {
        Rng rng = Rng::derive(cfg.seed, t);
        Tensor logits = cfg.head_sampling == HeadSampling::weights
                            ? weight_sample_forward(g, features, *posterior.head, rng)
                            : local_reparam_forward(g, features, *posterior.head, rng);
        maps.push_back(softmax_probs(logits));
      }
      break;
    }
    case Scheme::mc_dropout:
      for (std::size_t t = 0; t < cfg.samples; ++t) {
        Rng rng = Rng::derive(cfg.seed, t);
        maps.push_back(softmax_probs(posterior.models.front().forward_logits(g, x, true, rng)));
      }
      break;
    case Scheme::deterministic: {
      const Tensor p = softmax_probs(posterior.models.front().forward_logits(g, x, false, unused));
      maps.assign(cfg.samples, p);
      break;
    }
    case Scheme::deep_ensemble: {
      if (cfg.members > posterior.models.size()) {
        throw ConfigError("deep_ensemble: J = " + std::to_string(cfg.members) + " but only " +
                          std::to_string(posterior.models.size()) + " members trained");
      }
      std::vector<UNetModel> used(posterior.models.begin(),
                                  posterior.models.begin() + static_cast<long>(cfg.members));
      maps = ensemble_predict(used, x).members;
      break;
    }
  }
  return maps;
}

EnsemblePrediction ensemble_predict(const std::vector<UNetModel>& models, const Tensor& x) {
  if (models.empty()) throw ConfigError("ensemble_predict: no members");
  for (const auto& m : models) {
    if (!(m.config() == models.front().config())) {
      throw ConfigError("ensemble_predict: members have different configurations");
    }
    if (!m.has_output_head()) throw ConfigError("ensemble_predict: member lacks an output head");
  }
  EnsemblePrediction out;
  Graph g(Graph::Mode::inference);
  Rng unused(0);
  for (const auto& m : models) out.members.push_back(softmax_probs(m.forward_logits(g, x, false, unused)));
  out.mean = mean_map(out.members);
  return out;
}

Tensor mean_map(const std::vector<Tensor>& maps) {
  if (maps.empty()) throw UsageError("mean_map: no maps");
  for (const auto& m : maps) {
    if (m.shape() != maps.front().shape()) {
      throw DimensionError("mean_map: shapes differ: " + shape_str(m.shape()) + " vs " +
                           shape_str(maps.front().shape()));
    }
  }
  Tensor mean = Tensor::zeros(maps.front().shape());
  std::vector<double> column(maps.size());
  auto md = mean.data();
  const double count = static_cast<double>(maps.size());
  for (std::size_t k = 0; k < md.size(); ++k) {
    for (std::size_t t = 0; t < maps.size(); ++t) column[t] = maps[t].data()[k];
    md[k] = exact_sum(column) / count;
  }
  return mean;
}

Mask binarize(const Tensor& probs, std::size_t n, double threshold, std::size_t structure) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("binarize: threshold must lie in (0, 1)");
  }
  if (probs.ndim() != 4) throw DimensionError("binarize: expected [N, K, H, W] probabilities");
  const std::size_t k = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
  if (n >= probs.dim(0)) throw DimensionError("binarize: image index out of range");
  if (structure + 1 >= k) {
    throw ConfigError("binarize: structure " + std::to_string(structure) + " needs at least " +
                      std::to_string(structure + 2) + " classes");
  }
  Mask m(h, w);
  const double* p = probs.data().data() + n * k * h * w;
  for (std::size_t px = 0; px < h * w; ++px) {
    double above = 0.0;
    for (std::size_t c = structure + 1; c < k; ++c) above += p[c * h * w + px];
    m.px[px] = above > threshold ? 1 : 0;
  }
  return m;
}

} // namespace raterbayes
