// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/trainer.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <thread>

#include "raterbayes/checkpoint.hpp"
#include "raterbayes/error.hpp"
#include "raterbayes/io.hpp"
#include "raterbayes/metrics.hpp"
#include "raterbayes/stats.hpp"

namespace raterbayes {

using nlohmann::json;

// ---- objectives -----------------------------------------------------------

Tensor elbo_loss(Graph& g, const UNetModel& backbone, const MeanFieldGaussianHead& head,
                 const Tensor& x, const LabelMap& y, std::size_t T, double kl_scale, Rng& rng) {
  if (T < 1) throw ConfigError("elbo_loss: need at least one MC sample");
  if (!(kl_scale >= 0.0) || !std::isfinite(kl_scale)) {
    throw ConfigError("elbo_loss: kl_scale must be finite and non-negative");
  }
  const Tensor z = backbone.forward_features(g, x, false, rng);
  Tensor nll;
  for (std::size_t t = 0; t < T; ++t) {
    Tensor ce = cross_entropy(g, softmax_channels(g, local_reparam_forward(g, z, head, rng)), y);
    nll = t == 0 ? ce : add(g, nll, ce);
  }
  if (T > 1) nll = scale(g, nll, 1.0 / static_cast<double>(T));
  return add(g, nll, scale(g, kl_mean_field(g, head), kl_scale));
}

Tensor cross_entropy_loss(Graph& g, const UNetModel& model, const Tensor& x, const LabelMap& y,
                          bool dropout_active, Rng& rng) {
  return cross_entropy(g, softmax_channels(g, model.forward_logits(g, x, dropout_active, rng)), y);
}

// ---- optimization ---------------------------------------------------------

double cosine_lr(std::size_t epoch, std::size_t total, double lr_max, double lr_min) {
  if (total == 0) throw UsageError("cosine_lr: total must be at least 1");
  if (epoch > total) {
    throw UsageError("cosine_lr: epoch " + std::to_string(epoch) + " past total " +
                     std::to_string(total));
  }
  const double frac = static_cast<double>(epoch) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

AdamState AdamState::for_parameters(std::span<const Tensor> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(std::span<Tensor> params, AdamState& state, double lr, const AdamConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: state tracks " + std::to_string(state.m.size()) +
                         " tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel()) {
      throw DimensionError("adam_step: state of tensor " + std::to_string(i) +
                           " does not match " + shape_str(params[i].shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].data();
    auto gr = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gr[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gr[k] * gr[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
  }
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  if (!(max_norm > 0.0) || !std::isfinite(max_norm)) {
    throw ConfigError("clip_grad_norm: max_norm must be finite and positive");
  }
  std::vector<double> squares;
  for (const auto& p : params) {
    for (double x : p.grad()) squares.push_back(x * x);
  }
  const double norm = std::sqrt(exact_sum(squares));
  if (!std::isfinite(norm)) throw NumericError("clip_grad_norm: non-finite gradient");
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& p : params) {
      for (double& x : p.grad()) x *= f;
    }
  }
  return norm;
}

// ---- multi-rater targets --------------------------------------------------

SamplingStrategy SamplingStrategy::parse(const std::string& s) {
  if (s == "all_experts") return {SamplingKind::all_experts, 0};
  if (s == "consensus") return {SamplingKind::consensus, 0};
  if (s == "per_member") return {SamplingKind::per_member, 0};
  const std::string prefix = "per_expert:";
  if (s.rfind(prefix, 0) == 0 && s.size() > prefix.size()) {
    const auto digits = s.substr(prefix.size());
    if (digits.find_first_not_of("0123456789") == std::string::npos && digits.size() < 10) {
      return {SamplingKind::per_expert, std::stoul(digits)};
    }
  }
  throw ConfigError("unknown sampling strategy '" + s +
                    "' (expected per_expert:<r>, per_member, all_experts or consensus)");
}

std::string SamplingStrategy::to_string() const {
  switch (kind) {
    case SamplingKind::per_expert: return "per_expert:" + std::to_string(rater);
    case SamplingKind::per_member: return "per_member";
    case SamplingKind::all_experts: return "all_experts";
    case SamplingKind::consensus: return "consensus";
  }
  return "?";
}

Mask build_consensus(const std::vector<Mask>& masks) {
  if (masks.empty()) throw DataError("build_consensus: no masks");
  for (const auto& m : masks) require_same_shape(masks.front(), m, "build_consensus");
  const std::size_t need = masks.size() / 2 + 1;
  Mask out(masks.front().h, masks.front().w);
  for (std::size_t i = 0; i < out.px.size(); ++i) {
    std::size_t votes = 0;
    for (const auto& m : masks) votes += m.px[i];
    out.px[i] = votes >= need ? 1 : 0;
  }
  return out;
}

std::vector<Mask> case_consensus(const MultiRaterCase& c) {
  if (c.annotations.empty()) throw DataError("case " + c.id + ": no annotations");
  std::vector<Mask> out;
  for (std::size_t s = 0; s < c.annotations.front().structures.size(); ++s) {
    out.push_back(build_consensus(c.structure_ensemble(s).masks));
    if (s > 0) {
      for (std::size_t i = 0; i < out[s].px.size(); ++i) out[s].px[i] &= out[s - 1].px[i];
    }
  }
  return out;
}

namespace {

std::size_t annotation_of_rater(const MultiRaterCase& c, std::size_t rater, Rng& rng) {
  std::vector<std::size_t> own;
  for (std::size_t a = 0; a < c.annotations.size(); ++a) {
    if (c.annotations[a].rater == rater) own.push_back(a);
  }
  if (own.empty()) {
    throw ConfigError("case " + c.id + " has no annotation from rater " + std::to_string(rater));
  }
  return own.size() == 1 ? own.front() : own[rng.index(own.size())];
}

std::size_t rater_count(const MultiRaterCase& c) {
  std::size_t r = 0;
  for (const auto& a : c.annotations) r = std::max(r, a.rater + 1);
  return r;
}

} // namespace

std::size_t draw_annotation(const MultiRaterCase& c, const SamplingStrategy& s, Rng& rng,
                            std::size_t member) {
  if (c.annotations.empty()) throw DataError("case " + c.id + ": no annotations");
  switch (s.kind) {
    case SamplingKind::per_expert: return annotation_of_rater(c, s.rater, rng);
    case SamplingKind::per_member: return annotation_of_rater(c, member % rater_count(c), rng);
    case SamplingKind::all_experts:
      return c.annotations.size() == 1 ? 0 : rng.index(c.annotations.size());
    case SamplingKind::consensus: break;
  }
  throw UsageError("draw_annotation: consensus targets are not annotations");
}

std::vector<Mask> draw_training_target(const MultiRaterCase& c, const std::vector<Mask>& consensus,
                                       const SamplingStrategy& s, Rng& rng, std::size_t member) {
  if (s.kind == SamplingKind::consensus) return consensus;
  return c.annotations[draw_annotation(c, s, rng, member)].structures;
}

// ---- config ---------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (!(lr_min >= 0.0) || !(lr_min <= learning_rate)) {
    throw ConfigError("lr_min must lie in [0, learning_rate]");
  }
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (mc_samples < 1) throw ConfigError("mc_samples must be at least 1");
  if (kl_scale && (!(*kl_scale >= 0.0) || !std::isfinite(*kl_scale))) {
    throw ConfigError("kl_scale must be finite and non-negative");
  }
  if (grad_clip_norm && (!(*grad_clip_norm > 0.0) || !std::isfinite(*grad_clip_norm))) {
    throw ConfigError("grad_clip_norm must be finite and positive");
  }
  if (ensemble_members < 1) throw ConfigError("ensemble_members must be at least 1");
  if (validation_samples < 1) throw ConfigError("validation_samples must be at least 1");
  if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0)) {
    throw ConfigError("binarize_threshold must lie in (0, 1)");
  }
  if (threads < 1) throw ConfigError("threads must be at least 1");
  prior.validate();
}

json TrainConfig::to_json() const {
  return {{"scheme", raterbayes::to_string(scheme)},
          {"strategy", strategy.to_string()},
          {"learning_rate", learning_rate},
          {"lr_min", lr_min},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"mc_samples", mc_samples},
          {"kl_scale", kl_scale ? json(*kl_scale) : json()},
          {"grad_clip_norm", grad_clip_norm ? json(*grad_clip_norm) : json()},
          {"ensemble_members", ensemble_members},
          {"validation_samples", validation_samples},
          {"binarize_threshold", binarize_threshold},
          {"prior_mean", prior.mean},
          {"prior_std", prior.std},
          {"init_mu_std", head_init.mu_std},
          {"init_rho_mean", head_init.rho_mean},
          {"init_rho_std", head_init.rho_std},
          {"seed", seed},
          {"threads", threads}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "scheme") c.scheme = parse_scheme(v.get<std::string>());
      else if (key == "strategy") c.strategy = SamplingStrategy::parse(v.get<std::string>());
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "lr_min") c.lr_min = v.get<double>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "mc_samples") c.mc_samples = v.get<std::size_t>();
      else if (key == "kl_scale") c.kl_scale = v.is_null() ? std::nullopt : std::optional(v.get<double>());
      else if (key == "grad_clip_norm") {
        c.grad_clip_norm = v.is_null() ? std::nullopt : std::optional(v.get<double>());
      } else if (key == "ensemble_members") c.ensemble_members = v.get<std::size_t>();
      else if (key == "validation_samples") c.validation_samples = v.get<std::size_t>();
      else if (key == "binarize_threshold") c.binarize_threshold = v.get<double>();
      else if (key == "prior_mean") c.prior.mean = v.get<double>();
      else if (key == "prior_std") c.prior.std = v.get<double>();
      else if (key == "init_mu_std") c.head_init.mu_std = v.get<double>();
      else if (key == "init_rho_mean") c.head_init.rho_mean = v.get<double>();
      else if (key == "init_rho_std") c.head_init.rho_std = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "threads") c.threads = v.get<std::size_t>();
      else throw ConfigError("train config: unknown key '" + key + "'");
    } catch (const json::exception&) {
      throw ConfigError("train config: bad value for '" + key + "'");
    }
  }
  return c;
}

json TrainHistory::to_json() const {
  return {{"loss", loss}, {"val_dice", val_dice}, {"lr", lr}, {"best_epoch", best_epoch}};
}

TrainHistory TrainHistory::from_json(const json& j) {
  try {
    TrainHistory h;
    h.loss = j.at("loss").get<std::vector<double>>();
    h.val_dice = j.at("val_dice").get<std::vector<double>>();
    h.lr = j.at("lr").get<std::vector<double>>();
    h.best_epoch = j.at("best_epoch").get<std::size_t>();
    return h;
  } catch (const json::exception& e) {
    throw DataError(std::string("training history: ") + e.what());
  }
}

// ---- training -------------------------------------------------------------

Tensor stack_images(const MultiRaterDataset& data, const std::vector<std::size_t>& cases) {
  const std::size_t h = data.manifest.height, w = data.manifest.width;
  Tensor x = Tensor::zeros({cases.size(), 1, h, w});
  auto out = x.data();
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& img = data.cases.at(cases[i]).image;
    std::copy(img.begin(), img.end(), out.begin() + static_cast<long>(i * h * w));
  }
  return x;
}

double validation_dice(const PosteriorModel& posterior, const MultiRaterDataset& data,
                       const std::vector<std::size_t>& cases, std::size_t samples,
                       double threshold, std::uint64_t seed) {
  if (cases.empty()) throw DataError("validation_dice: no cases");
  SamplerConfig sc;
  sc.samples = posterior.scheme == Scheme::deterministic ? 1 : samples;
  sc.members = posterior.models.size();
  sc.seed = seed;
  const Tensor probs = mean_map(sample_predictive(posterior, stack_images(data, cases), sc));
  std::vector<double> scores;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto reference = case_consensus(data.cases[cases[i]]);
    for (std::size_t s = 0; s < reference.size(); ++s) {
      scores.push_back(dice(binarize(probs, i, threshold, s), reference[s]));
    }
  }
  return exact_mean(scores);
}

namespace {

struct RunResult {
  UNetModel model;
  std::optional<MeanFieldGaussianHead> head;
  TrainHistory history;
};

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

// One model trained from seed `seed`. Ensemble members are single runs of
// the deterministic network; `member` only matters for per_member targets.
RunResult train_run(const MultiRaterDataset& data, const UNetConfig& ucfg, const TrainConfig& tcfg,
                    Scheme scheme, std::uint64_t seed, std::size_t member,
                    const std::vector<std::vector<Mask>>& consensus, const TrainProgress& progress,
                    std::mutex& progress_mutex) {
  const auto train_idx = data.require_split(Split::train);
  const auto val_idx = data.require_split(Split::validation);
  const bool nl = scheme == Scheme::neural_linear;

  Rng init_rng = Rng::derive(seed, 0);
  RunResult run{UNetModel::build(ucfg, init_rng, !nl), std::nullopt, {}};
  if (nl) {
    run.head = MeanFieldGaussianHead::create(ucfg.head_features, ucfg.num_classes, init_rng,
                                             tcfg.prior, tcfg.head_init);
  }
  std::vector<Tensor> params;
  for (const auto& p : run.model.parameters()) params.push_back(p.value);
  if (nl) {
    for (const auto& p : run.head->parameters()) params.push_back(p);
  }
  AdamState adam = AdamState::for_parameters(params);

  const double pixels = static_cast<double>(data.manifest.height * data.manifest.width);
  const double kl_scale = tcfg.kl_scale.value_or(1.0 / (static_cast<double>(train_idx.size()) * pixels));

  RunResult best{run.model.clone(), nl ? std::optional(run.head->clone()) : std::nullopt, {}};
  double best_dice = -1.0;
  const std::uint64_t val_seed = mix_seed(seed ^ 0x76616c6964ULL);

  for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, tcfg.epochs, tcfg.learning_rate, tcfg.lr_min);
    Rng rng = Rng::derive(seed, epoch + 1);
    auto order = train_idx;
    shuffle(order, rng);

    std::vector<double> batch_loss;
    std::vector<double> batch_weight;
    for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + tcfg.batch_size);
      std::vector<std::size_t> batch(order.begin() + static_cast<long>(start),
                                     order.begin() + static_cast<long>(end));
      const Tensor x = stack_images(data, batch);
      LabelMap y(batch.size(), data.manifest.height, data.manifest.width);
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& c = data.cases[batch[b]];
        const auto labels = nested_labels(
            draw_training_target(c, consensus[batch[b]], tcfg.strategy, rng, member));
        std::copy(labels.begin(), labels.end(), y.labels.begin() + static_cast<long>(b * labels.size()));
      }
      for (auto& p : params) p.zero_grad();
      Graph g;
      Tensor loss = nl ? elbo_loss(g, run.model, *run.head, x, y, tcfg.mc_samples, kl_scale, rng)
                       : cross_entropy_loss(g, run.model, x, y, scheme == Scheme::mc_dropout, rng);
      g.backward(loss);
      if (tcfg.grad_clip_norm) clip_grad_norm(params, *tcfg.grad_clip_norm);
      adam_step(params, adam, lr);
      batch_loss.push_back(loss.item() * static_cast<double>(batch.size()));
      batch_weight.push_back(static_cast<double>(batch.size()));
    }
    const double epoch_loss = exact_sum(batch_loss) / exact_sum(batch_weight);

    PosteriorModel current;
    current.scheme = scheme == Scheme::deep_ensemble ? Scheme::deterministic : scheme;
    current.models = {run.model};
    current.head = run.head;
    const double vd = validation_dice(current, data, val_idx, tcfg.validation_samples,
                                      tcfg.binarize_threshold, val_seed);
    run.history.loss.push_back(epoch_loss);
    run.history.val_dice.push_back(vd);
    run.history.lr.push_back(lr);
    if (vd > best_dice) {
      best_dice = vd;
      run.history.best_epoch = epoch;
      best.model = run.model.clone();
      if (nl) best.head = run.head->clone();
    }
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(member, epoch, epoch_loss, vd);
    }
  }
  best.history = std::move(run.history);
  return best;
}

} // namespace

TrainedPosterior train(const MultiRaterDataset& data, const UNetConfig& ucfg,
                       const TrainConfig& tcfg, const TrainProgress& progress) {
  tcfg.validate();
  ucfg.validate();
  if (ucfg.num_classes != data.num_classes()) {
    throw ConfigError("model has " + std::to_string(ucfg.num_classes) + " classes, dataset needs " +
                      std::to_string(data.num_classes()));
  }
  if (ucfg.input_channels != 1) throw ConfigError("datasets are single-channel");
  const auto m = ucfg.spatial_multiple();
  if (data.manifest.height % m != 0 || data.manifest.width % m != 0) {
    throw ConfigError("image extents must be divisible by 2^depth = " + std::to_string(m));
  }
  data.require_split(Split::train);
  data.require_split(Split::validation);
  if (tcfg.strategy.kind == SamplingKind::per_expert && tcfg.strategy.rater >= data.manifest.num_raters) {
    throw ConfigError("per_expert rater " + std::to_string(tcfg.strategy.rater) + " but the dataset has " +
                      std::to_string(data.manifest.num_raters) + " raters");
  }

  std::vector<std::vector<Mask>> consensus;
  for (const auto& c : data.cases) consensus.push_back(case_consensus(c));

  const std::size_t runs = tcfg.scheme == Scheme::deep_ensemble ? tcfg.ensemble_members : 1;
  std::vector<std::optional<RunResult>> results(runs);
  std::mutex progress_mutex;
  auto run_one = [&](std::size_t j) {
    const std::uint64_t seed = runs == 1 ? tcfg.seed : Rng::derive(tcfg.seed, j).next_u64();
    results[j] = train_run(data, ucfg, tcfg, tcfg.scheme, seed, j, consensus, progress, progress_mutex);
  };

  const std::size_t workers = std::min(tcfg.threads, runs);
  if (workers <= 1) {
    for (std::size_t j = 0; j < runs; ++j) run_one(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t j = next++; j < runs; j = next++) run_one(j);
        } catch (...) {
          errors[w] = std::current_exception();
          next = runs;
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  TrainedPosterior out;
  out.posterior.scheme = tcfg.scheme;
  for (auto& r : results) {
    out.posterior.models.push_back(std::move(r->model));
    if (r->head) out.posterior.head = std::move(r->head);
    out.histories.push_back(std::move(r->history));
  }
  out.posterior.validate();
  return out;
}

// ---- artifacts ------------------------------------------------------------

namespace {

constexpr const char* kPosteriorFormat = "raterbayes-posterior";
constexpr int kPosteriorVersion = 1;

std::string numbered(const char* stem, std::size_t j, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03zu%s", stem, j, ext);
  return buf;
}

} // namespace

void save_posterior(const std::filesystem::path& dir, const TrainedPosterior& trained) {
  const auto& p = trained.posterior;
  p.validate();
  json members = json::array(), histories = json::array();
  for (std::size_t j = 0; j < p.models.size(); ++j) {
    Checkpoint ck{p.models[j].config(), p.models[j].parameters()};
    if (p.head) {
      for (auto& t : p.head->named_tensors()) ck.tensors.push_back(t);
    }
    const auto name = numbered("model", j, ".rbay");
    save_checkpoint(dir / name, ck);
    members.push_back(name);
  }
  for (std::size_t j = 0; j < trained.histories.size(); ++j) {
    const auto name = numbered("history", j, ".json");
    write_file_atomic(dir / name, trained.histories[j].to_json().dump(2) + "\n");
    histories.push_back(name);
  }
  json index = {{"format", kPosteriorFormat},
                {"version", kPosteriorVersion},
                {"scheme", to_string(p.scheme)},
                {"members", members},
                {"histories", histories}};
  if (p.head) index["prior"] = {{"mean", p.head->prior.mean}, {"std", p.head->prior.std}};
  write_file_atomic(dir / "posterior.json", index.dump(2) + "\n");
}

PosteriorModel load_posterior(const std::filesystem::path& dir) {
  json index;
  try {
    index = json::parse(read_file(dir / "posterior.json"));
    if (index.at("format").get<std::string>() != kPosteriorFormat ||
        index.at("version").get<int>() != kPosteriorVersion) {
      throw DataError(dir.string() + ": not a version " + std::to_string(kPosteriorVersion) +
                      " posterior");
    }
  } catch (const json::exception& e) {
    throw DataError(dir.string() + "/posterior.json: " + e.what());
  }
  PosteriorModel p;
  try {
    p.scheme = parse_scheme(index.at("scheme").get<std::string>());
  } catch (const ConfigError& e) {
    throw DataError(dir.string() + ": " + e.what());
  }
  const bool nl = p.scheme == Scheme::neural_linear;
  PriorConfig prior;
  if (nl && index.contains("prior")) {
    prior.mean = index["prior"].value("mean", 0.0);
    prior.std = index["prior"].value("std", 1.0);
  }
  for (const auto& name : index.at("members")) {
    const auto ck = load_checkpoint(dir / name.get<std::string>());
    p.models.push_back(UNetModel::from_parameters(ck.config, ck.tensors, !nl));
    if (nl) p.head = MeanFieldGaussianHead::from_tensors(ck.tensors, prior);
  }
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw DataError(dir.string() + ": " + e.what());
  }
  return p;
}

} // namespace raterbayes
