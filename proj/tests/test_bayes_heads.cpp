// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "raterbayes/bayes_heads.hpp"
#include "raterbayes/checkpoint.hpp"
#include "raterbayes/error.hpp"

using namespace raterbayes;
using raterbayes::testing::check_gradients;
using raterbayes::testing::random_tensor;
using raterbayes::testing::weighted_sum;

namespace {

constexpr double kPi = 3.14159265358979323846;

MeanFieldGaussianHead fixed_head(std::vector<double> mu, std::vector<double> rho,
                                 std::vector<double> bias, std::size_t in, std::size_t out) {
  MeanFieldGaussianHead h;
  h.mu = Tensor({in, out}, std::move(mu), true);
  h.rho = Tensor({in, out}, std::move(rho), true);
  h.bias = Tensor({out}, std::move(bias), true);
  return h;
}

// Largest double rho with softplus(rho) == 1 exactly, found by bisection on
// the bit pattern.
double rho_for_unit_sigma() {
  double lo = 0.0, hi = 2.0;
  for (int i = 0; i < 200 && softplus_sigma(lo) != 1.0; ++i) {
    const double mid = 0.5 * (lo + hi);
    (softplus_sigma(mid) < 1.0 ? lo : hi) = mid;
  }
  double r = lo;
  while (softplus_sigma(r) < 1.0) r = std::nextafter(r, 2.0);
  return r;
}

// log N(x; m, s^2)
double log_normal(double x, double m, double s) {
  const double d = (x - m) / s;
  return -0.5 * d * d - std::log(s) - 0.5 * std::log(2.0 * kPi);
}

// E_q[ln q(w) - ln p(w)] by sampling w ~ q.
double kl_monte_carlo(const MeanFieldGaussianHead& h, std::size_t draws, Rng& rng) {
  double total = 0.0;
  const auto mu = h.mu.data();
  const auto rho = h.rho.data();
  for (std::size_t k = 0; k < mu.size(); ++k) {
    const double s = softplus_sigma(rho[k]);
    double acc = 0.0;
    for (std::size_t d = 0; d < draws; ++d) {
      const double w = mu[k] + s * rng.normal();
      acc += log_normal(w, mu[k], s) - log_normal(w, h.prior.mean, h.prior.std);
    }
    total += acc / static_cast<double>(draws);
  }
  return total;
}

UNetConfig tiny_config() {
  UNetConfig c;
  c.depth = 1;
  c.base_channels = 4;
  c.head_features = 5;
  c.num_classes = 2;
  return c;
}

Tensor image(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor({n, 1, 8, 8}, rng, false, 0.0, 1.0);
}

} // namespace

TEST_CASE("softplus_sigma") {
  CHECK(softplus_sigma(0.0) == doctest::Approx(0.693147180559945).epsilon(1e-14));
  CHECK(softplus_sigma(-4.0) == doctest::Approx(0.0181499279178).epsilon(1e-10));
  CHECK(std::abs(softplus_sigma(100.0) - 100.0) < 1e-12);
  CHECK(std::isfinite(softplus_sigma(1e6)));
  CHECK(softplus_sigma(-50.0) > 0.0);
}

TEST_CASE("kl_mean_field closed form") {
  Graph g;
  const double r1 = rho_for_unit_sigma();
  REQUIRE(softplus_sigma(r1) == 1.0);

  SUBCASE("posterior equal to prior gives exactly zero") {
    auto h = fixed_head({0.0, 0.0, 0.0, 0.0}, {r1, r1, r1, r1}, {0.0, 0.0}, 2, 2);
    CHECK(kl_mean_field(g, h).item() == 0.0);
  }
  SUBCASE("unit shift of the mean costs one half") {
    auto h = fixed_head({1.0}, {r1}, {0.0}, 1, 1);
    CHECK(kl_mean_field(g, h).item() == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("non-negative and zero only at the prior") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      auto h = MeanFieldGaussianHead::create(3, 2, rng, {}, {1.0, 0.0, 2.0});
      CHECK(kl_mean_field(g, h).item() > 0.0);
    }
  }
  SUBCASE("non-standard prior") {
    // KL[N(2, 0.5^2) || N(1, 2^2)] = ln 4 + (0.25 + 1) / 8 - 1/2
    double lo = -3.0, hi = 3.0;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (softplus_sigma(mid) < 0.5 ? lo : hi) = mid;
    }
    auto h = fixed_head({2.0}, {hi}, {0.0}, 1, 1);
    h.prior = {1.0, 2.0};
    CHECK(kl_mean_field(g, h).item() ==
          doctest::Approx(std::log(4.0) + 1.25 / 8.0 - 0.5).epsilon(1e-12));
  }
}

TEST_CASE("kl_mean_field agrees with a Monte Carlo estimate") {
  Rng rng(17);
  Graph g(Graph::Mode::inference);
  for (int trial = 0; trial < 3; ++trial) {
    auto h = MeanFieldGaussianHead::create(2, 2, rng, {}, {0.8, -0.5, 1.0});
    const double closed = kl_mean_field(g, h).item();
    const double mc = kl_monte_carlo(h, 1'000'000, rng);
    CHECK(std::abs(closed - mc) < 1e-2);
  }
}

TEST_CASE("kl_mean_field gradients") {
  Rng rng(3);
  auto h = MeanFieldGaussianHead::create(3, 2, rng, {0.3, 1.5}, {0.5, -1.0, 1.0});
  auto loss = [&](Graph& g) { return kl_mean_field(g, h); };
  auto r = check_gradients(loss, {h.mu, h.rho}, 1000, rng);
  CHECK(r.checked == 12);
  CHECK(r.failures == 0);
}

TEST_CASE("local_reparam_forward degenerate cases") {
  Rng rng(5);
  auto z = random_tensor({2, 3, 4, 5}, rng, false);
  auto h = MeanFieldGaussianHead::create(3, 2, rng);
  for (auto& v : h.bias.data()) v = rng.normal();

  SUBCASE("vanishing sigma equals the mean 1x1 conv") {
    for (auto& v : h.rho.data()) v = -40.0;
    Tensor kernel = Tensor::zeros({2, 3, 1, 1});
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) kernel.data()[j * 3 + i] = h.mu.data()[i * 2 + j];
    Graph g(Graph::Mode::inference);
    auto ref = conv2d(g, z, kernel, h.bias);
    auto out = local_reparam_forward(g, z, h, rng);
    auto mean = mean_head_forward(g, z, h);
    for (std::size_t k = 0; k < ref.numel(); ++k) {
      CHECK(std::abs(out.data()[k] - ref.data()[k]) < 1e-12);
      CHECK(std::abs(mean.data()[k] - ref.data()[k]) < 1e-12);
    }
  }
  SUBCASE("zero features give the bias") {
    Graph g(Graph::Mode::inference);
    auto out = local_reparam_forward(g, Tensor::zeros({1, 3, 2, 2}), h, rng);
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t p = 0; p < 4; ++p) CHECK(out.data()[j * 4 + p] == h.bias.data()[j]);
  }
  SUBCASE("channel mismatch") {
    Graph g;
    CHECK_THROWS_AS(local_reparam_forward(g, Tensor::zeros({1, 4, 2, 2}), h, rng),
                    DimensionError);
  }
  SUBCASE("noise is fresh per pixel, class and call") {
    auto flat = Tensor::full({1, 3, 4, 4}, 1.0);
    Graph g(Graph::Mode::inference);
    auto a = local_reparam_forward(g, flat, h, rng);
    auto b = local_reparam_forward(g, flat, h, rng);
    CHECK(a.data()[0] != a.data()[1]);
    CHECK(a.data()[0] != b.data()[0]);
  }
}

TEST_CASE("local reparameterization moments match weight-space sampling") {
  // I = 2, O = 2. Every pixel of a call carries the same z, so one call
  // yields 64 independent activation draws; the oracle draws whole weight
  // matrices and applies them as a 1x1 conv.
  auto h = fixed_head({0.8, -0.3, 0.5, 1.1}, {-1.0, -0.5, -2.0, 0.0}, {0.2, -0.1}, 2, 2);
  const double z0 = 0.7, z1 = -1.3;
  Tensor z = Tensor::zeros({1, 2, 8, 8});
  for (std::size_t p = 0; p < 64; ++p) {
    z.data()[p] = z0;
    z.data()[64 + p] = z1;
  }
  Rng rng(23);
  Graph g(Graph::Mode::inference);
  const std::size_t calls = 100'000;
  double s1[2] = {0, 0}, s2[2] = {0, 0};
  for (std::size_t c = 0; c < calls; ++c) {
    auto y = local_reparam_forward(g, z, h, rng);
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t p = 0; p < 64; ++p) {
        const double v = y.data()[j * 64 + p];
        s1[j] += v;
        s2[j] += v * v;
      }
  }
  const double n_lr = static_cast<double>(calls) * 64.0;

  Rng wrng(29);
  const std::size_t draws = 1'000'000;
  double o1[2] = {0, 0}, o2[2] = {0, 0};
  for (std::size_t d = 0; d < draws; ++d) {
    double w[4];
    for (std::size_t k = 0; k < 4; ++k) {
      w[k] = h.mu.data()[k] + softplus_sigma(h.rho.data()[k]) * wrng.normal();
    }
    for (std::size_t j = 0; j < 2; ++j) {
      const double v = z0 * w[0 * 2 + j] + z1 * w[1 * 2 + j] + h.bias.data()[j];
      o1[j] += v;
      o2[j] += v * v;
    }
  }
  for (std::size_t j = 0; j < 2; ++j) {
    const double m = s1[j] / n_lr, var = s2[j] / n_lr - m * m;
    const double om = o1[j] / static_cast<double>(draws);
    const double ovar = o2[j] / static_cast<double>(draws) - om * om;
    CHECK(std::abs(m - om) <= 0.01 * std::abs(om));
    CHECK(std::abs(var - ovar) <= 0.01 * ovar);
  }
}

TEST_CASE("local_reparam_forward gradients with frozen noise") {
  Rng rng(31);
  auto z = random_tensor({2, 3, 3, 4}, rng);
  auto h = MeanFieldGaussianHead::create(3, 2, rng, {}, {0.5, -1.0, 0.5});
  auto w = random_tensor({2, 2, 3, 4}, rng, false);
  auto loss = [&](Graph& g) {
    Rng noise(99);
    return weighted_sum(g, local_reparam_forward(g, z, h, noise), w);
  };
  auto r = check_gradients(loss, {z, h.mu, h.rho, h.bias}, 1000, rng);
  CHECK(r.checked == z.numel() + 14);
  CHECK(r.failures == 0);

  auto mean_loss = [&](Graph& g) { return weighted_sum(g, mean_head_forward(g, z, h), w); };
  CHECK(check_gradients(mean_loss, {z, h.mu, h.bias}, 1000, rng).failures == 0);
}

TEST_CASE("gaussian head initialisation and serialisation") {
  Rng rng(2);
  auto h = MeanFieldGaussianHead::create(64, 2, rng);
  CHECK(h.mu.shape() == Shape{64, 2});
  double mu_sq = 0.0, rho_sum = 0.0;
  for (double v : h.mu.data()) mu_sq += v * v;
  for (double v : h.rho.data()) rho_sum += v;
  CHECK(std::sqrt(mu_sq / 128.0) == doctest::Approx(0.05).epsilon(0.2));
  CHECK(rho_sum / 128.0 == doctest::Approx(-4.0).epsilon(0.01));
  for (double v : h.rho.data()) CHECK(softplus_sigma(v) > 0.0);
  for (double v : h.bias.data()) CHECK(v == 0.0);

  auto named = h.named_tensors();
  CHECK(named[0].name == "head.mu");
  CHECK(named[1].name == "head.rho");
  CHECK(named[2].name == "head.bias");
  Checkpoint ckpt{tiny_config(), named};
  auto back = MeanFieldGaussianHead::from_tensors(decode_checkpoint(encode_checkpoint(ckpt)).tensors);
  CHECK(std::equal(back.rho.data().begin(), back.rho.data().end(), h.rho.data().begin()));
  named.pop_back();
  CHECK_THROWS_AS(MeanFieldGaussianHead::from_tensors(named), DataError);
  CHECK_THROWS_AS(MeanFieldGaussianHead::create(4, 2, rng, {0.0, 0.0}), ConfigError);
}

TEST_CASE("sample_predictive") {
  Rng init(8);
  const auto cfg_model = tiny_config();
  auto x = image(2, 3);
  SamplerConfig sc;
  sc.samples = 1;
  sc.members = 1;

  SUBCASE("neural linear with vanishing sigma equals the mean head") {
    PosteriorModel post{Scheme::neural_linear, {UNetModel::build(cfg_model, init, false)}, {}};
    post.head = MeanFieldGaussianHead::create(5, 2, init);
    for (auto& v : post.head->rho.data()) v = -40.0;
    Graph g(Graph::Mode::inference);
    Rng unused(0);
    auto feats = post.models[0].forward_features(g, x, false, unused);
    auto ref = softmax_channels(g, mean_head_forward(g, feats, *post.head));
    for (auto mode : {HeadSampling::weights, HeadSampling::activations}) {
      sc.head_sampling = mode;
      auto maps = sample_predictive(post, x, sc);
      REQUIRE(maps.size() == 1);
      for (std::size_t k = 0; k < ref.numel(); ++k) {
        CHECK(std::abs(maps[0].data()[k] - ref.data()[k]) < 1e-12);
      }
    }
    // sigma underflows to exactly zero: every pass is bit identical.
    for (auto& v : post.head->rho.data()) v = -1000.0;
    sc.samples = 5;
    auto maps = sample_predictive(post, x, sc);
    for (const auto& m : maps) {
      CHECK(std::equal(m.data().begin(), m.data().end(), maps[0].data().begin()));
    }
  }

  SUBCASE("dropout at rate zero equals the deterministic forward") {
    auto c = cfg_model;
    c.dropout_rate = 0.0;
    auto model = UNetModel::build(c, init);
    Graph g(Graph::Mode::inference);
    Rng unused(0);
    auto ref = softmax_channels(g, model.forward_logits(g, x, false, unused));
    sc.samples = 4;
    auto maps = sample_predictive({Scheme::mc_dropout, {model}, {}}, x, sc);
    REQUIRE(maps.size() == 4);
    for (const auto& m : maps) {
      CHECK(std::equal(m.data().begin(), m.data().end(), ref.data().begin()));
    }
  }

  SUBCASE("stochastic schemes: mean map is a distribution, samples vary") {
    sc.samples = 100;
    auto model = UNetModel::build(cfg_model, init);
    PosteriorModel nl{Scheme::neural_linear, {UNetModel::build(cfg_model, init, false)}, {}};
    nl.head = MeanFieldGaussianHead::create(5, 2, init, {}, {0.5, -1.0, 0.05});
    for (const auto& post : {PosteriorModel{Scheme::mc_dropout, {model}, {}}, nl}) {
      auto maps = sample_predictive(post, x, sc);
      REQUIRE(maps.size() == 100);
      auto mean = mean_map(maps);
      const std::size_t pix = 64;
      std::size_t varying = 0;
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t p = 0; p < pix; ++p) {
          const double p0 = mean.data()[(n * 2) * pix + p];
          const double p1 = mean.data()[(n * 2 + 1) * pix + p];
          CHECK(p0 >= 0.0);
          CHECK(p1 <= 1.0);
          CHECK(std::abs(p0 + p1 - 1.0) < 1e-12);
          std::vector<double> v;
          for (const auto& m : maps) v.push_back(m.data()[(n * 2 + 1) * pix + p]);
          const double mu = std::accumulate(v.begin(), v.end(), 0.0) / 100.0;
          double var = 0.0;
          for (double e : v) var += (e - mu) * (e - mu);
          varying += var > 0.0;
        }
      CHECK(static_cast<double>(varying) >= 0.01 * 128.0);
    }
  }

  SUBCASE("each pass owns its stream") {
    // Pass t depends only on (seed, t): a shorter run is a prefix of a longer one.
    auto model = UNetModel::build(cfg_model, init);
    PosteriorModel post{Scheme::mc_dropout, {model}, {}};
    sc.samples = 6;
    auto all = sample_predictive(post, x, sc);
    sc.samples = 3;
    auto prefix = sample_predictive(post, x, sc);
    for (std::size_t t = 0; t < 3; ++t) {
      CHECK(std::equal(all[t].data().begin(), all[t].data().end(), prefix[t].data().begin()));
    }
    CHECK(!std::equal(all[0].data().begin(), all[0].data().end(), all[1].data().begin()));
  }

  SUBCASE("scheme and model mismatches") {
    auto with_head = UNetModel::build(cfg_model, init);
    auto without = UNetModel::build(cfg_model, init, false);
    CHECK_THROWS_AS(sample_predictive({Scheme::neural_linear, {with_head}, {}}, x, sc),
                    ConfigError);
    CHECK_THROWS_AS(sample_predictive({Scheme::mc_dropout, {without}, {}}, x, sc), ConfigError);
    CHECK_THROWS_AS(sample_predictive({Scheme::mc_dropout, {with_head, with_head}, {}}, x, sc),
                    ConfigError);
    sc.members = 3;
    CHECK_THROWS_AS(sample_predictive({Scheme::deep_ensemble, {with_head}, {}}, x, sc),
                    ConfigError);
    sc.samples = 0;
    CHECK_THROWS_AS(sample_predictive({Scheme::mc_dropout, {with_head}, {}}, x, sc),
                    ConfigError);
  }
}

TEST_CASE("ensemble_predict") {
  const auto c = tiny_config();
  std::vector<UNetModel> members;
  for (std::uint64_t s = 0; s < 3; ++s) {
    Rng r = Rng::derive(100, s);
    members.push_back(UNetModel::build(c, r));
  }
  auto x = image(2, 7);

  SUBCASE("single member") {
    auto out = ensemble_predict({members[0]}, x);
    CHECK(std::equal(out.mean.data().begin(), out.mean.data().end(),
                     out.members[0].data().begin()));
  }
  SUBCASE("copies of one member have zero spread") {
    auto out = ensemble_predict({members[1], members[1], members[1]}, x);
    for (std::size_t k = 0; k < out.mean.numel(); ++k) {
      CHECK(out.members[0].data()[k] == out.members[1].data()[k]);
      CHECK(out.members[0].data()[k] == out.members[2].data()[k]);
      CHECK(std::abs(out.mean.data()[k] - out.members[0].data()[k]) <= 1e-15);
    }
  }
  SUBCASE("mean equals the elementwise average and ignores member order") {
    auto out = ensemble_predict(members, x);
    for (std::size_t k = 0; k < out.mean.numel(); ++k) {
      const double avg =
          (out.members[0].data()[k] + out.members[1].data()[k] + out.members[2].data()[k]) / 3.0;
      CHECK(std::abs(out.mean.data()[k] - avg) < 1e-12);
    }
    auto rev = ensemble_predict({members[2], members[0], members[1]}, x);
    CHECK(std::equal(out.mean.data().begin(), out.mean.data().end(), rev.mean.data().begin()));
  }
  SUBCASE("heterogeneous configurations") {
    auto other = c;
    other.base_channels = 2;
    Rng r(1);
    CHECK_THROWS_AS(ensemble_predict({members[0], UNetModel::build(other, r)}, x), ConfigError);
  }
}

TEST_CASE("binarize") {
  Tensor half = Tensor::full({1, 2, 3, 3}, 0.5);
  CHECK(binarize(half, 0, 0.5).count() == 0);

  Tensor sure = Tensor::zeros({1, 2, 2, 2});
  for (std::size_t p = 0; p < 4; ++p) sure.data()[4 + p] = 1.0;
  CHECK(binarize(sure, 0, 0.5).count() == 4);

  Rng rng(6);
  Tensor probs = Tensor::zeros({2, 2, 5, 5});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < 25; ++p) {
      const double q = rng.uniform();
      probs.data()[(n * 2) * 25 + p] = 1.0 - q;
      probs.data()[(n * 2 + 1) * 25 + p] = q;
    }
  for (double t : {0.1, 0.5, 0.9}) {
    auto m = binarize(probs, 1, t);
    for (std::size_t p = 0; p < 25; ++p) CHECK((m.px[p] == 1) == (probs.data()[75 + p] > t));
  }

  SUBCASE("nested structures") {
    // classes: background, wall, lumen; structure 0 = wall or lumen, 1 = lumen
    Tensor p3({1, 3, 1, 3}, {0.6, 0.2, 0.1, 0.3, 0.3, 0.2, 0.1, 0.5, 0.7});
    CHECK(binarize(p3, 0, 0.5).px == std::vector<std::uint8_t>{0, 1, 1});
    CHECK(binarize(p3, 0, 0.5, 1).px == std::vector<std::uint8_t>{0, 0, 1});
    CHECK_THROWS_AS(binarize(p3, 0, 0.5, 2), ConfigError);
  }
  CHECK_THROWS_AS(binarize(half, 0, 1.0), ConfigError);
  CHECK_THROWS_AS(binarize(half, 0, 0.0), ConfigError);
}

TEST_CASE("weight_sample_forward gradients match central differences") {
  Rng rng(61);
  MeanFieldGaussianHead head;
  head.mu = random_tensor({5, 3}, rng);
  head.rho = random_tensor({5, 3}, rng, true, -2.0, 0.5);
  head.bias = random_tensor({3}, rng);
  auto feat = random_tensor({2, 5, 3, 3}, rng);
  auto w = random_tensor({2, 3, 3, 3}, rng, false);
  auto loss = [&](Graph& g) {
    Rng noise(62);
    return weighted_sum(g, weight_sample_forward(g, feat, head, noise), w);
  };
  const auto r = check_gradients(loss, {feat, head.mu, head.rho, head.bias}, 200, rng);
  CHECK(r.checked == 2 * 5 * 9 + 15 + 15 + 3);  // every coordinate
  CHECK(r.failures == 0);

  // A head that does not require gradients records nothing for the draw.
  MeanFieldGaussianHead fixed = head.clone();
  fixed.mu.set_requires_grad(false);
  fixed.rho.set_requires_grad(false);
  Graph g;
  Rng noise(63);
  weight_sample_forward(g, feat, fixed, noise);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.op_name(i) != "weight_sample");
}
