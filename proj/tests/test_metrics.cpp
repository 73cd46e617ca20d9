// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "raterbayes/error.hpp"
#include "raterbayes/metrics.hpp"
#include "raterbayes/rng.hpp"
#include "raterbayes/stats.hpp"

using namespace raterbayes;

namespace {

Mask from_rows(std::initializer_list<const char*> rows) {
  std::vector<std::uint8_t> px;
  std::size_t w = 0;
  for (const char* r : rows) {
    w = 0;
    for (const char* c = r; *c; ++c, ++w) px.push_back(*c == '#' ? 1 : 0);
  }
  return Mask(rows.size(), w, px);
}

Mask random_mask(std::size_t h, std::size_t w, double p, Rng& rng) {
  Mask m(h, w);
  for (auto& v : m.px) v = rng.bernoulli(p) ? 1 : 0;
  return m;
}

MaskEnsemble random_ensemble(std::size_t n, Rng& rng, EnsembleSource src) {
  MaskEnsemble e;
  e.source = src;
  const double p = rng.uniform(0.05, 0.6);
  for (std::size_t i = 0; i < n; ++i) e.masks.push_back(random_mask(8, 8, p, rng));
  return e;
}

// Pixel-by-pixel Jaccard distance.
double naive_distance(const Mask& a, const Mask& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t y = 0; y < a.h; ++y)
    for (std::size_t x = 0; x < a.w; ++x) {
      inter += a.at(y, x) && b.at(y, x);
      uni += a.at(y, x) || b.at(y, x);
    }
  return uni == 0 ? 0.0 : 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

double naive_pair_mean(const MaskEnsemble& a, const MaskEnsemble& b, bool skip_diagonal) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      if (!(skip_diagonal && i == j)) d.push_back(naive_distance(a.masks[i], b.masks[j]));
  return exact_sum(d) / static_cast<double>(d.size());
}

} // namespace

TEST_CASE("dice and iou") {
  auto a = from_rows({"##..", "##..", "...."});
  auto b = from_rows({".##.", ".##.", "...."});
  CHECK(dice(a, a) == 1.0);
  CHECK(iou(a, a) == 1.0);
  CHECK(dice(a, b) == 0.5);                 // |A| = |B| = 4, |A n B| = 2
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));  // 2 / 6
  auto c = from_rows({"....", "....", "..##"});
  CHECK(dice(a, c) == 0.0);
  CHECK(iou(a, c) == 0.0);
  Mask empty(3, 4);
  CHECK(dice(empty, empty) == 1.0);
  CHECK(iou(empty, empty) == 1.0);
  CHECK(iou_distance(empty, empty) == 0.0);
  CHECK(dice(a, empty) == 0.0);
  CHECK_THROWS_AS(dice(a, Mask(4, 3)), DimensionError);
  CHECK_THROWS_AS(iou(a, Mask(3, 5)), DimensionError);
  CHECK_THROWS_AS(Mask(1, 2, {0, 2}), DataError);
}

TEST_CASE("iou distance is a semimetric on random masks") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    auto a = random_mask(6, 7, rng.uniform(), rng);
    auto b = random_mask(6, 7, rng.uniform(), rng);
    const double d = iou_distance(a, b);
    CHECK(d == iou_distance(b, a));
    CHECK(d >= 0.0);
    CHECK((d == 0.0) == (a == b));
    CHECK(iou_distance(a, a) == 0.0);
  }
}

TEST_CASE("ged on a hand-computed 2x2 example") {
  MaskEnsemble s{{from_rows({"#.", ".."}), from_rows({"##", ".."})}, EnsembleSource::predictive, "x"};
  MaskEnsemble y{{from_rows({"#.", ".."}), from_rows({"..", ".#"})}, EnsembleSource::raters, "x"};
  auto r = ged(s, y);
  // cross: d(S1,Y1) = 0, d(S1,Y2) = 1, d(S2,Y1) = 1/2, d(S2,Y2) = 1
  CHECK(r.d_cross == 0.625);
  CHECK(r.d_pred == 0.25);           // (0 + 1/2 + 1/2 + 0) / 4
  CHECK(r.d_raters == 0.5);          // (0 + 1 + 1 + 0) / 4
  CHECK(r.ged == 0.5);
  CHECK(r.d_pred_distinct == 0.5);
  CHECK(r.d_raters_distinct == 1.0);
  CHECK(r.ged_distinct == -0.25);
  CHECK(r.samples == 2);
  CHECK(r.raters == 2);
}

TEST_CASE("ged matches a naive double loop and is permutation invariant") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t t = 2 + rng.index(7), rr = 2 + rng.index(7);
    auto s = random_ensemble(t, rng, EnsembleSource::predictive);
    auto y = random_ensemble(rr, rng, EnsembleSource::raters);
    auto r = ged(s, y);
    const double cross = naive_pair_mean(s, y, false);
    const double ss = naive_pair_mean(s, s, false);
    const double yy = naive_pair_mean(y, y, false);
    CHECK(r.d_cross == cross);
    CHECK(r.d_pred == ss);
    CHECK(r.d_raters == yy);
    CHECK(r.ged == 2.0 * cross - ss - yy);
    CHECK(r.d_pred_distinct == naive_pair_mean(s, s, true));
    CHECK(r.d_raters_distinct == naive_pair_mean(y, y, true));
    for (double v : {r.d_cross, r.d_pred, r.d_raters}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }

    CHECK(ged(s, s).ged == 0.0);
    std::shuffle(s.masks.begin(), s.masks.end(), rng.engine());
    std::shuffle(y.masks.begin(), y.masks.end(), rng.engine());
    auto p = ged(s, y);
    CHECK(p.ged == r.ged);
    CHECK(p.d_cross == r.d_cross);
  }
}

TEST_CASE("ged input contract") {
  Rng rng(3);
  auto two = random_ensemble(2, rng, EnsembleSource::raters);
  auto one = random_ensemble(1, rng, EnsembleSource::predictive);
  CHECK_THROWS_AS(ged(one, two), UsageError);
  CHECK_THROWS_AS(ged(two, one), UsageError);
  MaskEnsemble ragged{{Mask(8, 8), Mask(4, 4)}, EnsembleSource::predictive, "r"};
  CHECK_THROWS_AS(ged(ragged, two), DimensionError);
}

TEST_CASE("dice_distribution") {
  auto ref = from_rows({"##..", "##..", "...."});
  MaskEnsemble same{{ref, ref, ref}, EnsembleSource::predictive, "a"};
  auto s = dice_distribution(same, ref);
  CHECK(s.mean == 1.0);
  CHECK(s.std == 0.0);

  MaskEnsemble single{{from_rows({"#...", "....", "...."})}, EnsembleSource::predictive, "b"};
  CHECK(dice_distribution(single, ref).std == 0.0);

  MaskEnsemble three{{from_rows({"##..", "##..", "...."}), from_rows({".##.", ".##.", "...."}),
                      from_rows({"#...", "....", "...."})},
                     EnsembleSource::raters, "c"};
  auto d = dice_distribution(three, ref);
  // per mask: 1, 2*2/8 = 0.5, 2*1/5 = 0.4
  REQUIRE(d.values.size() == 3);
  CHECK(d.values[0] == 1.0);
  CHECK(d.values[1] == 0.5);
  CHECK(d.values[2] == 0.4);
  CHECK(d.mean == doctest::Approx(1.9 / 3.0).epsilon(1e-15));
  const double m = 1.9 / 3.0;
  const double var = ((1 - m) * (1 - m) + (0.5 - m) * (0.5 - m) + (0.4 - m) * (0.4 - m)) / 2.0;
  CHECK(d.std == doctest::Approx(std::sqrt(var)).epsilon(1e-14));
  CHECK_THROWS_AS(dice_distribution(three, Mask(2, 2)), DimensionError);
}
