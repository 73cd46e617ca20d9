// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include "doctest.h"
#include "raterbayes/dataset.hpp"
#include "raterbayes/error.hpp"
#include "raterbayes/io.hpp"
#include "raterbayes/netpbm.hpp"
#include "raterbayes/stats.hpp"
#include "raterbayes/synth.hpp"
#include "scratch_dir.hpp"

using namespace raterbayes;
using raterbayes::testing::ScratchDir;

namespace {

constexpr double kPi = std::numbers::pi;

PhantomConfig small_config() {
  PhantomConfig c;
  c.size = 32;
  c.num_raters = 3;
  c.train = 3;
  c.validation = 2;
  c.test = 2;
  c.seed = 11;
  return c;
}

std::map<std::string, std::string> read_tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) {
      out[std::filesystem::relative(e.path(), root).string()] = read_file(e.path());
    }
  }
  return out;
}

// Extents of the foreground: {xmin, xmax, ymin, ymax}.
std::array<std::size_t, 4> bbox(const Mask& m) {
  std::array<std::size_t, 4> b{m.w, 0, m.h, 0};
  for (std::size_t y = 0; y < m.h; ++y) {
    for (std::size_t x = 0; x < m.w; ++x) {
      if (!m.at(y, x)) continue;
      b[0] = std::min(b[0], x);
      b[1] = std::max(b[1], x);
      b[2] = std::min(b[2], y);
      b[3] = std::max(b[3], y);
    }
  }
  return b;
}

bool subset(const Mask& inner, const Mask& outer) {
  for (std::size_t i = 0; i < inner.px.size(); ++i) {
    if (inner.px[i] && !outer.px[i]) return false;
  }
  return true;
}

} // namespace

TEST_CASE("netpbm round trips") {
  Rng rng(3);
  for (std::size_t w : {1u, 7u, 8u, 13u, 64u}) {
    Mask m(5, w);
    for (auto& v : m.px) v = rng.bernoulli(0.4) ? 1 : 0;
    CHECK(decode_mask(encode_pbm(m)) == m);
  }
  GrayImage g{3, 5, {}};
  for (std::size_t i = 0; i < 15; ++i) g.px.push_back(static_cast<std::uint8_t>(i * 17));
  const auto back = decode_pgm(encode_pgm(g));
  CHECK(back.h == 3);
  CHECK(back.w == 5);
  CHECK(back.px == g.px);
}

TEST_CASE("netpbm header comments and 8-bit masks") {
  const std::string pgm = std::string("P5\n# made by hand\n2 1\n# max\n255\n") + '\x00' + '\xff';
  const auto m = decode_mask(pgm);
  CHECK(m.h == 1);
  CHECK(m.w == 2);
  CHECK(m.px == std::vector<std::uint8_t>{0, 1});
  const auto g = decode_pgm(pgm);
  CHECK(g.px == std::vector<std::uint8_t>{0, 255});
  // maxval 1 graymaps are rescaled
  const std::string low = std::string("P5 2 1 1\n") + '\x01' + '\x00';
  CHECK(decode_pgm(low).px == std::vector<std::uint8_t>{255, 0});
}

TEST_CASE("netpbm rejects malformed input") {
  CHECK_THROWS_AS(decode_mask(std::string("P5 2 1 255\n") + '\x07' + '\x00'), DataError);
  CHECK_THROWS_AS(decode_mask("P5 2 2 255\n\x01"), DataError);
  CHECK_THROWS_AS(decode_mask("P3 1 1 255\n0"), DataError);
  CHECK_THROWS_AS(decode_pgm("P4 8 1\n"), DataError);
  CHECK_THROWS_AS(decode_pgm("P5 x 1 255\n"), DataError);
  CHECK_THROWS_AS(decode_pgm(""), DataError);
}

TEST_CASE("render_ellipse_mask") {
  SUBCASE("circle area") {
    const double r = 10.0;
    const auto m = render_ellipse_mask({32.0, 32.0}, {r, r}, 0.0, 64);
    CHECK(std::abs(static_cast<double>(m.count()) - kPi * r * r) / (kPi * r * r) < 0.03);
  }
  SUBCASE("out of frame") {
    CHECK(render_ellipse_mask({200.0, -50.0}, {10.0, 4.0}, 0.3, 64).count() == 0);
  }
  SUBCASE("quarter turn swaps extents") {
    const auto a = render_ellipse_mask({32.0, 32.0}, {14.0, 5.0}, 0.0, 64);
    const auto b = render_ellipse_mask({32.0, 32.0}, {14.0, 5.0}, kPi / 2.0, 64);
    const auto ba = bbox(a), bb = bbox(b);
    CHECK(ba[1] - ba[0] == bb[3] - bb[2]);
    CHECK(ba[3] - ba[2] == bb[1] - bb[0]);
    CHECK(ba[1] - ba[0] > ba[3] - ba[2]);
  }
  SUBCASE("axes must be positive") {
    CHECK_THROWS_AS(render_ellipse_mask({0.0, 0.0}, {0.0, 3.0}, 0.0, 8), ConfigError);
  }
}

TEST_CASE("radial mask of a plain disk matches the ellipse renderer") {
  RadialShape d{30.0, 33.0, 12.5, {}};
  CHECK(render_radial_mask(d, 64, 64) == render_ellipse_mask({30.0, 33.0}, {12.5, 12.5}, 0.0, 64));
}

TEST_CASE("phantom config") {
  PhantomConfig c;
  CHECK_NOTHROW(c.validate());
  const auto back = PhantomConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  const auto off = c.offsets();
  REQUIRE(off.size() == 4);
  CHECK(off[0] == -1.0);
  CHECK(off[1] == doctest::Approx(-1.0 / 3.0));
  CHECK(off[2] == doctest::Approx(1.0 / 3.0));
  CHECK(off[3] == 1.0);
  c.num_raters = 1;
  CHECK(c.offsets() == std::vector<double>{0.0});

  CHECK_THROWS_AS(PhantomConfig::from_json({{"sizes", 64}}), ConfigError);
  CHECK_THROWS_AS(PhantomConfig::from_json({{"size", "big"}}), ConfigError);
  CHECK_THROWS_AS(PhantomConfig::from_json({{"task", "liver"}}), ConfigError);

  auto bad = PhantomConfig{};
  bad.size = 48;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = PhantomConfig{};
  bad.num_raters = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = PhantomConfig{};
  bad.rater_jitter = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = PhantomConfig{};
  bad.rater_bias = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = PhantomConfig{};
  bad.rater_offsets = {1.0, 2.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("noiseless raters reproduce the truth") {
  for (auto task : {PhantomTask::vessel, PhantomTask::blob}) {
    PhantomConfig c;
    c.task = task;
    c.rater_bias = 0.0;
    c.rater_jitter = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      const auto pc = generate_case(c, i);
      const auto truth = truth_masks(pc);
      REQUIRE(pc.annotations.size() == c.num_raters);
      for (const auto& a : pc.annotations) CHECK(a.structures == truth);
    }
  }
}

TEST_CASE("vessel structures stay nested") {
  PhantomConfig c;
  c.rater_bias = 3.0;
  c.rater_jitter = 2.0;
  c.repeats_per_rater = 2;
  for (std::size_t i = 0; i < 30; ++i) {
    const auto pc = generate_case(c, i);
    const auto truth = truth_masks(pc);
    CHECK(subset(truth[1], truth[0]));
    // the unclipped true lumen is already inside the EEM
    CHECK(render_radial_mask(pc.truth[1], c.size, c.size) == truth[1]);
    CHECK(truth[1].count() > 0);
    for (const auto& a : pc.annotations) CHECK(subset(a.structures[1], a.structures[0]));
  }
}

TEST_CASE("rater bias widens the mask by the annulus area") {
  const RadialShape disk{32.0, 32.0, 15.0, {}};
  const double expected = kPi * (17.0 * 17.0 - 15.0 * 15.0);
  const double truth = static_cast<double>(render_radial_mask(disk, 64, 64).count());
  Rng rng(5);
  std::vector<double> areas;
  for (int i = 0; i < 200; ++i) {
    areas.push_back(static_cast<double>(render_radial_mask(rater_contour(disk, 2.0, 0.75, rng), 64, 64).count()));
  }
  const double excess = exact_mean(areas) - truth;
  CHECK(std::abs(excess - expected) / expected < 0.15);
}

TEST_CASE("rater jitter has the configured pointwise std") {
  const RadialShape disk{32.0, 32.0, 15.0, {}};
  Rng rng(8);
  const double jitter = 1.3;
  std::vector<double> at0, at1;
  for (int i = 0; i < 20000; ++i) {
    const auto r = rater_contour(disk, 0.0, jitter, rng);
    at0.push_back(r.radius(0.0) - 15.0);
    at1.push_back(r.radius(2.1) - 15.0);
  }
  CHECK(sample_std(at0) == doctest::Approx(jitter).epsilon(0.03));
  CHECK(sample_std(at1) == doctest::Approx(jitter).epsilon(0.03));
}

TEST_CASE("rater area spread grows with jitter") {
  std::vector<double> spread;
  for (double jitter : {0.5, 1.5, 3.0}) {
    PhantomConfig c;
    c.rater_bias = 0.0;
    c.rater_jitter = jitter;
    std::vector<double> stds;
    for (std::size_t i = 0; i < 20; ++i) {
      const auto pc = generate_case(c, i);
      std::vector<double> areas;
      for (const auto& a : pc.annotations) areas.push_back(static_cast<double>(a.structures[0].count()));
      stds.push_back(sample_std(areas));
    }
    spread.push_back(exact_mean(stds));
  }
  CHECK(spread[0] < spread[1]);
  CHECK(spread[1] < spread[2]);
}

TEST_CASE("images change only with the image stream") {
  PhantomConfig a;
  PhantomConfig b = a;
  b.rater_jitter = 2.5;
  b.num_raters = 2;
  CHECK(generate_case(a, 4).image.px == generate_case(b, 4).image.px);
  PhantomConfig c = a;
  c.seed = 99;
  CHECK(generate_case(a, 4).image.px != generate_case(c, 4).image.px);
}

TEST_CASE("vessel image contrast follows the structures") {
  PhantomConfig c;
  c.noise = 0.0;
  const auto pc = generate_case(c, 2);
  const auto t = truth_masks(pc);
  double lumen = 0, wall = 0, bg = 0;
  std::size_t nl = 0, nw = 0, nb = 0;
  for (std::size_t i = 0; i < t[0].px.size(); ++i) {
    const double v = pc.image.px[i];
    if (t[1].px[i]) { lumen += v; ++nl; }
    else if (t[0].px[i]) { wall += v; ++nw; }
    else { bg += v; ++nb; }
  }
  CHECK(lumen / nl < bg / nb);
  CHECK(bg / nb < wall / nw);
}

TEST_CASE("dataset generation is deterministic") {
  ScratchDir d1("synth_a"), d2("synth_b");
  const auto cfg = small_config();
  generate_dataset(cfg, d1.path());
  generate_dataset(cfg, d2.path());
  const auto t1 = read_tree(d1.path()), t2 = read_tree(d2.path());
  CHECK(t1.size() == 1 + cfg.num_cases() * (1 + 3 * 2));
  CHECK(t1 == t2);
}

TEST_CASE("generate then load round trip") {
  ScratchDir dir("synth_rt");
  auto cfg = small_config();
  cfg.repeats_per_rater = 2;
  generate_dataset(cfg, dir.path());
  const auto ds = load_dataset(dir.path() / "manifest.json");
  REQUIRE(ds.cases.size() == cfg.num_cases());
  CHECK(ds.num_classes() == 3);
  CHECK(ds.manifest.structures == std::vector<std::string>{"eem", "lumen"});
  CHECK(ds.indices(Split::train) == std::vector<std::size_t>{0, 1, 2});
  CHECK(ds.indices(Split::validation) == std::vector<std::size_t>{3, 4});
  CHECK(ds.indices(Split::test) == std::vector<std::size_t>{5, 6});
  for (std::size_t i = 0; i < ds.cases.size(); ++i) {
    const auto pc = generate_case(cfg, i);
    const auto& c = ds.cases[i];
    CHECK(c.id == pc.id);
    REQUIRE(c.annotations.size() == pc.annotations.size());
    for (std::size_t a = 0; a < c.annotations.size(); ++a) {
      CHECK(c.annotations[a].rater == pc.annotations[a].rater);
      CHECK(c.annotations[a].repeat == pc.annotations[a].repeat);
      CHECK(c.annotations[a].structures == pc.annotations[a].structures);
    }
    double worst = 0.0;
    for (std::size_t p = 0; p < c.image.size(); ++p) {
      CHECK(c.image[p] >= 0.0);
      CHECK(c.image[p] <= 1.0);
      worst = std::max(worst, std::abs(c.image[p] - pc.image.px[p] / 255.0));
    }
    CHECK(worst <= 1.0 / 255.0);
    const auto truth = RadialShape::from_json(c.truth.at("lumen"));
    CHECK(render_radial_mask(truth, 32, 32) == render_radial_mask(pc.truth[1], 32, 32));
  }
  const auto e = ds.cases[0].structure_ensemble(1);
  CHECK(e.size() == 6);
  CHECK(e.source == EnsembleSource::raters);
  CHECK(e.image_id == ds.cases[0].id);
}

TEST_CASE("loader errors name the case") {
  ScratchDir dir("synth_err");
  auto cfg = small_config();
  generate_dataset(cfg, dir.path());
  const auto manifest = dir.path() / "manifest.json";

  SUBCASE("missing file") {
    std::filesystem::remove(dir.path() / "annotations" / "case0003" / "lumen_r1.pbm");
    try {
      load_dataset(manifest);
      FAIL("expected an error");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("case0003") != std::string::npos);
    }
  }
  SUBCASE("non-binary mask") {
    write_file_atomic(dir.path() / "annotations" / "case0001" / "eem_r0.pbm",
                      "P5 32 32 255\n" + std::string(32 * 32, '\x05'));
    try {
      load_dataset(manifest);
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("case0001") != std::string::npos);
      CHECK(std::string(e.what()).find("non-binary") != std::string::npos);
    }
  }
  SUBCASE("extent mismatch") {
    write_pbm(dir.path() / "annotations" / "case0002" / "eem_r2.pbm", Mask(16, 32));
    try {
      load_dataset(manifest);
      FAIL("expected an error");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("case0002") != std::string::npos);
    }
  }
  SUBCASE("bad manifest") {
    write_file_atomic(manifest, "{ not json");
    CHECK_THROWS_AS(load_dataset(manifest), DataError);
    write_file_atomic(manifest, R"({"format":"raterbayes-dataset","version":2})");
    CHECK_THROWS_AS(load_dataset(manifest), DataError);
  }
}

TEST_CASE("empty split is a data error") {
  ScratchDir dir("synth_split");
  auto cfg = small_config();
  cfg.validation = 0;
  generate_dataset(cfg, dir.path());
  const auto ds = load_dataset(dir.path() / "manifest.json");
  CHECK(ds.indices(Split::validation).empty());
  CHECK_THROWS_AS(ds.require_split(Split::validation), DataError);
  CHECK(ds.require_split(Split::train).size() == 3);
}

TEST_CASE("unwritable output path is an i/o error") {
  ScratchDir dir("synth_ro");
  write_file_atomic(dir.path() / "blocker", "x");
  CHECK_THROWS_AS(generate_dataset(small_config(), dir.path() / "blocker" / "ds"), IoError);
}

TEST_CASE("nested_labels") {
  Mask outer(1, 4, {1, 1, 1, 0});
  Mask inner(1, 4, {0, 1, 0, 1});
  CHECK(nested_labels({outer, inner}) == std::vector<std::int32_t>{1, 2, 1, 0});
  CHECK(nested_labels({outer}) == std::vector<std::int32_t>{1, 1, 1, 0});
  CHECK_THROWS_AS(nested_labels({outer, Mask(2, 2)}), DimensionError);
}
